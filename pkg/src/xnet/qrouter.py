"""Tabular Q-learning routing agent.

One Q-table per destination over (node, outgoing-arc) pairs, trained with a
cost-minimizing update on the weighted link cost. Episodes run round-robin
over sources with epsilon decaying linearly to zero; greedy choices break
ties toward the lexicographically smallest next hop, which makes training
and extraction fully deterministic for a given seed.
"""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path as FilePath

from .errors import ExtractionError, ValidationError
from .netcore import Arc, NodePath, Topology
from .flowsim import LinkFeatures, NormalizedMetrics, RouteSet
from .util import fmt, write_text_atomic

_WEIGHT_TOL = 1e-9

QTABLES_HEADER = ["dst", "state", "action_src", "action_dst", "qvalue"]


@dataclass(frozen=True)
class RewardWeights:
    """Coefficients (beta_bwd, beta_delay, beta_pkloss); non-negative, sum 1."""

    bwd: float
    delay: float
    pkloss: float

    def __post_init__(self):
        for name, v in self.as_dict().items():
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"weight {name} must be >= 0, got {v!r}")
        if abs(self.bwd + self.delay + self.pkloss - 1.0) > _WEIGHT_TOL:
            raise ValidationError(
                f"weights must sum to 1, got {self.bwd + self.delay + self.pkloss!r}"
            )

    @classmethod
    def normalized(cls, bwd: float, delay: float, pkloss: float) -> "RewardWeights":
        total = bwd + delay + pkloss
        if total <= 0:
            raise ValidationError("weights must have a positive sum")
        return cls(bwd / total, delay / total, pkloss / total)

    @classmethod
    def equal(cls) -> "RewardWeights":
        return cls(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)

    def as_dict(self) -> dict[str, float]:
        return {"bwd": self.bwd, "delay": self.delay, "pkloss": self.pkloss}

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.bwd, self.delay, self.pkloss)


@dataclass(frozen=True)
class Hyperparams:
    """Agent knobs. max_steps=None resolves to 4 * |nodes| at training time.

    hop_cost is a strictly positive per-step surcharge added to the link
    cost during training. Min-max normalization guarantees some arcs cost
    exactly 0; without the surcharge those arcs form free cycles whose
    value fixed point is 0, and greedy extraction wanders into dead ends.
    gamma defaults close to 1 so that reaching the destination always
    beats circling on cheap links.
    """

    alpha: float = 0.8
    gamma: float = 0.999
    epsilon: float = 0.1
    episodes_per_pair: int = 500
    max_steps: int | None = None
    hop_cost: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValidationError("alpha must be in (0, 1]")
        if not (0.0 <= self.gamma < 1.0):
            raise ValidationError("gamma must be in [0, 1)")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValidationError("epsilon must be in [0, 1]")
        if self.episodes_per_pair < 1:
            raise ValidationError("episodes_per_pair must be >= 1")
        if not (0.0 <= self.hop_cost):
            raise ValidationError("hop_cost must be >= 0")

    def resolve_max_steps(self, n_nodes: int) -> int:
        return self.max_steps if self.max_steps is not None else 4 * n_nodes

    def with_seed(self, seed: int) -> "Hyperparams":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class QTables:
    """Per-destination map (state-node, action-arc) -> learned cost-to-go."""

    tables: dict[str, dict[tuple[str, Arc], float]] = field(default_factory=dict)

    def destinations(self) -> tuple[str, ...]:
        return tuple(sorted(self.tables))


def reward(nm_link: LinkFeatures, w: RewardWeights) -> float:
    """Weighted link cost in [0, 1]; the agent minimizes it."""
    return w.bwd * nm_link.bwd_hat + w.delay * nm_link.delay_hat + w.pkloss * nm_link.pkloss_hat


def q_update(q: float, cost: float, min_next: float, h: Hyperparams) -> float:
    """One temporal-difference step toward cost + gamma * min_next."""
    return q + h.alpha * (cost + h.gamma * min_next - q)


def arc_costs(
    t: Topology, nm: NormalizedMetrics, w: RewardWeights, hop_cost: float = 0.0
) -> dict[Arc, float]:
    """Per-arc training cost: weighted reward plus the per-hop surcharge."""
    costs = {}
    for arc in t.arcs:
        feats = nm.feats.get(arc)
        if feats is None:
            raise ValidationError(f"normalized metrics missing arc {arc}")
        costs[arc] = reward(feats, w) + hop_cost
    return costs


def _epsilon_at(round_idx: int, total_rounds: int, eps0: float) -> float:
    if total_rounds <= 1:
        return eps0
    return eps0 * max(0.0, 1.0 - round_idx / (total_rounds - 1))


def train(
    t: Topology,
    nm: NormalizedMetrics,
    w: RewardWeights,
    h: Hyperparams,
    init: QTables | None = None,
) -> QTables:
    """Learn per-destination Q-tables on a static cost snapshot.

    For each destination, episodes run round-robin over all sources for
    episodes_per_pair rounds; epsilon decays linearly to 0 across rounds.
    The destination is absorbing (terminal bootstrap 0). Per-destination
    RNG streams derive from h.seed xor destination-index, so results do
    not depend on whether destinations are trained sequentially or in
    parallel.
    """
    nodes = list(t.nodes)
    n = len(nodes)
    index = {u: i for i, u in enumerate(nodes)}
    costs = arc_costs(t, nm, w, hop_cost=h.hop_cost)
    # actions[u] = neighbor indices sorted by node id; cost_row[u] parallel costs
    actions = [[index[v] for v in t.neighbors[u]] for u in nodes]
    cost_rows = [[costs[(u, v)] for v in t.neighbors[u]] for u in nodes]
    max_steps = h.resolve_max_steps(n)
    rounds = h.episodes_per_pair
    alpha, gamma, eps0 = h.alpha, h.gamma, h.epsilon

    tables: dict[str, dict[tuple[str, Arc], float]] = {}
    for d_idx, dst in enumerate(nodes):
        rng = random.Random((h.seed ^ d_idx) & 0x7FFFFFFFFFFFFFFF)
        q = [[0.0] * len(actions[u]) for u in range(n)]
        if init is not None and dst in init.tables:
            prev = init.tables[dst]
            for u in range(n):
                for a, v in enumerate(actions[u]):
                    key = (nodes[u], (nodes[u], nodes[v]))
                    if key in prev:
                        q[u][a] = prev[key]
        sources = [s for s in range(n) if s != d_idx]
        for rnd in range(rounds):
            eps = _epsilon_at(rnd, rounds, eps0)
            for src in sources:
                node = src
                for _ in range(max_steps):
                    row = q[node]
                    if eps > 0.0 and rng.random() < eps:
                        a = rng.randrange(len(row))
                    else:
                        a = 0
                        best = row[0]
                        for i in range(1, len(row)):
                            if row[i] < best:
                                best = row[i]
                                a = i
                    nxt = actions[node][a]
                    if nxt == d_idx:
                        min_next = 0.0
                    else:
                        min_next = min(q[nxt])
                    cur = row[a]
                    row[a] = cur + alpha * (cost_rows[node][a] + gamma * min_next - cur)
                    node = nxt
                    if node == d_idx:
                        break
        table: dict[tuple[str, Arc], float] = {}
        for u in range(n):
            if u == d_idx:
                continue
            for a, v in enumerate(actions[u]):
                table[(nodes[u], (nodes[u], nodes[v]))] = q[u][a]
        tables[dst] = table
    return QTables(tables=tables)


def _by_state(table: dict[tuple[str, Arc], float]) -> dict[str, list[tuple[str, float]]]:
    """Group a destination table into per-state (next_hop, q) lists, tie-ordered."""
    grouped: dict[str, list[tuple[str, float]]] = {}
    for (state, (_a_src, a_dst)), value in table.items():
        grouped.setdefault(state, []).append((a_dst, value))
    for state in grouped:
        grouped[state].sort()
    return grouped


def _greedy_walk(
    grouped: dict[str, list[tuple[str, float]]], src: str, dst: str
) -> NodePath:
    path = [src]
    visited = {src}
    node = src
    while node != dst:
        best_q = math.inf
        best_next: str | None = None
        for a_dst, value in grouped.get(node, ()):
            if a_dst not in visited and value < best_q:
                best_q = value
                best_next = a_dst
        if best_next is None:
            raise ExtractionError(src, dst, tuple(path))
        node = best_next
        visited.add(node)
        path.append(node)
    return tuple(path)


def extract_path(qt: QTables, src: str, dst: str) -> NodePath:
    """Greedy descent on Q[dst] from src, skipping already-visited nodes."""
    if src == dst:
        raise ValidationError("src and dst must differ")
    table = qt.tables.get(dst)
    if table is None:
        raise ValidationError(f"no table trained for destination {dst!r}")
    return _greedy_walk(_by_state(table), src, dst)


def all_pairs_paths(
    t: Topology,
    nm: NormalizedMetrics,
    w: RewardWeights,
    h: Hyperparams,
    init: QTables | None = None,
) -> tuple[QTables, RouteSet]:
    """Train, then extract a route for every ordered node pair."""
    qt = train(t, nm, w, h, init=init)
    routes: dict[Arc, NodePath] = {}
    for dst in t.nodes:
        grouped = _by_state(qt.tables[dst])
        for src in t.nodes:
            if src == dst:
                continue
            routes[(src, dst)] = _greedy_walk(grouped, src, dst)
    return qt, RouteSet(routes=routes)


# ---------------------------------------------------------------------------
# CSV round-trip (raw input for the dataset stage)
# ---------------------------------------------------------------------------

def qtables_csv_text(qt: QTables) -> str:
    buf = io.StringIO()
    buf.write(",".join(QTABLES_HEADER) + "\n")
    for dst in qt.destinations():
        table = qt.tables[dst]
        for (state, arc) in sorted(table):
            buf.write(f"{dst},{state},{arc[0]},{arc[1]},{fmt(table[(state, arc)])}\n")
    return buf.getvalue()


def write_qtables(qt: QTables, path: str | FilePath) -> None:
    write_text_atomic(path, qtables_csv_text(qt))


def read_qtables(path: str | FilePath) -> QTables:
    p = FilePath(path)
    if not p.is_file():
        raise ValidationError(f"q-tables file not found: {p}")
    tables: dict[str, dict[tuple[str, Arc], float]] = {}
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != QTABLES_HEADER:
            raise ValidationError(f"{p.name}: bad q-tables header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise ValidationError(f"{p.name} row {lineno}: expected 5 cells")
            dst, state, a_src, a_dst = row[:4]
            try:
                value = float(row[4])
            except ValueError as exc:
                raise ValidationError(f"{p.name} row {lineno}: non-numeric q-value") from exc
            tables.setdefault(dst, {})[(state, (a_src, a_dst))] = value
    return QTables(tables=tables)
