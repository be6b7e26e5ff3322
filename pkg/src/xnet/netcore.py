"""Network topology model, traffic-matrix ingestion/generation and graph oracles.

Topologies are undirected by default; every undirected link expands to two
directed arcs that each carry the full link capacity (full-duplex semantics).
All types are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path as FilePath

import numpy as np

from .errors import ValidationError
from .util import fmt, write_text_atomic

Arc = tuple[str, str]
NodePath = tuple[str, ...]

DEFAULT_PROP_DELAY_MS = 1.0
GEANT_CAPACITY_TIERS = (100.0, 25.0, 1.55)


@dataclass(frozen=True)
class Link:
    """One undirected link: endpoints, capacity in Mbps, propagation delay in ms."""

    src: str
    dst: str
    capacity: float
    prop_delay: float = DEFAULT_PROP_DELAY_MS

    def validate(self, row: str = "") -> None:
        where = f" (row {row})" if row else ""
        if self.src == self.dst:
            raise ValidationError(f"self-loop link {self.src}->{self.dst}{where}")
        if not (math.isfinite(self.capacity) and self.capacity > 0):
            raise ValidationError(f"link {self.src}-{self.dst}: capacity must be > 0{where}")
        if not (math.isfinite(self.prop_delay) and self.prop_delay >= 0):
            raise ValidationError(f"link {self.src}-{self.dst}: prop_delay must be >= 0{where}")


@dataclass(frozen=True)
class Topology:
    """Validated network graph.

    nodes are kept sorted; links keep file order. Derived adjacency is
    cached on first use (the dataclass is frozen, cached_property writes
    through __dict__).
    """

    nodes: tuple[str, ...]
    links: tuple[Link, ...]
    directed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes)))
        object.__setattr__(self, "links", tuple(self.links))
        self._validate()

    def _validate(self) -> None:
        if len(self.nodes) < 2:
            raise ValidationError("topology needs at least 2 nodes")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValidationError("duplicate node ids")
        node_set = set(self.nodes)
        seen: set[frozenset[str]] = set()
        for i, link in enumerate(self.links, start=1):
            link.validate(row=str(i))
            if link.src not in node_set:
                raise ValidationError(f"link row {i}: unknown endpoint {link.src!r}")
            if link.dst not in node_set:
                raise ValidationError(f"link row {i}: unknown endpoint {link.dst!r}")
            key = frozenset((link.src, link.dst))
            if key in seen:
                raise ValidationError(f"link row {i}: duplicate link {link.src}-{link.dst}")
            seen.add(key)
        # connectivity over the undirected view
        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for link in self.links:
            adj[link.src].append(link.dst)
            adj[link.dst].append(link.src)
        seen_nodes = {self.nodes[0]}
        queue = deque([self.nodes[0]])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen_nodes:
                    seen_nodes.add(v)
                    queue.append(v)
        missing = sorted(node_set - seen_nodes)
        if missing:
            raise ValidationError(f"graph is disconnected; unreachable nodes: {missing}")

    @cached_property
    def arcs(self) -> tuple[Arc, ...]:
        """All directed arcs, sorted lexicographically."""
        out: set[Arc] = set()
        for link in self.links:
            out.add((link.src, link.dst))
            if not self.directed:
                out.add((link.dst, link.src))
        return tuple(sorted(out))

    @cached_property
    def arc_capacity(self) -> dict[Arc, float]:
        out: dict[Arc, float] = {}
        for link in self.links:
            out[(link.src, link.dst)] = link.capacity
            if not self.directed:
                out[(link.dst, link.src)] = link.capacity
        return out

    @cached_property
    def arc_prop_delay(self) -> dict[Arc, float]:
        out: dict[Arc, float] = {}
        for link in self.links:
            out[(link.src, link.dst)] = link.prop_delay
            if not self.directed:
                out[(link.dst, link.src)] = link.prop_delay
        return out

    @cached_property
    def neighbors(self) -> dict[str, tuple[str, ...]]:
        """Outgoing neighbors per node, sorted (drives all tie-breaking)."""
        adj: dict[str, set[str]] = {n: set() for n in self.nodes}
        for a, b in self.arcs:
            adj[a].add(b)
        return {n: tuple(sorted(adj[n])) for n in self.nodes}

    @cached_property
    def attached_capacity(self) -> dict[str, float]:
        """Sum of incident link capacities per node (undirected view)."""
        out = {n: 0.0 for n in self.nodes}
        for link in self.links:
            out[link.src] += link.capacity
            out[link.dst] += link.capacity
        return out

    def content_hash(self) -> str:
        """sha256 of the canonical CSV text; used to fingerprint artifacts."""
        return hashlib.sha256(topology_csv_text(self).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TrafficMatrix:
    """Per-(src, dst) demand in Mbps for one time interval, tagged HH:MM."""

    tag: str
    demand: dict[Arc, float] = field(default_factory=dict)

    def __post_init__(self):
        for (i, j), rate in self.demand.items():
            if i == j and rate != 0.0:
                raise ValidationError(f"tm {self.tag}: nonzero diagonal demand at {i}")
            if not (math.isfinite(rate) and rate >= 0):
                raise ValidationError(f"tm {self.tag}: bad rate {rate!r} for {i}->{j}")

    def total_demand(self) -> float:
        return float(sum(self.demand.values()))


def validate_path(t: Topology, path: NodePath) -> None:
    """Check a node sequence is a loop-free walk over existing arcs."""
    if len(path) < 2:
        raise ValidationError(f"path too short: {path}")
    if len(set(path)) != len(path):
        raise ValidationError(f"path repeats a node: {path}")
    arcset = set(t.arcs)
    for a, b in zip(path, path[1:]):
        if (a, b) not in arcset:
            raise ValidationError(f"path uses missing arc {a}->{b}")


# ---------------------------------------------------------------------------
# topology CSV
# ---------------------------------------------------------------------------

_TOPOLOGY_HEADER = ["src", "dst", "capacity_mbps", "prop_delay_ms"]


def parse_topology(text: str) -> Topology:
    rows = [
        line for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not rows:
        raise ValidationError("empty topology file")
    reader = csv.reader(rows)
    header = [h.strip() for h in next(reader)]
    if header[:3] != _TOPOLOGY_HEADER[:3]:
        raise ValidationError(f"bad topology header {header!r}, expected {_TOPOLOGY_HEADER!r}")
    links: list[Link] = []
    nodes: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        cells = [c.strip() for c in row]
        if len(cells) < 3:
            raise ValidationError(f"topology row {lineno}: expected at least 3 cells, got {row!r}")
        src, dst = cells[0], cells[1]
        try:
            capacity = float(cells[2])
            prop = float(cells[3]) if len(cells) > 3 and cells[3] != "" else DEFAULT_PROP_DELAY_MS
        except ValueError as exc:
            raise ValidationError(f"topology row {lineno}: non-numeric cell in {row!r}") from exc
        link = Link(src, dst, capacity, prop)
        link.validate(row=str(lineno))
        nodes.update((src, dst))
        links.append(link)
    return Topology(nodes=tuple(sorted(nodes)), links=tuple(links))


def load_topology(path: str | FilePath) -> Topology:
    """Load and validate a topology CSV (header src,dst,capacity_mbps,prop_delay_ms)."""
    p = FilePath(path)
    if not p.is_file():
        raise ValidationError(f"topology file not found: {p}")
    return parse_topology(p.read_text(encoding="utf-8"))


def topology_csv_text(t: Topology) -> str:
    buf = io.StringIO()
    buf.write(",".join(_TOPOLOGY_HEADER) + "\n")
    for link in t.links:
        buf.write(f"{link.src},{link.dst},{fmt(link.capacity)},{fmt(link.prop_delay)}\n")
    return buf.getvalue()


def write_topology(t: Topology, path: str | FilePath) -> None:
    write_text_atomic(path, topology_csv_text(t))


def builtin_geant() -> Topology:
    """The bundled 23-node / 37-link research-network graph with scaled capacity tiers."""
    text = resources.files("xnet.data").joinpath("geant.csv").read_text(encoding="utf-8")
    return parse_topology(text)


def builtin_triangle() -> Topology:
    """Three nodes, three links with distinct capacities; the smallest useful fixture."""
    text = resources.files("xnet.data").joinpath("triangle.csv").read_text(encoding="utf-8")
    return parse_topology(text)


# ---------------------------------------------------------------------------
# shortest paths
# ---------------------------------------------------------------------------

def hop_distances(t: Topology, dst: str) -> dict[str, int]:
    """BFS hop count from every node to dst."""
    dist = {dst: 0}
    queue = deque([dst])
    while queue:
        u = queue.popleft()
        for v in t.neighbors[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def shortest_path_hops(t: Topology, src: str, dst: str) -> NodePath:
    """Minimum-hop path; among ties, the lexicographically smallest node sequence.

    Greedy walk over BFS distances-to-dst: at each node take the smallest
    neighbor that still lies on some minimum-hop continuation.
    """
    if src == dst:
        raise ValidationError("src and dst must differ")
    for n in (src, dst):
        if n not in t.neighbors:
            raise ValidationError(f"unknown node {n!r}")
    dist = hop_distances(t, dst)
    if src not in dist:
        raise ValidationError(f"{dst!r} unreachable from {src!r}")
    path = [src]
    node = src
    while node != dst:
        remaining = dist[node]
        node = next(v for v in t.neighbors[node] if dist.get(v, -1) == remaining - 1)
        path.append(node)
    return tuple(path)


# ---------------------------------------------------------------------------
# traffic matrices
# ---------------------------------------------------------------------------

_TM_NAME_RE = re.compile(r"tm_(\d{2})-(\d{2})\.csv$")


def load_tm(path: str | FilePath, topology: Topology | None = None) -> TrafficMatrix:
    """Load an N x N demand CSV; first row/column are node ids.

    The tag comes from a tm_<HH>-<MM>.csv filename, falling back to the
    header's corner cell, else the file stem.
    """
    p = FilePath(path)
    if not p.is_file():
        raise ValidationError(f"traffic matrix file not found: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if len(rows) < 2:
        raise ValidationError(f"{p.name}: not a matrix")
    header = [c.strip() for c in rows[0]]
    col_ids = header[1:]
    n = len(col_ids)
    if len(rows) - 1 != n:
        raise ValidationError(
            f"{p.name}: dimension mismatch: {n} columns vs {len(rows) - 1} rows"
        )
    m = _TM_NAME_RE.search(p.name)
    if m:
        tag = f"{m.group(1)}:{m.group(2)}"
    else:
        tag = header[0].strip() or p.stem
    row_ids = []
    demand: dict[Arc, float] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        cells = [c.strip() for c in row]
        if len(cells) != n + 1:
            raise ValidationError(f"{p.name} row {lineno}: expected {n + 1} cells, got {len(cells)}")
        rid = cells[0]
        row_ids.append(rid)
        for cid, cell in zip(col_ids, cells[1:]):
            try:
                rate = float(cell)
            except ValueError as exc:
                raise ValidationError(f"{p.name} row {lineno}: non-numeric cell {cell!r}") from exc
            if not math.isfinite(rate) or rate < 0:
                raise ValidationError(f"{p.name} row {lineno}: negative or non-finite rate {cell}")
            if rid == cid:
                if rate != 0.0:
                    raise ValidationError(f"{p.name} row {lineno}: nonzero diagonal for {rid}")
                continue
            if rate > 0.0:
                demand[(rid, cid)] = rate
    if sorted(row_ids) != sorted(col_ids):
        raise ValidationError(f"{p.name}: row ids do not match column ids")
    if topology is not None and sorted(col_ids) != list(topology.nodes):
        raise ValidationError(f"{p.name}: node ids do not match the topology")
    return TrafficMatrix(tag=tag, demand=demand)


def tm_csv_text(t: Topology, tm: TrafficMatrix) -> str:
    buf = io.StringIO()
    buf.write(",".join([tm.tag] + list(t.nodes)) + "\n")
    for i in t.nodes:
        cells = [i] + [fmt(tm.demand.get((i, j), 0.0)) for j in t.nodes]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def tm_filename(tag: str) -> str:
    return f"tm_{tag.replace(':', '-')}.csv"


def write_tm(t: Topology, tm: TrafficMatrix, out_dir: str | FilePath) -> FilePath:
    out = FilePath(out_dir) / tm_filename(tm.tag)
    write_text_atomic(out, tm_csv_text(t, tm))
    return out


def _diurnal_multiplier(hour: float, floor: float = 0.3) -> float:
    """Smooth daily load curve in [floor, 1], peaking at 09:00."""
    c = 0.5 * (1.0 + math.cos(2.0 * math.pi * (hour - 9.0) / 24.0))
    return floor + (1.0 - floor) * c * c


def synth_diurnal(
    t: Topology, n: int, seed: int, peak_scale: float
) -> list[TrafficMatrix]:
    """Generate n traffic matrices over a 24 h day with a morning peak.

    Per-pair base rates are uniform draws scaled by the destination's
    attached capacity; a sinusoidal multiplier peaks inside the
    05:00-13:00 window. Tags sit at interval midpoints, so n=16 yields
    90-minute spacing with exactly six matrices inside the peak window.
    Pure function of (topology, n, seed, peak_scale).
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not (0.0 < peak_scale <= 1.0):
        raise ValidationError("peak_scale must be in (0, 1]")
    rng = np.random.default_rng(seed)
    nodes = t.nodes
    denom = max(1, len(nodes) - 1)
    base: dict[Arc, float] = {}
    for i in nodes:
        for j in nodes:
            if i == j:
                continue
            u = float(rng.uniform(0.2, 1.0))
            base[(i, j)] = u * t.attached_capacity[j] / denom
    out: list[TrafficMatrix] = []
    for k in range(n):
        minutes = int(round((k + 0.5) * 24.0 * 60.0 / n)) % (24 * 60)
        hour = minutes / 60.0
        tag = f"{minutes // 60:02d}:{minutes % 60:02d}"
        mult = peak_scale * _diurnal_multiplier(hour)
        demand = {pair: rate * mult for pair, rate in base.items()}
        out.append(TrafficMatrix(tag=tag, demand=demand))
    return out


PEAK_WINDOW = (5.0, 13.0)


def tag_hour(tag: str) -> float:
    hh, mm = tag.split(":")
    return int(hh) + int(mm) / 60.0


def in_peak_window(tag: str) -> bool:
    lo, hi = PEAK_WINDOW
    return lo <= tag_hour(tag) <= hi
