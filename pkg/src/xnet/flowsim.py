"""Deterministic flow-level data plane: routes + demand -> per-link state.

Replaces an emulated network with a fluid model: loads add along routes,
delay inflates with utilization (M/M/1-style curve capped at 99%
utilization) and loss appears only under overload.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path as FilePath

from .errors import ValidationError
from .netcore import Arc, NodePath, Topology, TrafficMatrix
from .util import fmt, write_text_atomic

RHO_MAX = 0.99

METRICS_HEADER = ["src", "dst", "load_mbps", "available_mbps", "delay_ms", "loss"]


@dataclass(frozen=True)
class LinkState:
    load: float
    available: float
    delay: float
    loss: float
    capacity: float
    prop_delay: float


@dataclass(frozen=True)
class LinkMetrics:
    """Measured per-arc state for one interval."""

    states: dict[Arc, LinkState]

    @property
    def arcs(self) -> tuple[Arc, ...]:
        return tuple(sorted(self.states))

    def loaded_arcs(self) -> tuple[Arc, ...]:
        return tuple(a for a in self.arcs if self.states[a].load > 0.0)


@dataclass(frozen=True)
class LinkFeatures:
    """Normalized (bwd_hat, delay_hat, pkloss_hat) for one arc, each in [0, 1].

    bwd_hat is inverted: 1 means scarce bandwidth, so minimizing the
    weighted sum prefers high-capacity links.
    """

    bwd_hat: float
    delay_hat: float
    pkloss_hat: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.bwd_hat, self.delay_hat, self.pkloss_hat)


@dataclass(frozen=True)
class NormalizedMetrics:
    feats: dict[Arc, LinkFeatures]

    @property
    def arcs(self) -> tuple[Arc, ...]:
        return tuple(sorted(self.feats))


@dataclass(frozen=True)
class RouteSet:
    """One path per ordered node pair; complete by construction."""

    routes: dict[Arc, NodePath]

    def validate_complete(self, t: Topology) -> None:
        pairs = {(i, j) for i in t.nodes for j in t.nodes if i != j}
        missing = sorted(pairs - set(self.routes))
        if missing:
            raise ValidationError(f"route set incomplete; missing pairs {missing[:5]}...")


def link_delay(capacity: float, load: float, prop_delay: float) -> float:
    """Utilization-inflated delay: prop / (1 - rho), rho capped at RHO_MAX."""
    if capacity <= 0:
        raise ValidationError("capacity must be > 0")
    if load < 0:
        raise ValidationError("load must be >= 0")
    rho = min(load / capacity, RHO_MAX)
    return prop_delay / (1.0 - rho)


def link_loss(capacity: float, load: float) -> float:
    """Fluid overload loss: fraction of offered load above capacity."""
    if capacity <= 0:
        raise ValidationError("capacity must be > 0")
    if load < 0:
        raise ValidationError("load must be >= 0")
    if load <= capacity or load == 0.0:
        return 0.0
    return (load - capacity) / load


def idle_metrics(t: Topology) -> LinkMetrics:
    """Link state of an unloaded network (the first interval's input)."""
    states = {}
    for arc in t.arcs:
        cap = t.arc_capacity[arc]
        prop = t.arc_prop_delay[arc]
        states[arc] = LinkState(0.0, cap, prop, 0.0, cap, prop)
    return LinkMetrics(states=states)


def apply_routes(t: Topology, r: RouteSet, tm: TrafficMatrix) -> LinkMetrics:
    """Carry every demand along its route and measure the resulting link state."""
    arcset = set(t.arcs)
    load: dict[Arc, float] = {arc: 0.0 for arc in t.arcs}
    for pair in sorted(tm.demand):
        rate = tm.demand[pair]
        if rate == 0.0:
            continue
        path = r.routes.get(pair)
        if path is None:
            raise ValidationError(f"no route installed for demand {pair[0]}->{pair[1]}")
        for hop in zip(path, path[1:]):
            if hop not in arcset:
                raise ValidationError(f"route for {pair} uses unknown link {hop[0]}->{hop[1]}")
            load[hop] += rate
    states = {}
    for arc in t.arcs:
        cap = t.arc_capacity[arc]
        prop = t.arc_prop_delay[arc]
        lo = load[arc]
        states[arc] = LinkState(
            load=lo,
            available=max(0.0, cap - lo),
            delay=link_delay(cap, lo, prop),
            loss=link_loss(cap, lo),
            capacity=cap,
            prop_delay=prop,
        )
    return LinkMetrics(states=states)


def _minmax(values: list[float], invert: bool = False) -> list[float]:
    lo, hi = min(values), max(values)
    span = hi - lo
    if span <= 0.0:
        return [0.0] * len(values)
    out = [(v - lo) / span for v in values]
    return [1.0 - v for v in out] if invert else out


def normalize_metrics(m: LinkMetrics) -> NormalizedMetrics:
    """Min-max normalize a snapshot per feature; constant columns map to 0.

    Available bandwidth is inverted (1 means scarce), so the weighted cost
    steers toward high-capacity links.
    """
    arcs = m.arcs
    if not arcs:
        raise ValidationError("cannot normalize an empty snapshot")
    bwd = _minmax([m.states[a].available for a in arcs], invert=True)
    delay = _minmax([m.states[a].delay for a in arcs])
    loss = _minmax([m.states[a].loss for a in arcs])
    feats = {
        a: LinkFeatures(bwd_hat=b, delay_hat=d, pkloss_hat=lo)
        for a, b, d, lo in zip(arcs, bwd, delay, loss)
    }
    return NormalizedMetrics(feats=feats)


# ---------------------------------------------------------------------------
# CSV round-trip (consumed by datakit and evalkit)
# ---------------------------------------------------------------------------

def metrics_csv_text(m: LinkMetrics) -> str:
    buf = io.StringIO()
    buf.write(",".join(METRICS_HEADER) + "\n")
    for arc in m.arcs:
        s = m.states[arc]
        buf.write(
            f"{arc[0]},{arc[1]},{fmt(s.load)},{fmt(s.available)},{fmt(s.delay)},{fmt(s.loss)}\n"
        )
    return buf.getvalue()


def write_metrics(m: LinkMetrics, path: str | FilePath) -> None:
    write_text_atomic(path, metrics_csv_text(m))


def read_metrics(path: str | FilePath, t: Topology) -> LinkMetrics:
    """Rebuild LinkMetrics from CSV; capacity/prop delay come from the topology."""
    p = FilePath(path)
    if not p.is_file():
        raise ValidationError(f"metrics file not found: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_HEADER:
            raise ValidationError(f"{p.name}: bad metrics header {header!r}")
        states: dict[Arc, LinkState] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise ValidationError(f"{p.name} row {lineno}: expected 6 cells")
            arc = (row[0], row[1])
            if arc not in t.arc_capacity:
                raise ValidationError(f"{p.name} row {lineno}: unknown arc {arc}")
            try:
                load, available, delay, loss = (float(c) for c in row[2:])
            except ValueError as exc:
                raise ValidationError(f"{p.name} row {lineno}: non-numeric cell") from exc
            states[arc] = LinkState(
                load, available, delay, loss,
                t.arc_capacity[arc], t.arc_prop_delay[arc],
            )
    missing = set(t.arcs) - set(states)
    if missing:
        raise ValidationError(f"{p.name}: missing arcs {sorted(missing)[:5]}")
    return LinkMetrics(states=states)
