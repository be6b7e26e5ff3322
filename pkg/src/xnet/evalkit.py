"""The four routing performance metrics, comparisons and report files.

Metrics per interval: mean stretch (hop ratio vs the minimum-hop route),
mean link delay, mean link throughput and mean link loss. Delay, loss and
throughput average over loaded links only; an idle interval falls back to
all links and is flagged in the row.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path as FilePath

from .errors import ValidationError
from .flowsim import LinkMetrics, RouteSet
from .netcore import Topology, shortest_path_hops
from .util import fmt, write_text_atomic

EVAL_CSV_HEADER = ["tm_tag", "mean_stretch", "mean_delay_ms",
                   "mean_throughput_mbps", "mean_loss"]

METRIC_NAMES = ("mean_stretch", "mean_delay_ms", "mean_throughput_mbps", "mean_loss")

# lower is better except throughput
HIGHER_BETTER = {"mean_stretch": False, "mean_delay_ms": False,
                 "mean_throughput_mbps": True, "mean_loss": False}


@dataclass(frozen=True)
class TMRow:
    tag: str
    mean_stretch: float
    mean_delay_ms: float
    mean_throughput_mbps: float
    mean_loss: float
    idle: bool = False
    extraction_failed: bool = False

    def metric(self, name: str) -> float:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {
            "tag": self.tag, "mean_stretch": self.mean_stretch,
            "mean_delay_ms": self.mean_delay_ms,
            "mean_throughput_mbps": self.mean_throughput_mbps,
            "mean_loss": self.mean_loss, "idle": self.idle,
            "extraction_failed": self.extraction_failed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TMRow":
        return cls(tag=d["tag"], mean_stretch=d["mean_stretch"],
                   mean_delay_ms=d["mean_delay_ms"],
                   mean_throughput_mbps=d["mean_throughput_mbps"],
                   mean_loss=d["mean_loss"], idle=d.get("idle", False),
                   extraction_failed=d.get("extraction_failed", False))


@dataclass(frozen=True)
class EvalReport:
    label: str
    weights: tuple[float, float, float]
    rows: tuple[TMRow, ...]
    metadata: dict = field(default_factory=dict)

    def overall(self, name: str) -> float:
        if not self.rows:
            raise ValidationError("report has no rows")
        return sum(r.metric(name) for r in self.rows) / len(self.rows)

    def to_dict(self) -> dict:
        return {
            "label": self.label, "weights": list(self.weights),
            "rows": [r.to_dict() for r in self.rows],
            "overall": {name: self.overall(name) for name in METRIC_NAMES},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(label=d["label"], weights=tuple(d["weights"]),
                   rows=tuple(TMRow.from_dict(r) for r in d["rows"]),
                   metadata=d.get("metadata", {}))


def mean_stretch(routes: RouteSet, t: Topology) -> float:
    """Mean over ordered pairs of hops(route) / hops(min-hop route)."""
    if not routes.routes:
        raise ValidationError("empty route set")
    total = 0.0
    for (src, dst), path in routes.routes.items():
        best = len(shortest_path_hops(t, src, dst)) - 1
        total += (len(path) - 1) / best
    return total / len(routes.routes)


def _loaded_or_all(m: LinkMetrics) -> tuple[tuple, bool]:
    loaded = m.loaded_arcs()
    if loaded:
        return loaded, False
    return m.arcs, True


def mean_link_delay(m: LinkMetrics) -> float:
    """Mean delay over loaded links; all links when the network is idle."""
    arcs, _ = _loaded_or_all(m)
    return sum(m.states[a].delay for a in arcs) / len(arcs)


def mean_link_throughput(m: LinkMetrics) -> float:
    """Mean of min(load, capacity) over loaded links; 0 when idle."""
    loaded = m.loaded_arcs()
    if not loaded:
        return 0.0
    return sum(min(m.states[a].load, m.states[a].capacity) for a in loaded) / len(loaded)


def mean_link_loss(m: LinkMetrics) -> float:
    """Mean loss fraction over loaded links; 0 when idle."""
    loaded = m.loaded_arcs()
    if not loaded:
        return 0.0
    return sum(m.states[a].loss for a in loaded) / len(loaded)


def tm_row(tag: str, routes: RouteSet, t: Topology, m: LinkMetrics,
           extraction_failed: bool = False) -> TMRow:
    """Assemble one interval's metric row from installed routes + measured state."""
    idle = len(m.loaded_arcs()) == 0
    return TMRow(
        tag=tag,
        mean_stretch=mean_stretch(routes, t),
        mean_delay_ms=mean_link_delay(m),
        mean_throughput_mbps=mean_link_throughput(m),
        mean_loss=mean_link_loss(m),
        idle=idle,
        extraction_failed=extraction_failed,
    )


def compare(a: EvalReport, b: EvalReport) -> dict:
    """Signed relative change (b - a) / a per metric per interval, plus win tallies for b."""
    tags_a = [r.tag for r in a.rows]
    tags_b = [r.tag for r in b.rows]
    if tags_a != tags_b:
        raise ValidationError("reports cover different intervals; cannot compare")
    out: dict = {"a": a.label, "b": b.label, "metrics": {}}
    for name in METRIC_NAMES:
        per_tm = {}
        wins = ties = 0
        for ra, rb in zip(a.rows, b.rows):
            va, vb = ra.metric(name), rb.metric(name)
            if va == 0.0:
                per_tm[ra.tag] = 0.0 if vb == 0.0 else None
            else:
                per_tm[ra.tag] = (vb - va) / va
            if vb == va:
                ties += 1
            elif (vb > va) == HIGHER_BETTER[name]:
                wins += 1
        oa, ob = a.overall(name), b.overall(name)
        out["metrics"][name] = {
            "per_tm": per_tm,
            "wins_b": wins,
            "ties": ties,
            "n": len(a.rows),
            "overall_a": oa,
            "overall_b": ob,
            "overall_rel": None if oa == 0.0 else (ob - oa) / oa,
        }
    return out


# ---------------------------------------------------------------------------
# report files: one JSON with every report + a plot-ready CSV per report
# ---------------------------------------------------------------------------

def report_csv_text(report: EvalReport) -> str:
    buf = io.StringIO()
    buf.write(",".join(EVAL_CSV_HEADER) + "\n")
    for r in report.rows:
        buf.write(f"{r.tag},{fmt(r.mean_stretch)},{fmt(r.mean_delay_ms)},"
                  f"{fmt(r.mean_throughput_mbps)},{fmt(r.mean_loss)}\n")
    return buf.getvalue()


def emit_report(reports: list[EvalReport], out_dir: str | FilePath) -> list[FilePath]:
    """Write eval_report.json plus eval_<label>.csv per report; returns paths."""
    if not reports:
        raise ValidationError("no reports to emit")
    out = FilePath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": 1, "reports": [r.to_dict() for r in reports]}
    paths = [out / "eval_report.json"]
    write_text_atomic(paths[0], json.dumps(doc, sort_keys=True, indent=1) + "\n")
    for report in reports:
        p = out / f"eval_{report.label}.csv"
        write_text_atomic(p, report_csv_text(report))
        paths.append(p)
    return paths


def read_report(path: str | FilePath) -> list[EvalReport]:
    p = FilePath(path)
    if not p.is_file():
        raise ValidationError(f"report file not found: {p}")
    doc = json.loads(p.read_text(encoding="utf-8"))
    if doc.get("schema_version") != 1:
        raise ValidationError(f"unsupported report schema {doc.get('schema_version')!r}")
    return [EvalReport.from_dict(d) for d in doc["reports"]]
