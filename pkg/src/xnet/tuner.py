"""Reward-weight search guided by the explanation feature ranking.

Candidate weight triples come from a simplex grid, optionally pruned to
those whose ordering agrees with the mean-|SHAP| feature ranking. Each
candidate re-runs the full interval chain (train on the previous
interval's measured state, install routes, carry the traffic), and
candidates are ranked by mean rank across the four metrics.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path as FilePath

from .datakit import METRIC_FEATURES
from .errors import ExtractionError, ValidationError
from .evalkit import EvalReport, METRIC_NAMES, HIGHER_BETTER, TMRow, tm_row
from .flowsim import (
    LinkMetrics,
    NormalizedMetrics,
    RouteSet,
    RHO_MAX,
    apply_routes,
    idle_metrics,
    normalize_metrics,
)
from .netcore import Arc, NodePath, Topology, TrafficMatrix, shortest_path_hops
from .qrouter import Hyperparams, QTables, RewardWeights, train, _by_state, _greedy_walk
from .util import derive_seed, worker_count, write_text_atomic
from .xaikit import FeatureRanking

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class IntervalRecord:
    """One interval of the monitor-then-route cycle."""

    tag: str
    input_state: LinkMetrics
    normalized: NormalizedMetrics
    qtables: QTables | None
    routes: RouteSet
    measured: LinkMetrics
    fallback_pairs: tuple[Arc, ...]


@dataclass(frozen=True)
class WeightCandidate:
    weights: RewardWeights
    provenance: str
    report: EvalReport | None = None


@dataclass(frozen=True)
class TuneResult:
    candidates: tuple[WeightCandidate, ...]
    ranking: tuple[dict, ...]
    baseline: EvalReport
    selected: tuple[WeightCandidate, ...]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "candidates": [
                {"weights": list(c.weights.as_tuple()), "provenance": c.provenance,
                 "report": c.report.to_dict() if c.report else None}
                for c in self.candidates
            ],
            "ranking": list(self.ranking),
            "baseline": self.baseline.to_dict(),
            "selected": [list(c.weights.as_tuple()) for c in self.selected],
        }


def weight_grid(step: float = 0.05) -> list[RewardWeights]:
    """Every simplex point with components - multiples of step summing to 1.

    Deterministic order: first component descending, then second.
    """
    if not (0.0 < step <= 1.0):
        raise ValidationError("step must be in (0, 1]")
    m = round(1.0 / step)
    if abs(m * step - 1.0) > 1e-6:
        raise ValidationError("1/step must be an integer number of grid levels")
    out = []
    for i in range(m, -1, -1):
        for j in range(m - i, -1, -1):
            k = m - i - j
            out.append(RewardWeights(i / m, j / m, k / m))
    return out


def _metric_weight_order(ranking: FeatureRanking) -> tuple[str, ...]:
    order = tuple(n for n in ranking.names() if n in METRIC_FEATURES)
    if len(order) != len(METRIC_FEATURES):
        raise ValidationError("ranking does not cover the three metric features")
    return order


def prune_by_ranking(
    grid: list[RewardWeights], ranking: FeatureRanking
) -> list[RewardWeights]:
    """Keep candidates whose weight ordering matches the feature ranking.

    The equal-weight baseline is always retained (appended when absent).
    """
    order = _metric_weight_order(ranking)
    idx = {"bwd_hat": 0, "delay_hat": 1, "pkloss_hat": 2}
    positions = [idx[name] for name in order]
    kept = []
    baseline = RewardWeights.equal()
    seen_baseline = False
    for w in grid:
        tup = w.as_tuple()
        if all(abs(v - 1.0 / 3.0) <= _WEIGHT_TOL for v in tup):
            kept.append(w)
            seen_baseline = True
            continue
        ordered = [tup[p] for p in positions]
        if all(ordered[i] >= ordered[i + 1] - _WEIGHT_TOL for i in range(2)):
            kept.append(w)
    if not seen_baseline:
        kept.append(baseline)
    return kept


def simulate_interval_chain(
    t: Topology,
    tms: list[TrafficMatrix],
    w: RewardWeights,
    h: Hyperparams,
    warm_start: bool = False,
    keep_tables: bool = False,
) -> list[IntervalRecord]:
    """Run the monitor-then-route cycle over consecutive traffic matrices.

    Interval k trains on the measured state of interval k-1 (idle network
    for k=0), installs all-pairs routes, then carries tm_k. Per-interval
    training seeds derive from h.seed and the interval index. A pair whose
    greedy extraction dead-ends falls back to its minimum-hop route and is
    recorded in fallback_pairs.
    """
    if not tms:
        raise ValidationError("no traffic matrices supplied")
    state = idle_metrics(t)
    prev_tables: QTables | None = None
    records = []
    for k, tm in enumerate(tms):
        nm = normalize_metrics(state)
        h_k = h.with_seed(derive_seed(h.seed, "tm", k))
        qt = train(t, nm, w, h_k, init=prev_tables if warm_start else None)
        routes: dict[Arc, NodePath] = {}
        fallbacks: list[Arc] = []
        for dst in t.nodes:
            grouped = _by_state(qt.tables[dst])
            for src in t.nodes:
                if src == dst:
                    continue
                try:
                    routes[(src, dst)] = _greedy_walk(grouped, src, dst)
                except ExtractionError:
                    routes[(src, dst)] = shortest_path_hops(t, src, dst)
                    fallbacks.append((src, dst))
        route_set = RouteSet(routes=routes)
        measured = apply_routes(t, route_set, tm)
        records.append(IntervalRecord(
            tag=tm.tag, input_state=state, normalized=nm,
            qtables=qt if keep_tables else None,
            routes=route_set, measured=measured,
            fallback_pairs=tuple(fallbacks),
        ))
        state = measured
        prev_tables = qt
    return records


def _worst_case_row(tag: str, t: Topology) -> TMRow:
    """Stand-in metrics for an interval whose extraction failed."""
    mean_prop = sum(t.arc_prop_delay[a] for a in t.arcs) / len(t.arcs)
    return TMRow(
        tag=tag,
        mean_stretch=float(4 * len(t.nodes)),
        mean_delay_ms=mean_prop / (1.0 - RHO_MAX),
        mean_throughput_mbps=0.0,
        mean_loss=RHO_MAX,
        extraction_failed=True,
    )


def evaluate_weights(
    w: RewardWeights,
    t: Topology,
    tms: list[TrafficMatrix],
    h: Hyperparams,
    label: str | None = None,
    warm_start: bool = False,
) -> EvalReport:
    """Four-metric report for one weight configuration over the interval chain."""
    records = simulate_interval_chain(t, tms, w, h, warm_start=warm_start)
    rows = []
    n_fallback = 0
    for rec in records:
        if rec.fallback_pairs:
            rows.append(_worst_case_row(rec.tag, t))
            n_fallback += len(rec.fallback_pairs)
        else:
            rows.append(tm_row(rec.tag, rec.routes, t, rec.measured))
    return EvalReport(
        label=label or weight_label(w),
        weights=w.as_tuple(),
        rows=tuple(rows),
        metadata={
            "seed": h.seed, "alpha": h.alpha, "gamma": h.gamma,
            "epsilon": h.epsilon, "episodes_per_pair": h.episodes_per_pair,
            "hop_cost": h.hop_cost, "warm_start": warm_start,
            "n_extraction_fallbacks": n_fallback,
            "topology_hash": t.content_hash(),
        },
    )


def weight_label(w: RewardWeights) -> str:
    return "w{:.2f}-{:.2f}-{:.2f}".format(*w.as_tuple())


def rank_candidates(reports: list[EvalReport]) -> list[dict]:
    """Mean rank across the four metrics; ties share the better (min) rank.

    Returns dicts sorted best-first; final ties break on the weight triple,
    so the ranking never depends on candidate input order.
    """
    if not reports:
        raise ValidationError("nothing to rank")
    per_metric_rank: list[dict[int, int]] = []
    for name in METRIC_NAMES:
        values = [r.overall(name) for r in reports]
        sign = -1.0 if HIGHER_BETTER[name] else 1.0
        ranks = {}
        for i, v in enumerate(values):
            ranks[i] = 1 + sum(1 for u in values if sign * u < sign * v)
        per_metric_rank.append(ranks)
    scored = []
    for i, report in enumerate(reports):
        ranks = {name: per_metric_rank[j][i] for j, name in enumerate(METRIC_NAMES)}
        scored.append({
            "label": report.label,
            "weights": list(report.weights),
            "metric_ranks": ranks,
            "mean_rank": sum(ranks.values()) / len(ranks),
            "overall": {name: report.overall(name) for name in METRIC_NAMES},
        })
    scored.sort(key=lambda s: (s["mean_rank"], tuple(s["weights"])))
    return scored


def _evaluate_one(args) -> EvalReport:
    w, t, tms, h, warm_start = args
    return evaluate_weights(w, t, tms, h, warm_start=warm_start)


def search(
    candidates: list[RewardWeights],
    t: Topology,
    tms: list[TrafficMatrix],
    h: Hyperparams,
    top_k: int = 2,
    warm_start: bool = False,
) -> TuneResult:
    """Evaluate every candidate (baseline always included) and rank them.

    Every candidate runs with the same seed so that configurations with
    identical greedy behavior produce identical reports; workers (capped
    by XNET_THREADS) each own a private RNG stream.
    """
    baseline = RewardWeights.equal()
    pool: list[tuple[RewardWeights, str]] = []
    seen: set[tuple] = set()
    have_baseline = False
    for w in candidates:
        key = w.as_tuple()
        if key in seen:
            continue
        seen.add(key)
        if all(abs(v - 1.0 / 3.0) <= _WEIGHT_TOL for v in key):
            have_baseline = True
            pool.append((w, "baseline"))
        else:
            pool.append((w, "candidate"))
    if not have_baseline:
        pool.append((baseline, "baseline"))
    jobs = [(w, t, tms, h, warm_start) for w, _ in pool]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(_evaluate_one, jobs))
    else:
        reports = [_evaluate_one(job) for job in jobs]
    evaluated = tuple(
        WeightCandidate(weights=w, provenance=prov, report=rep)
        for (w, prov), rep in zip(pool, reports)
    )
    ranking = rank_candidates(list(reports))
    by_weights = {c.weights.as_tuple(): c for c in evaluated}
    selected = tuple(by_weights[tuple(row["weights"])] for row in ranking[:top_k])
    baseline_report = next(c.report for c in evaluated if c.provenance == "baseline")
    return TuneResult(candidates=evaluated, ranking=tuple(ranking),
                      baseline=baseline_report, selected=selected)


def write_tune_result(result: TuneResult, path: str | FilePath) -> None:
    write_text_atomic(path, json.dumps(result.to_dict(), sort_keys=True, indent=1) + "\n")
