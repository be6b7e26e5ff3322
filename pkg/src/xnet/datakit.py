"""Surrogate-training dataset construction.

Turns trained Q-tables plus the link features the agent saw into a flat
regression table (one row per Q-entry), then applies the cleaning pipeline:
dedupe -> impute -> winsorize the target by IQR -> target-encode the
src/dst identifiers. Every fitted parameter is recorded in the dataset
metadata so a stored dataset is self-describing.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path as FilePath

import numpy as np

from .errors import ValidationError
from .flowsim import NormalizedMetrics
from .qrouter import QTables
from .util import fmt, write_text_atomic

FEATURE_NAMES = ("src_enc", "dst_enc", "bwd_hat", "delay_hat", "pkloss_hat")
METRIC_FEATURES = ("bwd_hat", "delay_hat", "pkloss_hat")
DATASET_HEADER = ["src", "dst", *FEATURE_NAMES, "qvalue"]

IQR_FACTOR = 1.5
ENCODER_SMOOTHING = 10.0


@dataclass(frozen=True)
class RawSample:
    """One (state, action) Q-entry: action-link features -> Q-value target.

    None marks a missing numeric cell (filled by impute).
    """

    src: str
    dst: str
    bwd_hat: float | None
    delay_hat: float | None
    pkloss_hat: float | None
    qvalue: float | None

    def key(self) -> tuple:
        return (self.src, self.dst, self.bwd_hat, self.delay_hat,
                self.pkloss_hat, self.qvalue)


@dataclass(frozen=True)
class TargetEncoder:
    """Smoothed per-category mean of the target; unseen categories fall back to the prior."""

    table: dict[str, float]
    prior: float
    k: float

    def encode(self, category: str) -> float:
        return self.table.get(category, self.prior)

    def to_dict(self) -> dict:
        return {"k": self.k, "prior": self.prior,
                "table": {c: self.table[c] for c in sorted(self.table)}}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetEncoder":
        return cls(table=dict(d["table"]), prior=d["prior"], k=d["k"])


@dataclass(frozen=True)
class Dataset:
    """Preprocessed numeric table: columns FEATURE_NAMES -> qvalue target."""

    src: tuple[str, ...]
    dst: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.X.shape != (len(self.src), len(FEATURE_NAMES)):
            raise ValidationError(f"bad feature matrix shape {self.X.shape}")
        if self.y.shape != (len(self.src),):
            raise ValidationError(f"bad target shape {self.y.shape}")

    def __len__(self) -> int:
        return len(self.src)

    def row_raw(self, i: int) -> RawSample:
        return RawSample(self.src[i], self.dst[i], float(self.X[i, 2]),
                         float(self.X[i, 3]), float(self.X[i, 4]), float(self.y[i]))

    def raw_samples(self) -> list[RawSample]:
        return [self.row_raw(i) for i in range(len(self))]


def extract_samples(qt: QTables, nm: NormalizedMetrics) -> list[RawSample]:
    """One sample per (dst, state, action) Q-entry, in sorted key order."""
    out: list[RawSample] = []
    for dst in qt.destinations():
        table = qt.tables[dst]
        for (state, arc) in sorted(table):
            feats = nm.feats.get(arc)
            if feats is None:
                raise ValidationError(f"normalized metrics missing arc {arc} used by q-table")
            out.append(RawSample(
                src=state, dst=dst,
                bwd_hat=feats.bwd_hat, delay_hat=feats.delay_hat,
                pkloss_hat=feats.pkloss_hat, qvalue=table[(state, arc)],
            ))
    return out


def dedupe(rows: list[RawSample]) -> list[RawSample]:
    """Drop exact duplicates, keeping the first occurrence (stable)."""
    seen: set[tuple] = set()
    out = []
    for r in rows:
        k = r.key()
        if k not in seen:
            seen.add(k)
            out.append(r)
    return out


_NUMERIC_FIELDS = ("bwd_hat", "delay_hat", "pkloss_hat", "qvalue")


def impute(rows: list[RawSample]) -> list[RawSample]:
    """Replace missing numeric cells with the column median over present values."""
    medians: dict[str, float] = {}
    for name in _NUMERIC_FIELDS:
        present = [getattr(r, name) for r in rows if getattr(r, name) is not None]
        if rows and not present:
            raise ValidationError(f"column {name} is entirely missing; cannot impute")
        if present:
            medians[name] = float(np.median(present))
    out = []
    for r in rows:
        fixes = {name: medians[name] for name in _NUMERIC_FIELDS
                 if getattr(r, name) is None}
        out.append(replace(r, **fixes) if fixes else r)
    return out


def iqr_band(values: list[float] | np.ndarray, k: float = IQR_FACTOR) -> tuple[float, float]:
    """Winsorization band [Q1 - k*IQR, Q3 + k*IQR]; quartiles by linear interpolation."""
    arr = np.asarray(values, dtype=float)
    q1, q3 = np.quantile(arr, [0.25, 0.75])
    iqr = q3 - q1
    return float(q1 - k * iqr), float(q3 + k * iqr)


def iqr_clip(
    values: list[float] | np.ndarray, k: float = IQR_FACTOR
) -> tuple[np.ndarray, tuple[float, float]]:
    """Clip values into the IQR band; returns (clipped, band)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValidationError("cannot clip an empty target column")
    lo, hi = iqr_band(arr, k)
    return np.clip(arr, lo, hi), (lo, hi)


def fit_target_encoder(
    categories: list[str], targets: list[float] | np.ndarray, k: float = ENCODER_SMOOTHING
) -> TargetEncoder:
    """enc(c) = (n_c * mean_c + k * global_mean) / (n_c + k)."""
    if len(categories) != len(targets):
        raise ValidationError("categories and targets must have equal length")
    if not categories:
        raise ValidationError("cannot fit an encoder on no rows")
    arr = np.asarray(targets, dtype=float)
    prior = float(arr.mean())
    table: dict[str, float] = {}
    cats = np.asarray(categories)
    for c in sorted(set(categories)):
        sel = arr[cats == c]
        n_c = sel.size
        table[c] = float((n_c * sel.mean() + k * prior) / (n_c + k))
    return TargetEncoder(table=table, prior=prior, k=k)


def preprocess(raw: list[RawSample], provenance: dict | None = None) -> Dataset:
    """Full cleaning pipeline; metadata records every fitted parameter."""
    if not raw:
        raise ValidationError("empty sample list")
    rows = impute(dedupe(raw))
    targets = np.asarray([r.qvalue for r in rows], dtype=float)
    clipped, band = iqr_clip(targets)
    src_ids = [r.src for r in rows]
    dst_ids = [r.dst for r in rows]
    src_enc = fit_target_encoder(src_ids, clipped)
    dst_enc = fit_target_encoder(dst_ids, clipped)
    X = np.empty((len(rows), len(FEATURE_NAMES)), dtype=float)
    for i, r in enumerate(rows):
        X[i] = (src_enc.encode(r.src), dst_enc.encode(r.dst),
                r.bwd_hat, r.delay_hat, r.pkloss_hat)
    meta = {
        "schema_version": 1,
        "n_rows": len(rows),
        "n_input": len(raw),
        "iqr": {"k": IQR_FACTOR, "lower": band[0], "upper": band[1],
                "n_clipped": int(np.sum(targets != clipped))},
        "src_encoder": src_enc.to_dict(),
        "dst_encoder": dst_enc.to_dict(),
    }
    if provenance:
        meta["provenance"] = provenance
    return Dataset(src=tuple(src_ids), dst=tuple(dst_ids), X=X,
                   y=np.asarray(clipped, dtype=float), meta=meta)


def split(d: Dataset, test_frac: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded uniform shuffle into disjoint, exhaustive (train, test)."""
    if not (0.0 <= test_frac < 1.0):
        raise ValidationError("test_frac must be in [0, 1)")
    n = len(d)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(n * test_frac)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])

    def take(idx: np.ndarray, part: str) -> Dataset:
        meta = dict(d.meta)
        meta["split"] = {"part": part, "test_frac": test_frac, "seed": seed}
        return Dataset(
            src=tuple(d.src[i] for i in idx), dst=tuple(d.dst[i] for i in idx),
            X=d.X[idx].copy(), y=d.y[idx].copy(), meta=meta,
        )

    return take(train_idx, "train"), take(test_idx, "test")


# ---------------------------------------------------------------------------
# persistence: CSV table + JSON metadata sidecar
# ---------------------------------------------------------------------------

def sidecar_path(path: str | FilePath) -> FilePath:
    return FilePath(path).with_suffix(".meta.json")


def dataset_csv_text(d: Dataset) -> str:
    buf = io.StringIO()
    buf.write(",".join(DATASET_HEADER) + "\n")
    for i in range(len(d)):
        cells = [d.src[i], d.dst[i]] + [fmt(v) for v in d.X[i]] + [fmt(d.y[i])]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def write_csv(d: Dataset, path: str | FilePath) -> None:
    write_text_atomic(path, dataset_csv_text(d))
    write_text_atomic(sidecar_path(path), json.dumps(d.meta, sort_keys=True, indent=1) + "\n")


def read_csv(path: str | FilePath) -> Dataset:
    p = FilePath(path)
    if not p.is_file():
        raise ValidationError(f"dataset file not found: {p}")
    side = sidecar_path(p)
    if not side.is_file():
        raise ValidationError(f"dataset sidecar not found: {side}")
    meta = json.loads(side.read_text(encoding="utf-8"))
    src: list[str] = []
    dst: list[str] = []
    xs: list[list[float]] = []
    ys: list[float] = []
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DATASET_HEADER:
            raise ValidationError(f"{p.name}: bad dataset header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(DATASET_HEADER):
                raise ValidationError(f"{p.name} row {lineno}: expected "
                                      f"{len(DATASET_HEADER)} cells, got {len(row)}")
            try:
                nums = [float(c) for c in row[2:]]
            except ValueError as exc:
                raise ValidationError(f"{p.name} row {lineno}: non-numeric cell") from exc
            if not all(math.isfinite(v) for v in nums):
                raise ValidationError(f"{p.name} row {lineno}: non-finite cell")
            src.append(row[0])
            dst.append(row[1])
            xs.append(nums[:-1])
            ys.append(nums[-1])
    return Dataset(src=tuple(src), dst=tuple(dst),
                   X=np.asarray(xs, dtype=float).reshape(len(src), len(FEATURE_NAMES)),
                   y=np.asarray(ys, dtype=float), meta=meta)
