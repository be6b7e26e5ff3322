"""Model explanations: exact Shapley attributions, PDP and ICE curves.

Shapley values use full subset enumeration with an interventional value
function: v(S) = mean over background rows of the model evaluated on the
instance's features for S and the background row's features elsewhere.
Five features means 32 coalitions, so exactness is cheap; evaluation is
batched through one model call per chunk of instances.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .surrogate import Model, predict_batch
from .util import fmt

MAX_ENUM_FEATURES = 15


@dataclass(frozen=True)
class ShapValues:
    """Per-feature attribution phi plus the base value (mean background prediction)."""

    phi: np.ndarray
    base: float

    def total(self) -> float:
        return float(self.base + self.phi.sum())


@dataclass(frozen=True)
class PDPCurve:
    feature: int
    grid: np.ndarray
    mean_pred: np.ndarray


@dataclass(frozen=True)
class ICECurves:
    feature: int
    grid: np.ndarray
    values: np.ndarray  # (n_rows, len(grid))


@dataclass(frozen=True)
class FeatureRanking:
    """(feature name, mean |phi|) pairs, descending score."""

    entries: tuple[tuple[str, float], ...]

    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.entries)


def _subset_weights(m: int) -> np.ndarray:
    """w[s] = s! (m - s - 1)! / m! for coalition size s."""
    fact = [math.factorial(i) for i in range(m + 1)]
    return np.array([fact[s] * fact[m - s - 1] / fact[m] for s in range(m)])


def _coalition_values(
    model: Model, rows: np.ndarray, background: np.ndarray
) -> np.ndarray:
    """v(S) for every subset mask and every row: shape (n_rows, 2^m).

    One model call per chunk of rows; within a chunk the composite matrix
    stacks (subset, background) combinations.
    """
    n_rows, m = rows.shape
    n_bg = len(background)
    n_sub = 1 << m
    masks = np.arange(n_sub)
    member = ((masks[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)  # (2^m, m)
    chunk = max(1, 65536 // (n_sub * n_bg))
    out = np.empty((n_rows, n_sub))
    for start in range(0, n_rows, chunk):
        stop = min(start + chunk, n_rows)
        block = rows[start:stop]
        composite = np.broadcast_to(
            background[None, None, :, :], (len(block), n_sub, n_bg, m)
        ).copy()
        inst = np.broadcast_to(block[:, None, None, :], composite.shape)
        keep = np.broadcast_to(member[None, :, None, :], composite.shape)
        composite[keep] = inst[keep]
        preds = predict_batch(model, composite.reshape(-1, m))
        out[start:stop] = preds.reshape(len(block), n_sub, n_bg).mean(axis=2)
    return out


def _phi_from_values(v: np.ndarray, m: int) -> np.ndarray:
    """Shapley combination over subset values for one row (v has length 2^m)."""
    w = _subset_weights(m)
    masks = np.arange(1 << m)
    sizes = np.array([bin(x).count("1") for x in masks])
    phi = np.empty(m)
    for j in range(m):
        bit = 1 << j
        without = masks[(masks & bit) == 0]
        phi[j] = float(np.sum(w[sizes[without]] * (v[without | bit] - v[without])))
    return phi


def shap_exact(
    model: Model, instance: np.ndarray, background: np.ndarray
) -> ShapValues:
    """Exact interventional Shapley values by subset enumeration."""
    instance = np.asarray(instance, dtype=float)
    background = np.asarray(background, dtype=float)
    if background.ndim != 2 or len(background) == 0:
        raise ValidationError("background must be a non-empty 2-D matrix")
    m = instance.shape[-1]
    if m > MAX_ENUM_FEATURES:
        raise ValidationError(
            f"{m} features exceeds the enumeration bound {MAX_ENUM_FEATURES}; "
            "attribute a smaller feature set"
        )
    v = _coalition_values(model, instance[None, :], background)[0]
    return ShapValues(phi=_phi_from_values(v, m), base=float(v[0]))


def shap_many(
    model: Model, rows: np.ndarray, background: np.ndarray
) -> tuple[np.ndarray, float]:
    """phi matrix (n_rows, m) and the shared base value for many instances."""
    rows = np.asarray(rows, dtype=float)
    background = np.asarray(background, dtype=float)
    if rows.ndim != 2 or len(rows) == 0:
        raise ValidationError("rows must be a non-empty 2-D matrix")
    m = rows.shape[1]
    if m > MAX_ENUM_FEATURES:
        raise ValidationError(f"{m} features exceeds the enumeration bound")
    v = _coalition_values(model, rows, background)
    phi = np.vstack([_phi_from_values(v[i], m) for i in range(len(rows))])
    return phi, float(v[0, 0])


def shap_dependence(
    model: Model, rows: np.ndarray, feature: int, background: np.ndarray
) -> np.ndarray:
    """(feature value, phi_feature) per row; plot-ready."""
    phi, _ = shap_many(model, rows, background)
    return np.column_stack([rows[:, feature], phi[:, feature]])


def quantile_grid(x: np.ndarray, grid_size: int = 20) -> np.ndarray:
    """Equally spaced quantiles of the feature; sorted, may repeat on ties."""
    if grid_size < 2:
        raise ValidationError("grid_size must be >= 2")
    return np.quantile(np.asarray(x, dtype=float), np.linspace(0.0, 1.0, grid_size))


def ice(model: Model, X: np.ndarray, feature: int, grid_size: int = 20) -> ICECurves:
    """Per-row prediction curves as one feature sweeps its quantile grid."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise ValidationError("empty dataset")
    grid = quantile_grid(X[:, feature], grid_size)
    values = np.empty((len(X), len(grid)))
    for gi, gval in enumerate(grid):
        mod = X.copy()
        mod[:, feature] = gval
        values[:, gi] = predict_batch(model, mod)
    return ICECurves(feature=feature, grid=grid, values=values)


def pdp(model: Model, X: np.ndarray, feature: int, grid_size: int = 20) -> PDPCurve:
    """Mean marginal effect; exactly the column mean of the ICE curves."""
    curves = ice(model, X, feature, grid_size)
    return PDPCurve(feature=feature, grid=curves.grid,
                    mean_pred=curves.values.mean(axis=0))


def sample_rows(n: int, max_rows: int, seed: int) -> np.ndarray:
    """Seeded sorted subsample of row indices (all rows when n <= max_rows)."""
    if n <= max_rows:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=max_rows, replace=False))


def ranking_from_phi(
    phi: np.ndarray, feature_names: list[str] | tuple[str, ...]
) -> FeatureRanking:
    """Mean |phi| per feature, descending; ties break lexicographically."""
    scores = np.abs(phi).mean(axis=0)
    entries = sorted(zip(feature_names, scores), key=lambda e: (-e[1], e[0]))
    return FeatureRanking(entries=tuple((n, float(s)) for n, s in entries))


def rank_features(
    model: Model,
    X: np.ndarray,
    feature_names: list[str] | tuple[str, ...],
    background: np.ndarray,
    max_rows: int = 2000,
    seed: int = 0,
) -> FeatureRanking:
    """Mean |phi| per feature over a seeded subsample, descending; ties by name."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise ValidationError("empty dataset")
    if len(feature_names) != X.shape[1]:
        raise ValidationError("feature_names length must match feature count")
    idx = sample_rows(len(X), max_rows, seed)
    phi, _ = shap_many(model, X[idx], background)
    return ranking_from_phi(phi, feature_names)


# ---------------------------------------------------------------------------
# plot-data CSV builders (the artifact's figure stand-ins)
# ---------------------------------------------------------------------------

def pdp_csv_text(curves: list[tuple[str, PDPCurve]]) -> str:
    buf = io.StringIO()
    buf.write("feature,grid_value,mean_pred\n")
    for name, curve in curves:
        for gval, mp in zip(curve.grid, curve.mean_pred):
            buf.write(f"{name},{fmt(gval)},{fmt(mp)}\n")
    return buf.getvalue()


def ice_csv_text(curves: ICECurves, row_ids: list[int] | None = None) -> str:
    ids = row_ids if row_ids is not None else list(range(len(curves.values)))
    buf = io.StringIO()
    buf.write("row_id,grid_value,pred\n")
    for rid, row in zip(ids, curves.values):
        for gval, pred in zip(curves.grid, row):
            buf.write(f"{rid},{fmt(gval)},{fmt(pred)}\n")
    return buf.getvalue()


def shap_csv_text(
    phi: np.ndarray, feature_names: list[str] | tuple[str, ...],
    row_ids: list[int] | None = None,
) -> str:
    ids = row_ids if row_ids is not None else list(range(len(phi)))
    buf = io.StringIO()
    buf.write("row_id,feature,phi\n")
    for rid, row in zip(ids, phi):
        for name, value in zip(feature_names, row):
            buf.write(f"{rid},{name},{fmt(value)}\n")
    return buf.getvalue()


def dependence_csv_text(points: np.ndarray, row_ids: list[int] | None = None) -> str:
    ids = row_ids if row_ids is not None else list(range(len(points)))
    buf = io.StringIO()
    buf.write("row_id,feature_value,phi\n")
    for rid, (x, p) in zip(ids, points):
        buf.write(f"{rid},{fmt(x)},{fmt(p)}\n")
    return buf.getvalue()
