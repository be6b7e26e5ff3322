"""Interpretable regressors that mimic the agent's Q-function.

Four candidates: ordinary least squares, ridge, a bagged forest and a
second-order boosted ensemble, plus fidelity scoring (R^2 / MSE) and
best-model selection. Trees share one exact greedy split finder driven by
gradient/hessian sums, so the variance-reduction tree is the special case
g = -y, h = 1, lambda = 0 (leaf = mean, gain = SSE decrease).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path as FilePath

import numpy as np

from .errors import ValidationError
from .util import write_text_atomic

_GAIN_EPS = 1e-12


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearModel:
    coef: np.ndarray
    intercept: float
    lam: float = 0.0


@dataclass(frozen=True)
class TreeNode:
    """Internal node (feature/threshold/left/right) or leaf (value); count = training rows."""

    count: int
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass(frozen=True)
class RegressionTree:
    root: TreeNode
    max_depth: int | None = None
    min_leaf: int = 1

    @cached_property
    def _compiled(self) -> tuple[np.ndarray, ...]:
        """Flatten to arrays (feature, threshold, left, right, value) for batch eval."""
        feat: list[int] = []
        thr: list[float] = []
        left: list[int] = []
        right: list[int] = []
        val: list[float] = []

        def add(node: TreeNode) -> int:
            idx = len(feat)
            feat.append(-1 if node.is_leaf else node.feature)
            thr.append(0.0 if node.is_leaf else node.threshold)
            left.append(0)
            right.append(0)
            val.append(node.value if node.is_leaf else 0.0)
            if not node.is_leaf:
                left[idx] = add(node.left)
                right[idx] = add(node.right)
            return idx

        add(self.root)
        return (np.asarray(feat), np.asarray(thr), np.asarray(left),
                np.asarray(right), np.asarray(val))

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        feat, thr, left, right, val = self._compiled
        idx = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            live = feat[idx] >= 0
            if not live.any():
                break
            li = idx[live]
            go_left = X[rows[live], feat[li]] <= thr[li]
            idx[live] = np.where(go_left, left[li], right[li])
        return val[idx]

    def n_leaves(self) -> int:
        feat = self._compiled[0]
        return int(np.sum(feat < 0))


@dataclass(frozen=True)
class TreeEnsemble:
    """kind 'forest' averages trees; 'boosted' adds base + eta * each tree."""

    trees: tuple[RegressionTree, ...]
    kind: str
    eta: float = 1.0
    base_score: float = 0.0

    def __post_init__(self):
        if self.kind not in ("forest", "boosted"):
            raise ValidationError(f"unknown ensemble kind {self.kind!r}")
        if self.kind == "forest" and not self.trees:
            raise ValidationError("forest needs at least one tree")


Model = LinearModel | RegressionTree | TreeEnsemble


@dataclass(frozen=True)
class Fidelity:
    r2: float
    mse: float
    n_test: int


# ---------------------------------------------------------------------------
# linear / ridge
# ---------------------------------------------------------------------------

def _check_shapes(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise ValidationError(f"bad training shapes X{X.shape} y{y.shape}")
    if len(X) < 2:
        raise ValidationError("need at least 2 training rows")
    return X, y


def fit_linear(X: np.ndarray, y: np.ndarray) -> LinearModel:
    """Least squares via orthogonal decomposition (not normal equations)."""
    X, y = _check_shapes(X, y)
    n, m = X.shape
    design = np.hstack([X, np.ones((n, 1))])
    rank = np.linalg.matrix_rank(design)
    if rank < m + 1:
        offending = [j for j in range(m)
                     if np.linalg.matrix_rank(np.delete(design, j, axis=1)) == rank]
        raise ValidationError(
            f"rank-deficient design matrix (rank {rank} < {m + 1}); "
            f"redundant feature columns: {offending}"
        )
    sol, *_ = np.linalg.lstsq(design, y, rcond=None)
    return LinearModel(coef=sol[:m], intercept=float(sol[m]), lam=0.0)


def fit_ridge(X: np.ndarray, y: np.ndarray, lam: float = 1.0) -> LinearModel:
    """Minimize SSE + lam * ||coef||^2 with an unpenalized intercept."""
    if lam < 0:
        raise ValidationError("lam must be >= 0")
    X, y = _check_shapes(X, y)
    n, m = X.shape
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    aug = np.vstack([Xc, math.sqrt(lam) * np.eye(m)])
    rhs = np.concatenate([yc, np.zeros(m)])
    coef, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    return LinearModel(coef=coef, intercept=y_mean - float(x_mean @ coef), lam=lam)


# ---------------------------------------------------------------------------
# exact greedy split search
# ---------------------------------------------------------------------------

def _best_split_for_feature(
    x: np.ndarray, g: np.ndarray, h: np.ndarray, lam: float, min_leaf: int
) -> tuple[float, float] | None:
    """Best (gain, threshold) along one feature, or None. Thresholds are
    midpoints between consecutive distinct sorted values; first maximal
    gain wins, so ties resolve to the lowest threshold."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cg = np.cumsum(g[order])
    ch = np.cumsum(h[order])
    n = len(xs)
    cut = np.nonzero(xs[:-1] < xs[1:])[0]
    if cut.size == 0:
        return None
    counts = cut + 1
    valid = (counts >= min_leaf) & (n - counts >= min_leaf)
    cut = cut[valid]
    if cut.size == 0:
        return None
    G, H = cg[-1], ch[-1]
    gl, hl = cg[cut], ch[cut]
    gr, hr = G - gl, H - hl
    if lam > 0.0:
        gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - G * G / (H + lam))
    else:
        # factored form (gl*hr - gr*hl)^2 / (hl*hr*H): exact 0 on constant
        # gradients instead of catastrophically cancelling
        num = gl * hr - gr * hl
        gain = 0.5 * num * num / (hl * hr * H)
    best = int(np.argmax(gain))
    if gain[best] <= _GAIN_EPS:
        return None
    thr = 0.5 * (xs[cut[best]] + xs[cut[best] + 1])
    return float(gain[best]), float(thr)


def _build_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    lam: float,
    max_depth: int | None,
    min_leaf: int,
    rng: np.random.Generator | None = None,
    n_split_features: int | None = None,
) -> TreeNode:
    m = X.shape[1]

    def leaf(idx: np.ndarray) -> TreeNode:
        value = -float(g[idx].sum()) / (float(h[idx].sum()) + lam)
        return TreeNode(count=len(idx), value=value)

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        if (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_leaf:
            return leaf(idx)
        if n_split_features is not None and n_split_features < m:
            feats = np.sort(rng.choice(m, size=n_split_features, replace=False))
        else:
            feats = np.arange(m)
        best_gain = -math.inf
        best_feat = -1
        best_thr = 0.0
        for f in feats:
            found = _best_split_for_feature(X[idx, f], g[idx], h[idx], lam, min_leaf)
            if found is not None and found[0] > best_gain:
                best_gain, best_thr = found
                best_feat = int(f)
        if best_feat < 0:
            return leaf(idx)
        go_left = X[idx, best_feat] <= best_thr
        return TreeNode(
            count=len(idx), feature=best_feat, threshold=best_thr,
            left=grow(idx[go_left], depth + 1), right=grow(idx[~go_left], depth + 1),
        )

    return grow(np.arange(len(X)), 0)


def fit_tree(
    X: np.ndarray, y: np.ndarray, max_depth: int | None = None, min_leaf: int = 1
) -> RegressionTree:
    """Greedy variance-reduction regression tree; leaves predict the mean."""
    X, y = _check_shapes(X, y)
    root = _build_tree(X, -y, np.ones(len(y)), lam=0.0,
                       max_depth=max_depth, min_leaf=min_leaf)
    return RegressionTree(root=root, max_depth=max_depth, min_leaf=min_leaf)


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 100,
    max_depth: int | None = 16,
    feature_frac: float | None = None,
    min_leaf: int = 5,
    seed: int = 0,
    bootstrap: bool = True,
) -> TreeEnsemble:
    """Bagged trees with per-split feature subsampling (default sqrt(M)/M)."""
    X, y = _check_shapes(X, y)
    if n_trees < 1:
        raise ValidationError("n_trees must be >= 1")
    n, m = X.shape
    frac = feature_frac if feature_frac is not None else math.sqrt(m) / m
    if not (0.0 < frac <= 1.0):
        raise ValidationError("feature_frac must be in (0, 1]")
    n_split_features = max(1, int(round(frac * m)))
    trees = []
    for child_seed in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child_seed)
        idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        root = _build_tree(
            X[idx], -y[idx], np.ones(len(idx)), lam=0.0,
            max_depth=max_depth, min_leaf=min_leaf,
            rng=rng, n_split_features=n_split_features if n_split_features < m else None,
        )
        trees.append(RegressionTree(root=root, max_depth=max_depth, min_leaf=min_leaf))
    return TreeEnsemble(trees=tuple(trees), kind="forest")


def fit_gbt(
    X: np.ndarray,
    y: np.ndarray,
    n_rounds: int = 200,
    eta: float = 0.1,
    max_depth: int | None = 6,
    lam: float = 1.0,
    min_leaf: int = 5,
) -> TreeEnsemble:
    """Second-order boosting for squared loss.

    Per round: gradients g_i = pred_i - y_i, hessians 1; leaf weight
    -G/(H + lam); split kept only when the gain is positive. The model
    predicts base (mean of y) + eta * sum of trees.
    """
    X, y = _check_shapes(X, y)
    if n_rounds < 0 or eta <= 0 or lam < 0:
        raise ValidationError("bad boosting hyperparameters")
    base = float(y.mean())
    if n_rounds == 0:
        warnings.warn("n_rounds=0: boosted model predicts the base score only")
        return TreeEnsemble(trees=(), kind="boosted", eta=eta, base_score=base)
    pred = np.full(len(y), base)
    ones = np.ones(len(y))
    trees = []
    for _ in range(n_rounds):
        g = pred - y
        root = _build_tree(X, g, ones, lam=lam, max_depth=max_depth, min_leaf=min_leaf)
        tree = RegressionTree(root=root, max_depth=max_depth, min_leaf=min_leaf)
        trees.append(tree)
        pred = pred + eta * tree.predict_batch(X)
    return TreeEnsemble(trees=tuple(trees), kind="boosted", eta=eta, base_score=base)


# ---------------------------------------------------------------------------
# inference / scoring / selection
# ---------------------------------------------------------------------------

def predict_batch(model: Model, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValidationError("predict_batch expects a 2-D feature matrix")
    if isinstance(model, LinearModel):
        return X @ model.coef + model.intercept
    if isinstance(model, RegressionTree):
        return model.predict_batch(X)
    if isinstance(model, TreeEnsemble):
        if model.kind == "forest":
            out = np.zeros(len(X))
            for tree in model.trees:
                out += tree.predict_batch(X)
            return out / len(model.trees)
        out = np.full(len(X), model.base_score)
        for tree in model.trees:
            out += model.eta * tree.predict_batch(X)
        return out
    raise ValidationError(f"unknown model type {type(model).__name__}")


def predict(model: Model, x: np.ndarray) -> float:
    return float(predict_batch(model, np.asarray(x, dtype=float)[None, :])[0])


def fidelity(model: Model, X: np.ndarray, y: np.ndarray) -> Fidelity:
    """R^2 and MSE of the model on a held-out set."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValidationError("empty test set")
    resid = predict_batch(model, X) - y
    mse = float(np.mean(resid * resid))
    ss_res = float(np.sum(resid * resid))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else -math.inf
    else:
        r2 = 1.0 - ss_res / ss_tot
    return Fidelity(r2=r2, mse=mse, n_test=len(y))


def select_best(candidates: list[tuple[Model, Fidelity]]) -> Model:
    """Highest R^2; ties by lower MSE, then earliest candidate."""
    if not candidates:
        raise ValidationError("no candidates")
    best_model, best_fid = candidates[0]
    for model, fid in candidates[1:]:
        if fid.r2 > best_fid.r2 or (fid.r2 == best_fid.r2 and fid.mse < best_fid.mse):
            best_model, best_fid = model, fid
    return best_model


# ---------------------------------------------------------------------------
# JSON serialization (lets the pipeline stages run in separate invocations)
# ---------------------------------------------------------------------------

def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"n": node.count, "v": node.value}
    return {"n": node.count, "f": node.feature, "t": node.threshold,
            "l": _node_to_dict(node.left), "r": _node_to_dict(node.right)}


def _node_from_dict(d: dict) -> TreeNode:
    if "f" not in d:
        return TreeNode(count=d["n"], value=d["v"])
    return TreeNode(count=d["n"], feature=d["f"], threshold=d["t"],
                    left=_node_from_dict(d["l"]), right=_node_from_dict(d["r"]))


def _tree_to_dict(tree: RegressionTree) -> dict:
    return {"max_depth": tree.max_depth, "min_leaf": tree.min_leaf,
            "root": _node_to_dict(tree.root)}


def _tree_from_dict(d: dict) -> RegressionTree:
    return RegressionTree(root=_node_from_dict(d["root"]),
                          max_depth=d["max_depth"], min_leaf=d["min_leaf"])


def model_to_dict(model: Model, feature_names: list[str] | None = None,
                  metadata: dict | None = None) -> dict:
    doc: dict = {"schema_version": 1}
    if isinstance(model, LinearModel):
        doc["kind"] = "ridge" if model.lam > 0 else "linear"
        doc["coef"] = [float(c) for c in model.coef]
        doc["intercept"] = model.intercept
        doc["lam"] = model.lam
    elif isinstance(model, RegressionTree):
        doc["kind"] = "tree"
        doc["tree"] = _tree_to_dict(model)
    elif isinstance(model, TreeEnsemble):
        doc["kind"] = model.kind
        doc["eta"] = model.eta
        doc["base_score"] = model.base_score
        doc["trees"] = [_tree_to_dict(t) for t in model.trees]
    else:
        raise ValidationError(f"cannot serialize {type(model).__name__}")
    if feature_names is not None:
        doc["feature_names"] = list(feature_names)
    if metadata:
        doc["metadata"] = metadata
    return doc


def model_from_dict(doc: dict) -> Model:
    kind = doc.get("kind")
    if kind in ("linear", "ridge"):
        return LinearModel(coef=np.asarray(doc["coef"], dtype=float),
                           intercept=doc["intercept"], lam=doc["lam"])
    if kind == "tree":
        return _tree_from_dict(doc["tree"])
    if kind in ("forest", "boosted"):
        return TreeEnsemble(trees=tuple(_tree_from_dict(t) for t in doc["trees"]),
                            kind=kind, eta=doc["eta"], base_score=doc["base_score"])
    raise ValidationError(f"unknown model kind {kind!r}")


def save_model(model: Model, path: str | FilePath,
               feature_names: list[str] | None = None,
               metadata: dict | None = None) -> None:
    doc = model_to_dict(model, feature_names=feature_names, metadata=metadata)
    write_text_atomic(path, json.dumps(doc, sort_keys=True) + "\n")


def load_model(path: str | FilePath) -> Model:
    p = FilePath(path)
    if not p.is_file():
        raise ValidationError(f"model file not found: {p}")
    return model_from_dict(json.loads(p.read_text(encoding="utf-8")))
