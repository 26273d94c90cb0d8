"""Regression random forest built from scratch.

CART trees with exhaustive split search, bootstrap aggregation, and
per-prediction ensemble statistics: mean, sample standard deviation,
coefficient of variation, and the count of trees predicting more than two
standard deviations from the mean ("odd count"). The spread statistics are
the uncertainty signal the takeover supervisor acts on.

Split rule: at a node the candidate (feature, threshold) maximizing

    gain = (n_node / n_total) * (var(node) - w_l*var(left) - w_r*var(right))

is chosen, with population variances and w_l, w_r the child fractions of the
node. The node is split only when the gain reaches ``min_impurity_decrease``.
Candidate thresholds are midpoints of consecutive distinct sorted feature
values; ties break toward the lowest feature index, then lowest threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .hashing import sha256_of_json

SCHEMA_VERSION = 1


class Leaf:
    __slots__ = ("value", "count")

    def __init__(self, value: float, count: int):
        self.value = value
        self.count = count


class Split:
    __slots__ = ("feature", "threshold", "left", "right")

    def __init__(self, feature: int, threshold: float, left: "TreeNode", right: "TreeNode"):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right


TreeNode = Union[Leaf, Split]


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    bootstrap_size: Optional[int] = None   # None -> size of the training set
    min_samples_split: int = 2
    max_features_fraction: float = 1.0
    min_impurity_decrease: float = 0.001
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.bootstrap_size is not None and self.bootstrap_size < 1:
            raise ValueError("bootstrap_size must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if not 0.0 < self.max_features_fraction <= 1.0:
            raise ValueError("max_features_fraction must be in (0, 1]")
        if self.min_impurity_decrease < 0:
            raise ValueError("min_impurity_decrease must be >= 0")


@dataclass(frozen=True)
class PredictionStats:
    mean: float
    std: float
    cov: float
    odd_count: int
    per_tree: Optional[np.ndarray] = None


@dataclass
class Forest:
    trees: list
    config: ForestConfig
    n_features: int
    eps: float = 0.01              # CoV regularizer: cov = std / (|mean| + eps)
    dataset_meta: dict = field(default_factory=dict)

    def predict_with_stats(self, x, eps: Optional[float] = None) -> PredictionStats:
        """Ensemble prediction with spread statistics for one input vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise ValueError(
                f"input has {x.shape} features, forest was trained on {self.n_features}"
            )
        e = self.eps if eps is None else eps
        vals = np.array([predict_tree(t, x) for t in self.trees])
        n = len(vals)
        mean = float(vals.mean())
        if n >= 2:
            std = float(math.sqrt(float(((vals - mean) ** 2).sum()) / (n - 1)))
        else:
            std = 0.0
        cov = std / (abs(mean) + e)
        odd = int((np.abs(vals - mean) > 2.0 * std).sum()) if std > 0.0 else 0
        return PredictionStats(mean=mean, std=std, cov=cov, odd_count=odd, per_tree=vals)

    def predict(self, x) -> float:
        return self.predict_with_stats(x).mean


def predict_tree(node: TreeNode, x: np.ndarray) -> float:
    while isinstance(node, Split):
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.value


# ---------------------------------------------------------------------------
# training

def fit_tree(X: np.ndarray, y: np.ndarray, cfg: ForestConfig,
             rng: np.random.Generator) -> TreeNode:
    """Grow one CART tree (no depth limit) on the given samples."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if len(y) < 1:
        raise ValueError("cannot fit a tree on an empty dataset")
    n_features = X.shape[1]
    k = math.ceil(cfg.max_features_fraction * n_features)
    n_total = len(y)

    def grow(idx: np.ndarray) -> TreeNode:
        ys = y[idx]
        n = len(ys)
        mean = float(ys.mean())
        if n < cfg.min_samples_split or float(np.var(ys)) == 0.0:
            return Leaf(mean, n)
        if k < n_features:
            feats = np.sort(rng.choice(n_features, size=k, replace=False))
        else:
            feats = range(n_features)
        best = _best_split(X, ys, idx, feats, n, n_total)
        if best is None or best[0] < cfg.min_impurity_decrease:
            return Leaf(mean, n)
        _, feature, threshold = best
        mask = X[idx, feature] <= threshold
        return Split(feature, threshold, grow(idx[mask]), grow(idx[~mask]))

    return grow(np.arange(n_total))


def _best_split(X, ys, idx, feats, n, n_total):
    """Exhaustive scan over candidate splits; returns (gain, feature, threshold)."""
    var_node = float(np.var(ys))
    best = None
    for f in feats:
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs_s = xs[order]
        ys_s = ys[order]
        distinct = np.nonzero(xs_s[1:] > xs_s[:-1])[0]  # split after position i
        if len(distinct) == 0:
            continue
        cum1 = np.cumsum(ys_s)
        cum2 = np.cumsum(ys_s * ys_s)
        i = distinct + 1                      # left child sizes
        nl = i.astype(np.float64)
        nr = n - nl
        sl, sr = cum1[distinct], cum1[-1] - cum1[distinct]
        ql, qr = cum2[distinct], cum2[-1] - cum2[distinct]
        var_l = np.maximum(ql / nl - (sl / nl) ** 2, 0.0)
        var_r = np.maximum(qr / nr - (sr / nr) ** 2, 0.0)
        gain = (n / n_total) * (var_node - (nl / n) * var_l - (nr / n) * var_r)
        j = int(np.argmax(gain))              # first max -> lowest threshold
        if best is None or gain[j] > best[0]:
            thr = 0.5 * (xs_s[distinct[j]] + xs_s[distinct[j] + 1])
            best = (float(gain[j]), int(f), float(thr))
    return best


def fit_forest(X: np.ndarray, y: np.ndarray, cfg: ForestConfig,
               dataset_meta: Optional[dict] = None, eps: float = 0.01) -> Forest:
    """Bagged ensemble: tree i is fit on its own with-replacement resample.

    Each tree draws its bootstrap indices and feature subsets from an
    independent seeded substream, so training is deterministic per
    (data, config) and trees could be fit in any order.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("cannot fit a forest on an empty dataset")
    n = len(y)
    B = cfg.bootstrap_size if cfg.bootstrap_size is not None else n
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    trees = []
    for i in range(cfg.n_trees):
        rng = np.random.default_rng(streams[i])
        idx = rng.integers(0, n, size=B)
        trees.append(fit_tree(X[idx], y[idx], cfg, rng))
    return Forest(trees=trees, config=cfg, n_features=X.shape[1],
                  eps=eps, dataset_meta=dict(dataset_meta or {}))


# ---------------------------------------------------------------------------
# serialization

def _encode_node(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"v": node.value, "n": node.count}
    return {"f": node.feature, "t": node.threshold,
            "l": _encode_node(node.left), "r": _encode_node(node.right)}


def _decode_node(obj: dict) -> TreeNode:
    if "v" in obj:
        return Leaf(obj["v"], obj["n"])
    return Split(obj["f"], obj["t"], _decode_node(obj["l"]), _decode_node(obj["r"]))


def meta_hash(meta: dict) -> str:
    return sha256_of_json(meta)


def save_forest(forest: Forest, path) -> None:
    cfg = forest.config
    obj = {
        "schema_version": SCHEMA_VERSION,
        "kind": "random-forest",
        "config": {
            "n_trees": cfg.n_trees,
            "bootstrap_size": cfg.bootstrap_size,
            "min_samples_split": cfg.min_samples_split,
            "max_features_fraction": cfg.max_features_fraction,
            "min_impurity_decrease": cfg.min_impurity_decrease,
            "seed": cfg.seed,
        },
        "n_features": forest.n_features,
        "eps": forest.eps,
        "dataset_meta": forest.dataset_meta,
        "dataset_meta_hash": meta_hash(forest.dataset_meta),
        "trees": [_encode_node(t) for t in forest.trees],
    }
    Path(path).write_text(json.dumps(obj))


def load_forest(path, expected_beam_count: Optional[int] = None) -> Forest:
    obj = json.loads(Path(path).read_text())
    if obj.get("schema_version") != SCHEMA_VERSION or obj.get("kind") != "random-forest":
        raise ValueError(f"{path}: not a schema v{SCHEMA_VERSION} random-forest file")
    if obj["dataset_meta_hash"] != meta_hash(obj["dataset_meta"]):
        raise ValueError(f"{path}: dataset metadata hash mismatch (file tampered?)")
    if expected_beam_count is not None and obj["n_features"] != expected_beam_count:
        raise ValueError(
            f"{path}: model expects {obj['n_features']} beams, sensor has "
            f"{expected_beam_count}"
        )
    return Forest(
        trees=[_decode_node(t) for t in obj["trees"]],
        config=ForestConfig(**obj["config"]),
        n_features=int(obj["n_features"]),
        eps=float(obj["eps"]),
        dataset_meta=obj["dataset_meta"],
    )
