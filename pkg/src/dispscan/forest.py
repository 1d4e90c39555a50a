"""Random forest baseline: CART trees on bootstrap resamples.

Splits minimize Gini impurity over a random feature subset per node,
with threshold candidates at midpoints between consecutive distinct
sorted values. Ties break to the lowest feature index, then the lowest
threshold, so refits are deterministic for a fixed seed.
"""

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    IoFailure,
    SingleClass,
    TooFewSamples,
    VersionMismatch,
)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None      # default ceil(sqrt(D))
    bootstrap_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("need at least one tree")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0.0 < self.bootstrap_fraction <= 1.0:
            raise ValueError("bootstrap fraction must lie in (0, 1]")


@dataclass
class DecisionTree:
    """Flat node arrays; feature -1 marks a leaf."""

    feature: np.ndarray      # int32
    threshold: np.ndarray    # float64
    left: np.ndarray         # int32
    right: np.ndarray        # int32
    prob: np.ndarray         # float64, class-1 probability at leaves

    def predict_proba(self, x):
        n = x.shape[0]
        cur = np.zeros(n, dtype=np.int64)
        active = self.feature[cur] >= 0
        while active.any():
            rows = np.nonzero(active)[0]
            nodes = cur[rows]
            go_left = x[rows, self.feature[nodes]] < self.threshold[nodes]
            cur[rows] = np.where(go_left, self.left[nodes], self.right[nodes])
            active = self.feature[cur] >= 0
        return self.prob[cur]

    def structural_equal(self, other):
        return (np.array_equal(self.feature, other.feature)
                and np.array_equal(self.threshold, other.threshold)
                and np.array_equal(self.left, other.left)
                and np.array_equal(self.right, other.right)
                and np.array_equal(self.prob, other.prob))


@dataclass
class Forest:
    trees: list
    config: ForestConfig
    n_features: int


class _Builder:
    def __init__(self, x, y, cfg, mtry, rng):
        self.x = x
        self.y = y
        self.cfg = cfg
        self.mtry = mtry
        self.rng = rng
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.prob = []

    def _leaf(self, idx):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.prob.append(float(self.y[idx].mean()))
        return len(self.feature) - 1

    def _best_split(self, idx):
        y = self.y[idx]
        n = len(idx)
        msl = self.cfg.min_samples_leaf
        total_ones = y.sum()
        parent_gini = 1.0 - ((total_ones / n) ** 2 + ((n - total_ones) / n) ** 2)
        candidates = np.sort(self.rng.choice(self.x.shape[1], size=self.mtry,
                                             replace=False))
        best = None
        for f in candidates:
            vals = self.x[idx, f]
            order = np.argsort(vals, kind="stable")
            sv = vals[order]
            sy = y[order]
            ones_left = np.cumsum(sy)[:-1]
            n_left = np.arange(1, n)
            valid = sv[1:] != sv[:-1]
            valid &= (n_left >= msl) & (n - n_left >= msl)
            if not valid.any():
                continue
            n_right = n - n_left
            ones_right = total_ones - ones_left
            gini_l = 1.0 - ((ones_left / n_left) ** 2 + ((n_left - ones_left) / n_left) ** 2)
            gini_r = 1.0 - ((ones_right / n_right) ** 2
                            + ((n_right - ones_right) / n_right) ** 2)
            weighted = (n_left * gini_l + n_right * gini_r) / n
            weighted[~valid] = np.inf
            pos = int(np.argmin(weighted))
            gain = parent_gini - weighted[pos]
            if gain <= 0.0:
                continue
            thr = 0.5 * (sv[pos] + sv[pos + 1])
            if best is None or gain > best[0]:
                best = (gain, int(f), float(thr))
        return best

    def build(self, root_idx):
        # iterative so deep trees cannot hit the recursion limit
        stack = [(root_idx, 0, -1, False)]
        while stack:
            idx, depth, parent, is_right = stack.pop()
            y = self.y[idx]
            split = None
            if (len(idx) >= 2 * self.cfg.min_samples_leaf
                    and y.min() != y.max()
                    and (self.cfg.max_depth is None or depth < self.cfg.max_depth)):
                split = self._best_split(idx)
            if split is None:
                node = self._leaf(idx)
            else:
                _, f, thr = split
                node = len(self.feature)
                self.feature.append(f)
                self.threshold.append(thr)
                self.left.append(-1)
                self.right.append(-1)
                self.prob.append(0.0)
                go_left = self.x[idx, f] < thr
                stack.append((idx[~go_left], depth + 1, node, True))
                stack.append((idx[go_left], depth + 1, node, False))
            if parent >= 0:
                if is_right:
                    self.right[parent] = node
                else:
                    self.left[parent] = node

    def finish(self):
        return DecisionTree(np.array(self.feature, dtype=np.int32),
                            np.array(self.threshold, dtype=np.float64),
                            np.array(self.left, dtype=np.int32),
                            np.array(self.right, dtype=np.int32),
                            np.array(self.prob, dtype=np.float64))


def _as_matrix(features):
    return features.samples if hasattr(features, "samples") else np.asarray(features)


def bootstrap_indices(cfg, tree_index, n):
    """The bootstrap resample used by tree ``tree_index``; reproducible."""
    rng = np.random.default_rng([cfg.seed, tree_index])
    size = max(1, int(round(cfg.bootstrap_fraction * n)))
    return rng.integers(0, n, size=size), rng


def fit_forest(features, labels, cfg=ForestConfig()):
    """Train ``cfg.n_trees`` CART trees on seeded bootstrap resamples."""
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if len(y) != len(x):
        raise DimensionMismatch("labels do not match feature rows")
    if y.min() == y.max():
        raise SingleClass("training labels contain a single class")
    mtry = cfg.features_per_split or math.ceil(math.sqrt(x.shape[1]))
    if not 1 <= mtry <= x.shape[1]:
        raise ValueError(f"features_per_split {mtry} outside [1, {x.shape[1]}]")
    trees = []
    for t in range(cfg.n_trees):
        idx, rng = bootstrap_indices(cfg, t, len(x))
        builder = _Builder(x, y, cfg, mtry, rng)
        builder.build(idx)
        trees.append(builder.finish())
    return Forest(trees, cfg, x.shape[1])


def predict_forest(forest, features):
    """Mean leaf probability over trees; label 1 when it reaches 0.5."""
    x = _as_matrix(features)
    if x.shape[1] != forest.n_features:
        raise DimensionMismatch(
            f"feature dim {x.shape[1]} != training dim {forest.n_features}")
    probs = np.zeros(x.shape[0])
    for tree in forest.trees:
        probs += tree.predict_proba(x)
    probs /= len(forest.trees)
    return probs, (probs >= 0.5).astype(np.int8)


def oob_predictions(forest, features):
    """Out-of-bag probabilities; NaN where no tree left a row out."""
    x = _as_matrix(features)
    acc = np.zeros(x.shape[0])
    hits = np.zeros(x.shape[0])
    for t, tree in enumerate(forest.trees):
        idx, _ = bootstrap_indices(forest.config, t, x.shape[0])
        oob = np.ones(x.shape[0], dtype=bool)
        oob[idx] = False
        if not oob.any():
            continue
        acc[oob] += tree.predict_proba(x[oob])
        hits[oob] += 1
    with np.errstate(invalid="ignore"):
        return np.where(hits > 0, acc / np.maximum(hits, 1), np.nan)


def stratified_folds(labels, n_folds, seed):
    """Deterministic stratified fold assignment per sample."""
    y = np.asarray(labels).reshape(-1)
    if n_folds < 2:
        raise TooFewSamples("need at least 2 folds")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(y), dtype=np.int64)
    for cls in (0, 1):
        members = np.nonzero(y == cls)[0]
        if len(members) < n_folds:
            raise TooFewSamples(
                f"class {cls} has {len(members)} samples < {n_folds} folds")
        members = members[rng.permutation(len(members))]
        assignment[members] = np.arange(len(members)) % n_folds
    return assignment


def cross_validate(features, labels, n_folds, cfg=ForestConfig()):
    """Stratified k-fold evaluation; returns (per-fold reports, pooled report)."""
    from .evaluation import EvaluationReport, confusion

    x = _as_matrix(features)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    folds = stratified_folds(y, n_folds, cfg.seed)
    reports = []
    pooled_true = []
    pooled_pred = []
    for k in range(n_folds):
        holdout = folds == k
        forest = fit_forest(x[~holdout], y[~holdout], cfg)
        _, pred = predict_forest(forest, x[holdout])
        reports.append(EvaluationReport(confusion(y[holdout], pred)))
        pooled_true.append(y[holdout])
        pooled_pred.append(pred)
    pooled = EvaluationReport(confusion(np.concatenate(pooled_true),
                                        np.concatenate(pooled_pred)))
    return reports, pooled


FOREST_MAGIC = b"DSPF"
FOREST_VERSION = 1
_FOREST_HEADER = struct.Struct("<4sIQ")


def save_forest(forest, path):
    header = {"config": {"n_trees": forest.config.n_trees,
                         "max_depth": forest.config.max_depth,
                         "min_samples_leaf": forest.config.min_samples_leaf,
                         "features_per_split": forest.config.features_per_split,
                         "bootstrap_fraction": forest.config.bootstrap_fraction,
                         "seed": forest.config.seed},
              "n_features": forest.n_features,
              "tree_sizes": [len(t.feature) for t in forest.trees]}
    blob = json.dumps(header, sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(_FOREST_HEADER.pack(FOREST_MAGIC, FOREST_VERSION, len(blob)))
            fh.write(blob)
            for tree in forest.trees:
                np.ascontiguousarray(tree.feature, dtype="<i4").tofile(fh)
                np.ascontiguousarray(tree.threshold, dtype="<f8").tofile(fh)
                np.ascontiguousarray(tree.left, dtype="<i4").tofile(fh)
                np.ascontiguousarray(tree.right, dtype="<i4").tofile(fh)
                np.ascontiguousarray(tree.prob, dtype="<f8").tofile(fh)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_forest(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read(_FOREST_HEADER.size)
            if len(raw) < _FOREST_HEADER.size:
                raise VersionMismatch(f"{path}: truncated header")
            magic, version, blob_len = _FOREST_HEADER.unpack(raw)
            if magic != FOREST_MAGIC or version != FOREST_VERSION:
                raise VersionMismatch(f"{path}: bad magic or version")
            try:
                header = json.loads(fh.read(blob_len).decode())
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise VersionMismatch(f"{path}: corrupted header") from exc
            trees = []
            for size in header["tree_sizes"]:
                feature = np.fromfile(fh, dtype="<i4", count=size)
                threshold = np.fromfile(fh, dtype="<f8", count=size)
                left = np.fromfile(fh, dtype="<i4", count=size)
                right = np.fromfile(fh, dtype="<i4", count=size)
                prob = np.fromfile(fh, dtype="<f8", count=size)
                trees.append(DecisionTree(feature, threshold, left, right, prob))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    cfg = ForestConfig(**header["config"])
    return Forest(trees, cfg, header["n_features"])
