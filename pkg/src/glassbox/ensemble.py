"""Tree-ensemble black boxes: bagged forest and two boosted variants.

All three produce a score in [0, 1].  The forest averages leaf class
fractions; the boosted kinds apply a sigmoid to ``base_score + lr * sum``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .table import FeatureTable
from .trees import FlatForest, TreeNode, grow_depthwise, grow_gini_tree, grow_leafwise

BAGGED, LEAFWISE, DEPTHWISE = "bagged", "boosted_leafwise", "boosted_depthwise"
KIND_CODES = {BAGGED: 0, LEAFWISE: 1, DEPTHWISE: 2}
MAGIC = b"EMDL"
FORMAT_VERSION = 1

# boosting rounds that increase training loss are shrunk by halving at most this often
_MAX_SHRINK = 30


class ModelFormatError(ValueError):
    pass


@dataclass
class EnsembleModel:
    kind: str
    trees: list[TreeNode]
    learning_rate: float
    base_score: float
    feature_count: int
    training_config: dict = field(default_factory=dict)
    train_loss: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._flat = None

    @property
    def flat(self) -> FlatForest:
        if self._flat is None:
            self._flat = FlatForest(self.trees)
        return self._flat

    def margin(self, X) -> np.ndarray:
        return self.base_score + self.learning_rate * self.flat.leaf_sum(X)

    def score_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, self.feature_count)
        if X.ndim != 2 or X.shape[1] != self.feature_count:
            raise ValueError(f"expected rows of width {self.feature_count}, got shape {X.shape}")
        if X.shape[0] == 0:
            return np.zeros(0)
        if self.kind == BAGGED:
            return np.clip(self.flat.leaf_sum(X) / len(self.trees), 0.0, 1.0)
        return expit(self.margin(X))

    def score(self, x) -> float:
        return float(self.score_batch(np.asarray(x, dtype=float)[None, :])[0])

    __call__ = score_batch


def score_batch(model, rows) -> np.ndarray:
    """Score every row of ``rows`` with ``model``; order preserved."""
    return model.score_batch(rows)


def _xy(train):
    if isinstance(train, FeatureTable):
        if train.outcome is None:
            raise ValueError("training table has no outcome")
        return train.matrix(), train.outcome.astype(float)
    X, y = train
    X = np.asarray(X, dtype=float)
    if np.isnan(X).any():
        raise ValueError("missing values are not supported at fit time")
    return X, np.asarray(y, dtype=float)


def fit_random_forest(train, trees=200, max_depth=8, features_per_split=None, seed=0,
                      min_samples_leaf=1) -> EnsembleModel:
    """Bagged Gini trees; each tree sees a bootstrap resample.

    ``train`` is a :class:`FeatureTable` with outcome or an ``(X, y)`` pair.
    """
    X, y = _xy(train)
    n, d = X.shape
    if trees < 1:
        raise ValueError("trees must be >= 1")
    k = features_per_split or max(1, int(round(math.sqrt(d))))
    k = min(k, d)
    cfg = {"trees": trees, "max_depth": max_depth, "features_per_split": k, "seed": seed,
           "min_samples_leaf": min_samples_leaf}
    model = EnsembleModel(BAGGED, [], 1.0, 0.0, d, cfg)
    if y.min() == y.max():
        model.trees = [TreeNode(leaf_value=float(y[0]))]
        model.flags.append("single-class outcome; constant model")
        return model
    rng = np.random.default_rng(seed)
    for _ in range(trees):
        w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        model.trees.append(grow_gini_tree(X, y, w, max_depth, k, rng, min_samples_leaf))
    return model


def log_loss(y, margin) -> float:
    # log(1 + e^{-m}) for y=1, log(1 + e^{m}) for y=0, in a stable form
    s = np.where(y > 0.5, -margin, margin)
    return float(np.mean(np.logaddexp(0.0, s)))


def _boost(X, y, kind, rounds, learning_rate, grow, cfg):
    n, d = X.shape
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if not 0.0 < learning_rate <= 1.0:
        raise ValueError("learning_rate must lie in (0, 1]")
    prev = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    base = math.log(prev / (1.0 - prev))
    model = EnsembleModel(kind, [], learning_rate, base, d, cfg)
    margin = np.full(n, base)
    loss = log_loss(y, margin)
    model.train_loss.append(loss)
    for r in range(rounds):
        p = expit(margin)
        g = p - y
        h = p * (1.0 - p)
        tree = grow(X, g, h)
        if tree.is_leaf:
            if r == 0:
                model.trees.append(TreeNode(leaf_value=0.0))
                model.flags.append("no split with positive gain in round 1; constant model")
            break
        flat = FlatForest([tree])
        step = flat.leaf_values(X)[:, 0]
        scale = 1.0
        new_loss = log_loss(y, margin + learning_rate * step)
        shrinks = 0
        while new_loss > loss and shrinks < _MAX_SHRINK:
            scale *= 0.5
            shrinks += 1
            new_loss = log_loss(y, margin + learning_rate * scale * step)
        if new_loss > loss:
            scale, new_loss = 0.0, loss
        if scale != 1.0:
            for leaf in tree.leaves():
                leaf.leaf_value *= scale
            model.flags.append(f"round {r}: leaf values shrunk by {scale:g} to keep loss non-increasing")
            step = step * scale
        margin = margin + learning_rate * step
        loss = log_loss(y, margin)
        model.trees.append(tree)
        model.train_loss.append(loss)
    if not model.trees:
        model.trees.append(TreeNode(leaf_value=0.0))
    return model


def fit_boosted_leafwise(train, rounds=100, leaves=31, learning_rate=0.1, seed=0,
                         min_samples_leaf=5, l2=0.0) -> EnsembleModel:
    """Logistic boosting with trees grown best-leaf-first up to ``leaves`` leaves.

    ``seed`` is recorded for provenance; the exact split search is deterministic.
    """
    X, y = _xy(train)
    if leaves < 2:
        raise ValueError("leaves must be >= 2")
    cfg = {"rounds": rounds, "leaves": leaves, "learning_rate": learning_rate, "seed": seed,
           "min_samples_leaf": min_samples_leaf, "l2": l2}

    def grow(X, g, h):
        return grow_leafwise(X, g, h, leaves, 0.0, l2, min_samples_leaf)

    return _boost(X, y, LEAFWISE, rounds, learning_rate, grow, cfg)


def fit_boosted_depthwise(train, rounds=100, max_depth=6, learning_rate=0.1, l1=0.0, l2=1.0, seed=0,
                          min_samples_leaf=1) -> EnsembleModel:
    """Logistic boosting with L1/L2-regularized trees grown level by level."""
    X, y = _xy(train)
    if l1 < 0 or l2 < 0:
        raise ValueError("l1 and l2 must be non-negative")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    cfg = {"rounds": rounds, "max_depth": max_depth, "learning_rate": learning_rate,
           "l1": l1, "l2": l2, "seed": seed, "min_samples_leaf": min_samples_leaf}

    def grow(X, g, h):
        return grow_depthwise(X, g, h, max_depth, l1, l2, min_samples_leaf)

    return _boost(X, y, DEPTHWISE, rounds, learning_rate, grow, cfg)


# ---------------------------------------------------------------- serialization
#
# little endian: magic "EMDL", version u16, kind u8, learning_rate f64,
# base_score f64, tree count u32, feature count u32, then per tree a
# pre-order node stream: tag u8 (1 internal, 0 leaf); internal: feature u32 +
# threshold f64; leaf: value f64.

_HEADER = struct.Struct("<4sHBddII")


def dumps_model(model: EnsembleModel) -> bytes:
    out = [_HEADER.pack(MAGIC, FORMAT_VERSION, KIND_CODES[model.kind], model.learning_rate,
                        model.base_score, len(model.trees), model.feature_count)]
    for root in model.trees:
        stack = [root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(struct.pack("<Bd", 0, node.leaf_value))
            else:
                out.append(struct.pack("<BId", 1, node.feature_index, node.threshold))
                stack.append(node.right)
                stack.append(node.left)
    return b"".join(out)


def loads_model(data: bytes) -> EnsembleModel:
    if len(data) < _HEADER.size:
        raise ModelFormatError("truncated model file")
    magic, version, kind_code, lr, base, n_trees, width = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelFormatError("bad magic bytes; not a model file")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    kinds = {v: k for k, v in KIND_CODES.items()}
    if kind_code not in kinds:
        raise ModelFormatError(f"unknown model kind code {kind_code}")
    pos = _HEADER.size

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise ModelFormatError("truncated model file")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    def node():
        (tag,) = read("<B")
        if tag == 0:
            return TreeNode(leaf_value=read("<d")[0])
        if tag != 1:
            raise ModelFormatError(f"bad node tag {tag}")
        f, thr = read("<Id")
        if f >= width:
            raise ModelFormatError("feature index outside model width")
        left = node()
        right = node()
        return TreeNode(f, thr, left, right)

    trees = [node() for _ in range(n_trees)]
    if pos != len(data):
        raise ModelFormatError("trailing bytes after last tree")
    return EnsembleModel(kinds[kind_code], trees, lr, base, width)


def save_model(model: EnsembleModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> EnsembleModel:
    with open(path, "rb") as fh:
        return loads_model(fh.read())
