"""Decision-tree nodes, exact split search and vectorized traversal."""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from numba.core.errors import NumbaWarning

# an old system TBB only disables that threading backend; numba falls back on its own
warnings.filterwarnings("ignore", message="The TBB threading layer", category=NumbaWarning)


@dataclass
class TreeNode:
    feature_index: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf_value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def predict_one(self, x) -> float:
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature_index] <= node.threshold else node.right
        return node.leaf_value

    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.n_leaves() + self.right.n_leaves()

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def leaves(self):
        if self.is_leaf:
            yield self
        else:
            yield from self.left.leaves()
            yield from self.right.leaves()


class FlatForest:
    """All trees of an ensemble packed into parallel arrays for batch traversal."""

    def __init__(self, roots: list[TreeNode]):
        feature, threshold, left, right, value, starts = [], [], [], [], [], []
        depth = 0
        for root in roots:
            starts.append(len(feature))
            depth = max(depth, root.depth())
            stack = [(root, None, False)]
            while stack:
                node, parent, is_right = stack.pop()
                k = len(feature)
                if parent is not None:
                    (right if is_right else left)[parent] = k
                feature.append(max(node.feature_index, 0))
                threshold.append(node.threshold)
                left.append(k)
                right.append(k)
                value.append(node.leaf_value)
                if not node.is_leaf:
                    stack.append((node.right, k, True))
                    stack.append((node.left, k, False))
        self.feature = np.array(feature, dtype=np.intp)
        self.threshold = np.array(threshold, dtype=float)
        self.left = np.array(left, dtype=np.intp)
        self.right = np.array(right, dtype=np.intp)
        self.value = np.array(value, dtype=float)
        self.starts = np.array(starts, dtype=np.intp)
        self.depth = depth

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        """Matrix of shape (rows, trees) holding each tree's leaf value."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _traverse(X, self.feature, self.threshold, self.left, self.right, self.value, self.starts)

    def leaf_sum(self, X: np.ndarray) -> np.ndarray:
        """Per-row sum of leaf values over all trees."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _traverse_sum(X, self.feature, self.threshold, self.left, self.right, self.value, self.starts)


@njit(parallel=True, cache=True)
def _traverse(X, feature, threshold, left, right, value, starts):
    n = X.shape[0]
    t = starts.shape[0]
    out = np.empty((n, t))
    for i in prange(n):
        for k in range(t):
            node = starts[k]
            while left[node] != node:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i, k] = value[node]
    return out


@njit(parallel=True, cache=True)
def _traverse_sum(X, feature, threshold, left, right, value, starts):
    n = X.shape[0]
    out = np.zeros(n)
    for i in prange(n):
        acc = 0.0
        for k in range(starts.shape[0]):
            node = starts[k]
            while left[node] != node:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc
    return out


def _midpoint(lo: float, hi: float) -> float:
    mid = lo + (hi - lo) / 2.0
    # adjacent floats: the midpoint may round onto hi, which would send hi left
    return lo if mid >= hi else mid


# ---------------------------------------------------------------- Gini trees

def gini_split(X, y, w, rows, features, min_samples_leaf=1):
    """Best Gini split of ``rows`` over ``features`` (sorted ascending).

    ``w`` holds bootstrap multiplicities.  Returns ``(gain, feature,
    threshold)`` or ``None``; ties keep the lowest feature, then threshold.
    """
    wr = w[rows]
    yr = y[rows] * wr
    total_w = wr.sum()
    total_pos = yr.sum()
    p = total_pos / total_w
    parent = total_w * 2.0 * p * (1.0 - p)
    best = None
    for f in features:
        x = X[rows, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cw = np.cumsum(wr[order])
        cp = np.cumsum(yr[order])
        cnt = np.arange(1, xs.size + 1)
        cut = np.flatnonzero((xs[1:] != xs[:-1]) & (cnt[:-1] >= min_samples_leaf)
                             & (xs.size - cnt[:-1] >= min_samples_leaf))
        if cut.size == 0:
            continue
        wl, pl = cw[cut], cp[cut]
        wrt, prt = total_w - wl, total_pos - pl
        imp = 2.0 * pl * (1.0 - pl / wl) + 2.0 * prt * (1.0 - prt / wrt)
        gains = parent - imp
        k = int(np.argmax(gains))
        g = float(gains[k])
        if g > 1e-12 and (best is None or g > best[0]):
            c = cut[k]
            best = (g, int(f), _midpoint(float(xs[c]), float(xs[c + 1])))
    return best


def grow_gini_tree(X, y, w, max_depth, features_per_split, rng, min_samples_leaf=1) -> TreeNode:
    d = X.shape[1]
    rows = np.flatnonzero(w > 0)

    def build(rows, depth):
        wr = w[rows]
        frac = float((y[rows] * wr).sum() / wr.sum())
        if depth >= max_depth or frac in (0.0, 1.0) or rows.size < 2 * min_samples_leaf:
            return TreeNode(leaf_value=frac)
        feats = np.sort(rng.choice(d, size=features_per_split, replace=False))
        split = gini_split(X, y, w, rows, feats, min_samples_leaf)
        if split is None:
            return TreeNode(leaf_value=frac)
        _, f, thr = split
        mask = X[rows, f] <= thr
        return TreeNode(f, thr, build(rows[mask], depth + 1), build(rows[~mask], depth + 1))

    return build(rows, 0)


# ---------------------------------------------------------------- second-order trees

def soft_threshold(g, l1):
    return np.sign(g) * np.maximum(np.abs(g) - l1, 0.0)


def leaf_weight(G, H, l1=0.0, l2=0.0):
    """Regularized Newton leaf weight ``-soft(G, l1) / (H + l2)``."""
    return -soft_threshold(G, l1) / (H + l2)


def _score(G, H, l1, l2):
    s = soft_threshold(G, l1)
    return s * s / (H + l2)


@dataclass
class _Candidate:
    gain: float
    feature: int
    threshold: float


def newton_split(X, g, h, rows, l1, l2, min_samples_leaf, min_child_weight):
    """Best split by regularized second-order gain, or ``None`` if no gain is positive."""
    gr, hr = g[rows], h[rows]
    G, H = gr.sum(), hr.sum()
    parent = _score(G, H, l1, l2)
    best = None
    n = rows.size
    for f in range(X.shape[1]):
        x = X[rows, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cg = np.cumsum(gr[order])
        ch = np.cumsum(hr[order])
        cnt = np.arange(1, n + 1)
        ok = (xs[1:] != xs[:-1]) & (cnt[:-1] >= min_samples_leaf) & (n - cnt[:-1] >= min_samples_leaf)
        ok &= (ch[:-1] >= min_child_weight) & (H - ch[:-1] >= min_child_weight)
        cut = np.flatnonzero(ok)
        if cut.size == 0:
            continue
        GL, HL = cg[cut], ch[cut]
        gains = 0.5 * (_score(GL, HL, l1, l2) + _score(G - GL, H - HL, l1, l2) - parent)
        k = int(np.argmax(gains))
        gain = float(gains[k])
        if gain > 1e-12 and (best is None or gain > best.gain):
            c = cut[k]
            best = _Candidate(gain, f, _midpoint(float(xs[c]), float(xs[c + 1])))
    return best


def _newton_leaf(g, h, rows, l1, l2):
    return TreeNode(leaf_value=float(leaf_weight(g[rows].sum(), h[rows].sum(), l1, l2)))


def grow_leafwise(X, g, h, max_leaves, l1=0.0, l2=0.0, min_samples_leaf=1, min_child_weight=1e-3):
    """Repeatedly split the leaf with the largest gain until ``max_leaves`` is reached."""
    root_rows = np.arange(X.shape[0])
    root = _newton_leaf(g, h, root_rows, l1, l2)
    heap = []
    counter = 0

    def push(node, rows):
        nonlocal counter
        cand = newton_split(X, g, h, rows, l1, l2, min_samples_leaf, min_child_weight)
        if cand is not None:
            # largest gain first; earlier-created leaves win ties
            heapq.heappush(heap, (-cand.gain, counter, node, rows, cand))
            counter += 1

    push(root, root_rows)
    leaves = 1
    while heap and leaves < max_leaves:
        _, _, node, rows, cand = heapq.heappop(heap)
        mask = X[rows, cand.feature] <= cand.threshold
        lrows, rrows = rows[mask], rows[~mask]
        node.feature_index, node.threshold = cand.feature, cand.threshold
        node.left = _newton_leaf(g, h, lrows, l1, l2)
        node.right = _newton_leaf(g, h, rrows, l1, l2)
        node.leaf_value = 0.0
        leaves += 1
        push(node.left, lrows)
        push(node.right, rrows)
    return root


def grow_depthwise(X, g, h, max_depth, l1=0.0, l2=0.0, min_samples_leaf=1, min_child_weight=1e-3):
    """Grow level by level, splitting every node with positive gain, up to ``max_depth``."""
    root = _newton_leaf(g, h, np.arange(X.shape[0]), l1, l2)
    level = [(root, np.arange(X.shape[0]))]
    for _ in range(max_depth):
        nxt = []
        for node, rows in level:
            cand = newton_split(X, g, h, rows, l1, l2, min_samples_leaf, min_child_weight)
            if cand is None:
                continue
            mask = X[rows, cand.feature] <= cand.threshold
            node.feature_index, node.threshold = cand.feature, cand.threshold
            node.left = _newton_leaf(g, h, rows[mask], l1, l2)
            node.right = _newton_leaf(g, h, rows[~mask], l1, l2)
            node.leaf_value = 0.0
            nxt += [(node.left, rows[mask]), (node.right, rows[~mask])]
        if not nxt:
            break
        level = nxt
    return root
