"""ROC AUC by rank sum, with half credit for ties."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class AucResult:
    value: float
    positives: int
    negatives: int
    tie_pairs: int

    def to_dict(self):
        return asdict(self)


def auc(scores, labels) -> AucResult:
    """Mann-Whitney AUC: ``(concordant + 0.5 * tied) / (pos * neg)``.

    Computed in O(n log n) from mid-ranks.  The numerator is kept in
    integers (twice the U statistic) so the result is exact.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D of equal length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    pos = int((y == 1).sum())
    neg = int(y.size - pos)
    if pos == 0 or neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    # twice the mid-rank is an integer
    ranks2 = np.rint(2.0 * rankdata(s)).astype(np.int64)
    u2 = int(ranks2[y == 1].sum()) - pos * (pos + 1)
    value = u2 / (2 * pos * neg)

    _, inv = np.unique(s, return_inverse=True)
    pos_per = np.bincount(inv, weights=(y == 1)).astype(np.int64)
    neg_per = np.bincount(inv, weights=(y == 0)).astype(np.int64)
    tied = int((pos_per * neg_per).sum())
    return AucResult(value, pos, neg, tied)


def compare_models(entries, labels) -> dict:
    """AUC for each ``(name, scores)`` entry plus pairwise differences."""
    results = {name: auc(scores, labels) for name, scores in entries}
    names = [name for name, _ in entries]
    deltas = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            deltas.append({"a": a, "b": b, "delta": results[a].value - results[b].value})
    return {"auc": {n: results[n].to_dict() for n in names}, "deltas": deltas}
