"""Shapley attributions with an interventional value function.

``v(S)`` is the mean model score over a background sample where the
features in ``S`` are overwritten with the explained instance's values.
Attributions satisfy ``base_value + sum(attributions) == score(instance)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_EXACT_FEATURES = 15


def as_batch(model):
    """Return a function mapping a row matrix to a score vector."""
    if hasattr(model, "score_batch"):
        return model.score_batch
    return model


@dataclass
class ShapExplanation:
    base_value: float
    attributions: np.ndarray
    instance: np.ndarray
    method: str
    samples_used: int
    standard_errors: np.ndarray | None = None
    score: float = float("nan")

    def to_dict(self, feature_names=None):
        names = feature_names or [f"X{i}" for i in range(len(self.attributions))]
        se = self.standard_errors
        return {
            "method": self.method,
            "base_value": self.base_value,
            "base_value_definition": "mean black-box score over the background sample",
            "score": self.score,
            "samples_used": self.samples_used,
            "features": list(names),
            "instance": self.instance.tolist(),
            "attributions": self.attributions.tolist(),
            "standard_errors": None if se is None else [None if not np.isfinite(v) else float(v) for v in se],
        }


def _check(instance, background):
    x = np.asarray(instance, dtype=float).ravel()
    B = np.asarray(background, dtype=float)
    if B.ndim != 2 or B.shape[0] == 0:
        raise ValueError("background must be a non-empty matrix")
    if B.shape[1] != x.size:
        raise ValueError(f"width mismatch: instance has {x.size} features, background {B.shape[1]}")
    return x, B


def coalition_values(f, x, B, masks: np.ndarray, chunk_rows: int = 200_000) -> np.ndarray:
    """``v(S)`` for each boolean row of ``masks`` (shape ``(k, d)``)."""
    k, d = masks.shape
    nb = B.shape[0]
    out = np.empty(k)
    per = max(1, chunk_rows // nb)
    for lo in range(0, k, per):
        m = masks[lo:lo + per]
        rows = np.where(m[:, None, :], x[None, None, :], B[None, :, :]).reshape(-1, d)
        out[lo:lo + per] = f(rows).reshape(m.shape[0], nb).mean(axis=1)
    return out


def shap_exact(model, instance, background) -> ShapExplanation:
    """Exact Shapley values by enumerating all ``2**d`` coalitions."""
    x, B = _check(instance, background)
    d = x.size
    if d > MAX_EXACT_FEATURES:
        raise ValueError(f"{d} features exceeds the exact-enumeration bound of "
                         f"{MAX_EXACT_FEATURES}; use shap_sampled")
    f = as_batch(model)
    codes = np.arange(1 << d)
    bits = 1 << np.arange(d)
    masks = (codes[:, None] & bits[None, :]) != 0
    v = coalition_values(f, x, B, masks)
    sizes = masks.sum(axis=1)
    weight = np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) if s < d else 0.0
                       for s in range(d + 1)])
    phi = np.empty(d)
    for i in range(d):
        without = codes[(codes & bits[i]) == 0]
        terms = weight[sizes[without]] * (v[without | bits[i]] - v[without])
        # correctly rounded sum: exchangeable features get bit-identical values
        phi[i] = math.fsum(terms)
    return ShapExplanation(float(v[0]), phi, x, "exact", int(v.size * B.shape[0]), score=float(v[-1]))


def shap_sampled(model, instance, background, permutations: int = 200, seed: int = 0) -> ShapExplanation:
    """Monte-Carlo Shapley values averaged over random feature orderings.

    Each ordering contributes one marginal contribution per feature, so the
    estimate is exactly efficient.  Standard errors are the sample standard
    deviation of the contributions over ``sqrt(permutations)``.
    """
    if permutations < 1:
        raise ValueError("permutations must be >= 1")
    x, B = _check(instance, background)
    d = x.size
    f = as_batch(model)
    rng = np.random.default_rng(seed)
    orders = np.array([rng.permutation(d) for _ in range(permutations)])
    # prefix masks: row k of permutation p holds the first k features of its order
    ranks = np.empty_like(orders)
    ranks[np.arange(permutations)[:, None], orders] = np.arange(d)[None, :]
    masks = ranks[:, None, :] < np.arange(d + 1)[None, :, None]
    v = coalition_values(f, x, B, masks.reshape(-1, d)).reshape(permutations, d + 1)
    steps = np.diff(v, axis=1)
    contrib = np.empty((permutations, d))
    contrib[np.arange(permutations)[:, None], orders] = steps
    phi = contrib.mean(axis=0)
    if permutations > 1:
        se = contrib.std(axis=0, ddof=1) / math.sqrt(permutations)
    else:
        se = np.full(d, np.nan)
    base = float(v[:, 0].mean())
    return ShapExplanation(base, phi, x, "sampled", int(v.size * B.shape[0]), se, float(v[:, -1].mean()))


def explain(model, instance, background, method="auto", permutations=200, seed=0) -> ShapExplanation:
    x = np.asarray(instance, dtype=float).ravel()
    if method == "exact" or (method == "auto" and x.size <= MAX_EXACT_FEATURES):
        return shap_exact(model, x, background)
    return shap_sampled(model, x, background, permutations, seed)


@dataclass
class ShapSummary:
    feature_names: list[str]
    mean_abs: np.ndarray
    sign_association: np.ndarray
    order: list[int] = field(default_factory=list)

    def ranked(self):
        return [(self.feature_names[i], float(self.mean_abs[i]), float(self.sign_association[i]))
                for i in self.order]

    def to_dict(self):
        return {"features": [{"feature": n, "mean_abs_attribution": m, "sign_association": s}
                             for n, m, s in self.ranked()]}


def _corr(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return 0.0 if den == 0.0 else float(a @ b) / den


def shap_summary(model, rows, background, feature_names=None, method="auto", permutations=100,
                 seed=0, explanations=None) -> ShapSummary:
    """Aggregate per-row attributions into mean |phi| and a sign association.

    The sign association is the correlation between a feature's attribution
    and its value across ``rows``.  Features are ordered by mean |phi|
    descending, ties by name.
    """
    R = np.asarray(rows, dtype=float)
    if R.ndim != 2 or R.shape[0] == 0:
        raise ValueError("rows must be a non-empty matrix")
    d = R.shape[1]
    names = list(feature_names) if feature_names is not None else [f"X{i}" for i in range(d)]
    if explanations is None:
        explanations = [explain(model, r, background, method, permutations, seed + k) for k, r in enumerate(R)]
    phi = np.array([e.attributions for e in explanations])
    mean_abs = np.abs(phi).mean(axis=0)
    sign = np.array([_corr(phi[:, j], R[:, j]) for j in range(d)])
    order = sorted(range(d), key=lambda j: (-mean_abs[j], names[j]))
    return ShapSummary(names, mean_abs, sign, order)
