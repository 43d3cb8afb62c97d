"""Local linear surrogates fit on perturbations of one instance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .shap import as_batch

FLIP_PROBABILITY = 0.25
DEFAULT_SAMPLES = 5000
RIDGE_FALLBACK = 1e-6


@dataclass
class TrainStats:
    mean: np.ndarray
    std: np.ndarray
    binary: np.ndarray

    @classmethod
    def from_matrix(cls, X, binary=None):
        X = np.asarray(X, dtype=float)
        if binary is None:
            binary = np.array([np.isin(X[:, j], (0.0, 1.0)).all() for j in range(X.shape[1])])
        return cls(X.mean(axis=0), X.std(axis=0), np.asarray(binary, dtype=bool))

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "binary": self.binary.tolist()}


@dataclass
class LimeExplanation:
    intercept: float
    coefficients: np.ndarray
    kernel_width: float
    surrogate_r2: float
    samples: int
    seed: int
    flags: list[str] = field(default_factory=list)
    score: float = float("nan")

    def to_dict(self, feature_names=None):
        names = feature_names or [f"X{i}" for i in range(len(self.coefficients))]
        return {
            "intercept": self.intercept,
            "coefficients": dict(zip(names, self.coefficients.tolist())),
            "kernel_width": self.kernel_width,
            "surrogate_r2": self.surrogate_r2,
            "samples": self.samples,
            "seed": self.seed,
            "score": self.score,
            "flags": list(self.flags),
        }


def perturb(instance, stats: TrainStats, n: int, seed: int, flags: list | None = None) -> np.ndarray:
    """Draw ``n`` neighbours of ``instance``; row 0 is the instance itself.

    Numeric features get Gaussian noise with the training std, binary
    features flip with probability 0.25, and everything is clipped to [0, 1].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(instance, dtype=float).ravel()
    d = x.size
    if stats.std.size != d or stats.binary.size != d:
        raise ValueError("train stats do not cover every feature")
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=(n, d)) * stats.std[None, :]
    flips = rng.uniform(size=(n, d)) < FLIP_PROBABILITY
    Z = np.where(stats.binary[None, :], np.where(flips, 1.0 - x[None, :], x[None, :]), x[None, :] + noise)
    Z = np.clip(Z, 0.0, 1.0)
    held = np.flatnonzero(~stats.binary & (stats.std == 0))
    if held.size and flags is not None:
        flags.append(f"zero std: features {held.tolist()} held fixed")
    Z[0] = x
    return Z


def lime_explain(model, instance, stats: TrainStats, n: int = DEFAULT_SAMPLES, kernel_width: float | None = None,
                 seed: int = 0) -> LimeExplanation:
    """Weighted least-squares surrogate around ``instance``.

    Weights are ``exp(-dist^2 / kernel_width^2)`` with Euclidean distance in
    the (already unit-scaled) feature space; the default width is
    ``0.75 * sqrt(d)``.
    """
    x = np.asarray(instance, dtype=float).ravel()
    d = x.size
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} samples for {d} features")
    width = float(kernel_width) if kernel_width is not None else 0.75 * math.sqrt(d)
    if width <= 0:
        raise ValueError("kernel_width must be positive")
    flags: list[str] = []
    Z = perturb(x, stats, n, seed, flags)
    target = np.asarray(as_batch(model)(Z), dtype=float)
    dist2 = ((Z - x[None, :]) ** 2).sum(axis=1)
    w = np.exp(-dist2 / width ** 2)

    A = np.column_stack([np.ones(n), Z])
    sw = np.sqrt(w)
    Aw = A * sw[:, None]
    tw = target * sw
    if np.linalg.matrix_rank(Aw) < d + 1:
        flags.append(f"rank-deficient design; ridge fallback with penalty {RIDGE_FALLBACK:g}")
        reg = RIDGE_FALLBACK * np.eye(d + 1)
        reg[0, 0] = 0.0
        beta = np.linalg.solve(Aw.T @ Aw + reg, Aw.T @ tw)
    else:
        beta = np.linalg.lstsq(Aw, tw, rcond=None)[0]

    fitted = A @ beta
    mean_t = np.average(target, weights=w)
    ss_tot = float(w @ (target - mean_t) ** 2)
    ss_res = float(w @ (target - fitted) ** 2)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return LimeExplanation(float(beta[0]), beta[1:], width, min(r2, 1.0), n, seed, flags, float(target[0]))
