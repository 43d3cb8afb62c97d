"""Meijer G-function evaluation on the positive real axis.

Values are computed from the residue (Slater) expansion, which writes a
G-function with simple poles as a finite sum of generalized hypergeometric
series.  Only the classes with ``p <= q`` are supported; ``p == q`` further
requires ``z < 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma, rgamma

SERIES_RTOL = 1e-12
SERIES_MAX_TERMS = 500
# distance below which a parameter is treated as sitting on an integer
_INT_TOL = 1e-9


class MeijerGError(ValueError):
    """Raised for invalid specs or arguments outside the supported region."""


def _is_nonpositive_int(x: float) -> bool:
    r = round(x)
    return r <= 0 and abs(x - r) < _INT_TOL


def _is_positive_int(x: float) -> bool:
    r = round(x)
    return r >= 1 and abs(x - r) < _INT_TOL


def _is_int(x: float) -> bool:
    return abs(x - round(x)) < _INT_TOL


@dataclass(frozen=True)
class MeijerGSpec:
    """Order indices ``(m, n, p, q)`` with parameter vectors ``a`` (length p) and ``b`` (length q)."""

    m: int
    n: int
    p: int
    q: int
    a: tuple[float, ...] = field(default=())
    b: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        m, n, p, q = self.m, self.n, self.p, self.q
        if min(m, n, p, q) < 0:
            raise MeijerGError("order indices must be non-negative")
        if m > q or n > p:
            raise MeijerGError(f"need m <= q and n <= p, got m={m}, n={n}, p={p}, q={q}")
        if m < 1:
            raise MeijerGError("m = 0 gives an identically zero residue sum")
        if p > q:
            raise MeijerGError("only p <= q is supported")
        if len(self.a) != p or len(self.b) != q:
            raise MeijerGError(f"expected {p} a-parameters and {q} b-parameters, "
                               f"got {len(self.a)} and {len(self.b)}")
        for v in self.a + self.b:
            if not math.isfinite(v):
                raise MeijerGError("parameters must be finite")
        _check_poles(self)

    @property
    def params(self) -> np.ndarray:
        return np.array(self.a + self.b, dtype=float)

    def with_params(self, theta) -> "MeijerGSpec":
        theta = [float(t) for t in theta]
        return MeijerGSpec(self.m, self.n, self.p, self.q, tuple(theta[: self.p]), tuple(theta[self.p:]))


def _check_poles(spec: MeijerGSpec) -> None:
    a, b, m, n = spec.a, spec.b, spec.m, spec.n
    # the left and right pole sequences of the integrand must not overlap
    for k in range(n):
        for j in range(m):
            if _is_positive_int(a[k] - b[j]):
                raise MeijerGError(f"pole collision: a[{k}] - b[{j}] = {a[k] - b[j]:g} is a positive integer")
    # simple poles only: the Gamma(b_j - s) factors may not share poles
    for j in range(m):
        for h in range(j + 1, m):
            if _is_int(b[j] - b[h]):
                raise MeijerGError(f"pole collision: b[{j}] and b[{h}] differ by an integer (double pole)")
    # series denominators 1 + b_h - b_j must avoid the non-positive integers
    for h in range(m):
        for j in range(m, spec.q):
            if _is_nonpositive_int(1.0 + b[h] - b[j]):
                raise MeijerGError(f"pole collision: 1 + b[{h}] - b[{j}] is a non-positive integer")


def hypergeometric_series(num, den, x: float, rtol: float = SERIES_RTOL,
                          max_terms: int = SERIES_MAX_TERMS) -> float:
    """Sum ``pFq(num; den; x)`` term by term.

    Stops once two consecutive terms fall below ``rtol`` relative to the
    running sum, or when a numerator parameter terminates the series.
    """
    terms = [1.0]
    term = 1.0
    small_run = 0
    for k in range(max_terms):
        ratio = x / (k + 1)
        for a in num:
            ratio *= a + k
        for b in den:
            ratio /= b + k
        term *= ratio
        if term == 0.0:
            return math.fsum(terms)
        terms.append(term)
        if not math.isfinite(term):
            raise MeijerGError("hypergeometric series overflowed")
        total = math.fsum(terms)
        if abs(term) <= rtol * abs(total):
            small_run += 1
            if small_run >= 2:
                return total
        else:
            small_run = 0
    raise MeijerGError(f"hypergeometric series did not converge in {max_terms} terms (x={x:g})")


def meijer_g_eval(spec: MeijerGSpec, z: float) -> float:
    """Evaluate ``G^{m,n}_{p,q}(a; b | z)`` for real ``z > 0``."""
    z = float(z)
    if not (z > 0 and math.isfinite(z)):
        raise MeijerGError(f"z must be a finite positive real, got {z!r}")
    if spec.p == spec.q and z >= 1.0:
        raise MeijerGError(f"p == q requires z < 1, got z={z:g}")

    a, b, m, n, p, q = spec.a, spec.b, spec.m, spec.n, spec.p, spec.q
    sign = -1.0 if (p - m - n) % 2 else 1.0
    parts = []
    for h in range(m):
        bh = b[h]
        pref = 1.0
        for j in range(m):
            if j != h:
                pref *= gamma(b[j] - bh)
        for j in range(n):
            pref *= gamma(1.0 + bh - a[j])
        for j in range(m, q):
            pref *= rgamma(1.0 + bh - b[j])
        for j in range(n, p):
            pref *= rgamma(a[j] - bh)
        if pref == 0.0:
            continue
        if not math.isfinite(pref):
            raise MeijerGError(f"gamma prefactor for residue {h} is not finite")
        num = [1.0 + bh - a[j] for j in range(p)]
        den = [1.0 + bh - b[j] for j in range(q) if j != h]
        series = hypergeometric_series(num, den, sign * z)
        parts.append(pref * z ** bh * series)
    return math.fsum(parts)


def meijer_g_grad(spec: MeijerGSpec, z: float, return_flags: bool = False):
    """Central-difference gradient of :func:`meijer_g_eval` over ``(a, b)``.

    Each parameter is probed with step ``1e-5 * max(1, |theta|)``.  When a
    probe leaves the valid region the one-sided difference on the other
    side is used and the parameter index is flagged.
    """
    theta = spec.params
    grad = np.zeros_like(theta)
    flagged = []
    base = None
    for i, t in enumerate(theta):
        h = 1e-5 * max(1.0, abs(t))
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        f_up = _try_eval(spec, up, z)
        f_dn = _try_eval(spec, dn, z)
        if f_up is not None and f_dn is not None:
            grad[i] = (f_up - f_dn) / (2 * h)
            continue
        if base is None:
            base = meijer_g_eval(spec, z)
        if f_up is not None:
            grad[i] = (f_up - base) / h
        elif f_dn is not None:
            grad[i] = (base - f_dn) / h
        else:
            raise MeijerGError(f"both probes of parameter {i} leave the valid region")
        flagged.append(i)
    if not np.all(np.isfinite(grad)):
        raise MeijerGError("gradient is not finite")
    if return_flags:
        return grad, flagged
    return grad


def _try_eval(spec, theta, z):
    try:
        return meijer_g_eval(spec.with_params(theta), z)
    except MeijerGError:
        return None
