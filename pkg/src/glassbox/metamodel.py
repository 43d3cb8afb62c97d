"""Global symbolic surrogate ``g(x) = 1 / (C * exp(p(x)))``.

``p`` is a weighted sum of monomials drawn from the linear terms ``X_i`` and
the pairwise cubic interactions ``X_i^3 X_j^3``.  The fit minimizes the mean
squared error against black-box scores by full-batch gradient descent over
``log C`` and the coefficients.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .meijer import MeijerGSpec, meijer_g_eval
from .shap import as_batch

ALLOWED_EXPONENTS = (1, 3)
MAX_RESTARTS = 10
STEP_GROWTH = 1.1
MIN_STEP = 1e-30
MID_DOT = "·"


class MetamodelDivergence(ArithmeticError):
    pass


@dataclass(frozen=True)
class Monomial:
    factors: tuple[tuple[int, int], ...]
    coefficient: float = 0.0

    def __post_init__(self):
        factors = tuple((int(i), int(e)) for i, e in self.factors)
        idx = [i for i, _ in factors]
        if len(set(idx)) != len(idx):
            raise ValueError("feature indices must be unique within a monomial")
        if not 1 <= len(factors) <= 2:
            raise ValueError("a monomial has one or two factors")
        for _, e in factors:
            if e not in ALLOWED_EXPONENTS:
                raise ValueError(f"exponent {e} not in {ALLOWED_EXPONENTS}")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "coefficient", float(self.coefficient))

    def values(self, X) -> np.ndarray:
        out = np.ones(X.shape[0])
        for i, e in self.factors:
            out = out * X[:, i] ** e
        return out

    def with_coefficient(self, c) -> "Monomial":
        return Monomial(self.factors, c)

    @property
    def is_interaction(self) -> bool:
        return len(self.factors) == 2

    def label(self) -> str:
        return MID_DOT.join(f"X{i}" if e == 1 else f"X{i}^{e}" for i, e in self.factors)


@dataclass
class MetamodelSpec:
    scale: float
    terms: list[Monomial]
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError("scale C must be a finite positive number")

    def polynomial(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = np.zeros(X.shape[0])
        for t in self.terms:
            if t.coefficient != 0.0:
                p += t.coefficient * t.values(X)
        return p

    def evaluate(self, X) -> np.ndarray:
        """``g(x)`` for every row of ``X``."""
        return np.exp(-math.log(self.scale) - self.polynomial(X))

    __call__ = evaluate

    def to_dict(self):
        return {
            "scale": self.scale,
            "terms": [{"factors": [list(f) for f in t.factors], "coeff": t.coefficient} for t in self.terms],
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, d):
        terms = [Monomial(tuple(tuple(f) for f in t["factors"]), t["coeff"]) for t in d["terms"]]
        return cls(float(d["scale"]), terms, list(d.get("feature_names", [])))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate_via_meijer(spec: MetamodelSpec, X) -> np.ndarray:
    """Evaluate ``g`` through ``exp(-z) = G^{1,0}_{0,1}(z | 0)``.

    Cross-checks the closed form against the special-function backend;
    negative exponents use ``exp(-z) = 1 / G(|z|)``.
    """
    g10 = MeijerGSpec(1, 0, 0, 1, (), (0.0,))
    out = []
    for z in spec.polynomial(X):
        if z > 0:
            e = meijer_g_eval(g10, z)
        elif z < 0:
            e = 1.0 / meijer_g_eval(g10, -z)
        else:
            e = 1.0
        out.append(e / spec.scale)
    return np.array(out)


def build_basis(d: int, include_linear: bool = True, include_cubic_interactions: bool = True) -> list[Monomial]:
    """Linear terms by index, then ``X_i^3 X_j^3`` pairs in lexicographic order."""
    if d < 1:
        raise ValueError("d must be >= 1")
    basis = []
    if include_linear:
        basis += [Monomial(((i, 1),)) for i in range(d)]
    if include_cubic_interactions:
        basis += [Monomial(((i, 3), (j, 3))) for i, j in combinations(range(d), 2)]
    return basis


# ---------------------------------------------------------------- fitting

@dataclass
class FitTrace:
    loss: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)
    restarts: int = 0
    final_gradient_norm: float = float("nan")

    def to_dict(self):
        return {"loss": self.loss, "objective": self.objective, "steps": self.steps,
                "restarts": self.restarts, "final_gradient_norm": self.final_gradient_norm}


@dataclass
class FitOptions:
    iterations: int = 2000
    step: float = 0.1
    l1_penalty: float = 1e-4
    seed: int = 0


def design_matrix(basis, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if not basis:
        return np.zeros((X.shape[0], 0))
    return np.column_stack([m.values(X) for m in basis])


def loss_and_gradient(log_scale, coef, M, y):
    """MSE of ``exp(-log C - M @ coef)`` against ``y`` and its analytic gradient.

    Returns ``(loss, d_loss/d_logC, d_loss/d_coef)``, using
    ``dg/dw_k = -g * m_k`` and ``dg/dlogC = -g``.
    """
    g = np.exp(-log_scale - M @ coef)
    r = g - y
    n = y.size
    loss = float(r @ r) / n
    common = -2.0 * r * g / n
    return loss, float(common.sum()), M.T @ common


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def fit_metamodel(model, query_rows, basis, opts: FitOptions | None = None, feature_names=None):
    """Fit ``g`` to the black box's scores on ``query_rows``.

    Starts from the constant model (``log C = 0``, all coefficients 0).
    Each iteration takes a gradient step on the column-scaled problem,
    followed by an L1 proximal step on the coefficients.  A step that
    raises the penalized objective is halved and retried; an accepted step
    lets the next one grow by 10%.  Non-finite losses count as divergence:
    after ``MAX_RESTARTS`` of them the fit fails.
    """
    opts = opts or FitOptions()
    if opts.iterations < 1:
        raise ValueError("iterations must be >= 1")
    Q = np.asarray(query_rows, dtype=float)
    if Q.ndim != 2:
        raise ValueError("query_rows must be a matrix")
    if Q.size and (Q.min() < 0.0 or Q.max() > 1.0):
        raise ValueError("query rows must lie in [0, 1]^d")
    y = np.asarray(as_batch(model)(Q), dtype=float)
    return fit_to_targets(Q, y, basis, opts, feature_names)


def fit_to_targets(Q, y, basis, opts: FitOptions | None = None, feature_names=None):
    opts = opts or FitOptions()
    M = design_matrix(basis, Q)
    k = M.shape[1]
    # scaling columns to unit RMS evens out the curvature across terms
    rms = np.sqrt((M ** 2).mean(axis=0)) if k else np.zeros(0)
    rms[rms == 0] = 1.0
    Ms = M / rms
    thresh = opts.l1_penalty / rms

    def objective(loss, u):
        return loss + opts.l1_penalty * float(np.abs(u / rms).sum())

    log_c = 0.0
    u = np.zeros(k)
    loss, g_c, g_u = loss_and_gradient(log_c, u, Ms, y)
    trace = FitTrace()
    obj = objective(loss, u)
    trace.loss.append(loss)
    trace.objective.append(obj)
    step = opts.step
    for _ in range(opts.iterations):
        while True:
            cand_c = log_c - step * g_c
            cand_u = _soft(u - step * g_u, step * thresh)
            with np.errstate(over="ignore", invalid="ignore"):
                cand_loss, cg_c, cg_u = loss_and_gradient(cand_c, cand_u, Ms, y)
            if not math.isfinite(cand_loss):
                trace.restarts += 1
                if trace.restarts > MAX_RESTARTS:
                    raise MetamodelDivergence(f"loss diverged {trace.restarts} times; giving up")
                step *= 0.5
                continue
            cand_obj = objective(cand_loss, cand_u)
            if cand_obj <= obj:
                break
            step *= 0.5
            if step < MIN_STEP:
                break
        if step < MIN_STEP:
            break
        log_c, u, loss, g_c, g_u, obj = cand_c, cand_u, cand_loss, cg_c, cg_u, cand_obj
        trace.loss.append(loss)
        trace.objective.append(obj)
        trace.steps.append(step)
        step *= STEP_GROWTH
    trace.final_gradient_norm = float(math.sqrt(g_c ** 2 + float((g_u / rms) @ (g_u / rms))))
    coef = u / rms
    if not (abs(log_c) < 700 and np.all(np.isfinite(coef))):
        raise MetamodelDivergence(f"fit left the representable range (log C = {log_c:g})")
    names = list(feature_names) if feature_names is not None else [f"X{i}" for i in range(Q.shape[1])]
    spec = MetamodelSpec(math.exp(log_c), [m.with_coefficient(c) for m, c in zip(basis, coef)], names)
    return spec, trace


# ---------------------------------------------------------------- expressions

def _fmt(v: float, precision: int) -> str:
    return f"{v:.{precision}f}"


def render_expression(spec: MetamodelSpec, precision: int = 4) -> str:
    """Canonical ``1/(C·e^{...})`` text, terms by |coefficient| descending."""
    order = sorted(range(len(spec.terms)), key=lambda k: -abs(spec.terms[k].coefficient))
    parts = []
    for k in order:
        t = spec.terms[k]
        mag = _fmt(abs(t.coefficient), precision)
        if float(mag) == 0.0:
            continue
        neg = t.coefficient < 0
        body = f"{mag}{MID_DOT}{t.label()}"
        if not parts:
            parts.append(f"-{body}" if neg else body)
        else:
            parts.append(f" - {body}" if neg else f" + {body}")
    poly = "".join(parts) if parts else "0"
    # C is positive: widen its format until it does not print as zero
    digits = precision
    while float(_fmt(spec.scale, digits)) == 0.0:
        digits += 1
    return f"1/({_fmt(spec.scale, digits)}{MID_DOT}e^{{{poly}}})"


_EXPR = re.compile(r"^1/\((?P<scale>[0-9.]+)·e\^\{(?P<poly>.*)\}\)$")
_TERM = re.compile(r"(?P<sign>[+-]?)\s*(?P<coef>[0-9.]+)·(?P<mono>X\d+(?:\^\d+)?(?:·X\d+(?:\^\d+)?)*)")
_FACTOR = re.compile(r"X(\d+)(?:\^(\d+))?")


def parse_expression(text: str, feature_names=None) -> MetamodelSpec:
    """Inverse of :func:`render_expression`."""
    m = _EXPR.match(text.strip())
    if not m:
        raise ValueError(f"not a metamodel expression: {text!r}")
    poly = m.group("poly").strip()
    terms = []
    if poly != "0":
        pos = 0
        compact = poly.replace(" ", "")
        while pos < len(compact):
            tm = _TERM.match(compact, pos)
            if not tm:
                raise ValueError(f"cannot parse term at {compact[pos:]!r}")
            factors = tuple((int(i), int(e) if e else 1) for i, e in _FACTOR.findall(tm.group("mono")))
            coef = float(tm.group("coef"))
            terms.append(Monomial(factors, -coef if tm.group("sign") == "-" else coef))
            pos = tm.end()
    return MetamodelSpec(float(m.group("scale")), terms, list(feature_names or []))


def _name(spec, i):
    return spec.feature_names[i] if i < len(spec.feature_names) else f"X{i}"


def rank_features(spec: MetamodelSpec, top_k: int = 5):
    """Features by |coefficient| of their linear term, descending; ties by name."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    rows = [(_name(spec, t.factors[0][0]), abs(t.coefficient)) for t in spec.terms if not t.is_interaction]
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows[:top_k]


def rank_interactions(spec: MetamodelSpec, top_k: int = 2):
    """Feature pairs by |coefficient| of their interaction term, descending; ties by names."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    rows = [((_name(spec, t.factors[0][0]), _name(spec, t.factors[1][0])), abs(t.coefficient))
            for t in spec.terms if t.is_interaction]
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows[:top_k]
