"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a one-line PASS/FAIL summary (printed at the end of the
pytest run by ``conftest.py``) before asserting.
"""

import itertools
import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit

from glassbox.config import RunConfig
from glassbox.ensemble import fit_boosted_depthwise, fit_boosted_leafwise
from glassbox.evaluation import auc
from glassbox.lime import TrainStats, lime_explain
from glassbox.meijer import MeijerGError, MeijerGSpec, meijer_g_eval, meijer_g_grad
from glassbox.metamodel import FitOptions, build_basis, fit_metamodel, rank_interactions
from glassbox.pipeline import ARTIFACTS, run_pipeline
from glassbox.selection import mutual_information, prune_correlated, rank_by_mutual_information
from glassbox.shap import shap_exact, shap_sampled, shap_summary
from glassbox.synth import SynthConfig, column_name, generate


# ---------------------------------------------------------------- 1

class LookupModel:
    """f(x) = table[bits of x]; inputs are 0/1 vectors."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)
        self.d = int(round(math.log2(self.table.size)))

    def __call__(self, X):
        X = np.atleast_2d(X).astype(int)
        idx = X @ (1 << np.arange(self.d))
        return self.table[idx]


def brute_force_shapley(f, x, background):
    """Weighted sum over every coalition, written without any shared code."""
    d = len(x)

    def value(S):
        rows = background.copy()
        for j in S:
            rows[:, j] = x[j]
        return float(np.mean(f(rows)))

    phi = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        for size in range(d):
            w = math.factorial(size) * math.factorial(d - size - 1) / math.factorial(d)
            for S in itertools.combinations(others, size):
                phi[i] += w * (value(S + (i,)) - value(S))
    return phi


def test_criterion_01_shapley_exactness(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_phi = worst_eff = 0.0
    for _ in range(50):
        f = LookupModel(rng.normal(size=16))
        background = rng.integers(0, 2, size=(int(rng.integers(1, 12)), 4)).astype(float)
        x = rng.integers(0, 2, size=4).astype(float)
        ex = shap_exact(f, x, background)
        oracle = brute_force_shapley(f, x, background)
        worst_phi = max(worst_phi, float(np.max(np.abs(ex.attributions - oracle))))
        worst_eff = max(worst_eff, abs(ex.base_value + ex.attributions.sum() - float(f(x)[0])))
    elapsed = time.perf_counter() - start
    ok = worst_phi <= 1e-9 and worst_eff <= 1e-9 and elapsed < 10
    criterion(1, ok, f"max|dphi|={worst_phi:.2e} max efficiency gap={worst_eff:.2e} time={elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------- 2

def random_smooth_model(rng, d):
    w = rng.normal(size=d)
    pairs = rng.normal(size=(d, d)) * (rng.uniform(size=(d, d)) < 0.3)

    def f(X):
        X = np.atleast_2d(X)
        return np.tanh(X @ w + np.einsum("ni,ij,nj->n", X, pairs, X))

    return f


def test_criterion_02_sampled_shap_consistency(criterion):
    d = 8
    inside = total = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        f = random_smooth_model(rng, d)
        background = rng.normal(size=(16, d))
        for x in rng.normal(size=(3, d)):
            exact = shap_exact(f, x, background).attributions
            est = shap_sampled(f, x, background, permutations=2000, seed=seed)
            inside += int(np.sum(np.abs(est.attributions - exact) <= 4 * est.standard_errors + 1e-12))
            total += d
    frac = inside / total
    criterion(2, frac >= 0.95, f"{inside}/{total} cells within 4 SE ({frac:.3f}, need >= 0.95)")
    assert frac >= 0.95


# ---------------------------------------------------------------- 3

def random_valid_spec(rng):
    while True:
        q = int(rng.integers(1, 4))
        p = int(rng.integers(0, q + 1))
        m = int(rng.integers(1, q + 1))
        n = int(rng.integers(0, p + 1))
        a = tuple(rng.uniform(-0.8, 1.5, size=p))
        b = tuple(rng.uniform(-0.4, 1.5, size=q))
        try:
            spec = MeijerGSpec(m, n, p, q, a, b)
        except MeijerGError:
            continue
        z = float(rng.uniform(0.1, 0.9) if p == q else rng.uniform(0.2, 3.0))
        try:
            meijer_g_eval(spec, z)
        except MeijerGError:
            continue
        return spec, z


def directional_fd(spec, z, v, h):
    theta = spec.params
    hi = meijer_g_eval(spec.with_params(theta + h * v), z)
    lo = meijer_g_eval(spec.with_params(theta - h * v), z)
    return (hi - lo) / (2 * h)


def test_criterion_03_meijer_identities(criterion):
    start = time.perf_counter()
    worst = 0.0
    cases = [
        (MeijerGSpec(1, 0, 0, 1, (), (0.0,)), (0.5, 1.0, 2.0, 5.0), lambda z: math.exp(-z)),
        (MeijerGSpec(1, 1, 1, 1, (1.0,), (1.0,)), (0.1, 0.3, 0.5, 0.9), lambda z: z / (1 + z)),
        (MeijerGSpec(1, 2, 2, 2, (1.0, 1.0), (1.0, 0.0)), (0.1, 0.3, 0.5, 0.9), lambda z: math.log1p(z)),
    ]
    for spec, grid, closed in cases:
        for z in grid:
            worst = max(worst, abs(meijer_g_eval(spec, z) - closed(z)) / abs(closed(z)))

    rng = np.random.default_rng(3)
    worst_grad = 0.0
    for _ in range(100):
        spec, z = random_valid_spec(rng)
        g = meijer_g_grad(spec, z)
        v = rng.normal(size=g.size)
        v /= np.linalg.norm(v)
        scale = max(1.0, float(np.max(np.abs(spec.params))))
        for h in (1e-4 * scale, 1e-5 * scale):
            fd = directional_fd(spec, z, v, h)
            err = abs(fd - float(g @ v)) / max(float(np.linalg.norm(g)), 1e-12)
            worst_grad = max(worst_grad, err)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and worst_grad <= 1e-4 and elapsed < 5
    criterion(3, ok, f"identity rel err={worst:.2e}, gradient rel err={worst_grad:.2e}, time={elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------- 4

def test_criterion_04_metamodel_recovery(criterion):
    start = time.perf_counter()

    def target(X):
        return 1.0 / (2.0 * np.exp(X[:, 0] - X[:, 1]))

    Q = np.random.default_rng(4).uniform(size=(500, 2))
    spec, trace = fit_metamodel(target, Q, build_basis(2), FitOptions())
    coef = {t.label(): t.coefficient for t in spec.terms}
    mse = float(np.mean((spec.evaluate(Q) - target(Q)) ** 2))
    elapsed = time.perf_counter() - start
    ok = (abs(spec.scale - 2.0) <= 0.04 and abs(coef["X0"] - 1.0) <= 0.02 and abs(coef["X1"] + 1.0) <= 0.02
          and mse <= 1e-6 and elapsed < 30)
    criterion(4, ok, f"C={spec.scale:.4f} b0={coef['X0']:.4f} b1={coef['X1']:.4f} "
                     f"mse={mse:.1e} time={elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------- 5 and 9

def synth_config(out, kind="forest"):
    config = RunConfig(seed=0, out=str(out))
    config.model.kind = kind
    config.explain.instances = ["0"]
    return config


@pytest.fixture(scope="module")
def forest_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run_a")
    run_pipeline(synth_config(out))
    return out


FIDELITY = {}


@pytest.mark.parametrize("kind", ["forest", "leafwise", "depthwise"])
def test_criterion_05_fidelity_gap(kind, forest_run, tmp_path, criterion):
    start = time.perf_counter()
    out = forest_run if kind == "forest" else tmp_path / kind
    if kind != "forest":
        run_pipeline(synth_config(out, kind))
    ev = json.loads((out / "evaluation.json").read_text())
    meta = json.loads((out / "metamodel.json").read_text())
    black = ev["comparison"]["auc"]["black_box"]["value"]
    white = ev["comparison"]["auc"]["metamodel"]["value"]
    elapsed = time.perf_counter() - start
    FIDELITY[kind] = (black, white, white >= black - 0.08 and elapsed < 300 and meta["basis_size"] == 210)
    ok = all(v[2] for v in FIDELITY.values())
    detail = "; ".join(f"{k}: black box {b:.4f} / metamodel {w:.4f}" for k, (b, w, _) in FIDELITY.items())
    criterion(5, ok, detail)
    assert FIDELITY[kind][2], f"{kind}: metamodel {white:.4f} vs black box {black:.4f}"


def test_criterion_09_determinism(forest_run, tmp_path, criterion):
    second = tmp_path / "run_b"
    run_pipeline(synth_config(second))
    differing = []
    files = sorted(p.relative_to(forest_run) for p in forest_run.rglob("*") if p.is_file())
    for rel in files:
        if rel.name == "manifest.json":
            continue
        if (forest_run / rel).read_bytes() != (second / rel).read_bytes():
            differing.append(str(rel))
    m1 = json.loads((forest_run / "manifest.json").read_text())
    m2 = json.loads((second / "manifest.json").read_text())
    for m in (m1, m2):
        m.pop("created")
        m["config"].pop("out")
    listed = [a["path"] for a in m1["artifacts"]]
    ok = not differing and m1 == m2 and listed == list(ARTIFACTS)
    criterion(9, ok, f"{len(files)} files compared, {len(differing)} differ; manifest lists {len(listed)} artifacts")
    assert ok, differing


# ---------------------------------------------------------------- 6

def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = Fraction(0)
    for p in pos:
        for q in neg:
            total += 1 if p > q else Fraction(1, 2) if p == q else 0
    return total / (len(pos) * len(neg))


def test_criterion_06_auc_oracle(criterion):
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, 6, size=n) / 5.0   # few distinct values: many ties
        if auc(scores, labels).value != float(pairwise_auc(scores, labels)):
            mismatches += 1
    example = auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]).value
    ok = mismatches == 0 and example == 0.75
    criterion(6, ok, f"{mismatches}/200 mismatches vs pairwise count; example AUC={example}")
    assert ok


# ---------------------------------------------------------------- 7

def test_criterion_07_selection(criterion):
    # product construction: every (x, y) pair appears exactly once
    x = np.repeat(np.arange(4), 3)
    y = np.tile(np.arange(3), 4)
    mi_indep = mutual_information(x, y)
    b = np.tile([0, 1], 50)
    mi_self = mutual_information(b, b)

    planted = {0: 5.0, 3: 5.0, 5: -5.0, 8: 5.0}
    names = {column_name(j) for j in planted}
    hits = 0
    for seed in range(10):
        table, _ = generate(SynthConfig(informative=planted, interaction_pair=None, intercept=-5.0, seed=seed))
        hits += set(rank_by_mutual_information(table, 20).kept[: len(planted)]) == names

    prune_ok = 0
    pairs = [(1, 15, 0.05), (2, 16, 0.1)]
    for seed in range(5):
        table, _ = generate(SynthConfig(duplicate_pairs=pairs, seed=seed))
        _, report = prune_correlated(table, 0.8)
        dropped = {c for c, _, _ in report.dropped}
        one_each = all(len(dropped & {column_name(s), column_name(t)}) == 1 for s, t, _ in pairs)
        prune_ok += one_each and len(dropped) == len(pairs)
    ok = mi_indep <= 1e-12 and abs(mi_self - math.log(2)) <= 1e-12 and hits >= 9 and prune_ok == 5
    criterion(7, ok, f"MI indep={mi_indep:.1e}, MI(x,x)-ln2={mi_self - math.log(2):.1e}, "
                     f"planted top ranks {hits}/10 seeds, pruning exact on {prune_ok}/5 seeds")
    assert ok


# ---------------------------------------------------------------- 8

A, B, D = 1, 3, 6


def plant(X):
    X = np.atleast_2d(X)
    return expit(8.0 * (X[:, A] - 0.5) * (X[:, B] - 0.5))


def test_criterion_08_explainer_agreement(criterion):
    rng = np.random.default_rng(8)
    names = [f"f{j}" for j in range(D)]
    X = rng.uniform(size=(400, D))
    summary = shap_summary(plant, X[:30], X[:50], names)
    shap_top = {n for n, _, _ in summary.ranked()[:2]}

    stats = TrainStats.from_matrix(X)
    sign_hits = 0
    for k in range(10):
        x = rng.uniform(size=D)
        for j in (A, B):
            x[j] = rng.choice([rng.uniform(0.0, 0.2), rng.uniform(0.8, 1.0)])
        coef = lime_explain(plant, x, stats, 5000, None, k).coefficients
        # d plant / d x_A has the sign of (x_B - 0.5), and vice versa
        expected = np.sign([x[B] - 0.5, x[A] - 0.5])
        sign_hits += bool(np.all(np.sign(coef[[A, B]]) == expected))

    spec, _ = fit_metamodel(plant, rng.uniform(size=(1000, D)), build_basis(D), FitOptions(), names)
    top_pair = rank_interactions(spec, 1)[0][0]
    ok = shap_top == {names[A], names[B]} and sign_hits == 10 and set(top_pair) == {names[A], names[B]}
    criterion(8, ok, f"SHAP top-2={sorted(shap_top)}, LIME signs {sign_hits}/10, top interaction={top_pair}")
    assert ok


# ---------------------------------------------------------------- 10

def test_criterion_10_boosting_monotone(criterion):
    worst = -math.inf
    runs = 0
    for seed in range(20):
        table, _ = generate(SynthConfig(seed=seed))
        for fit in (fit_boosted_leafwise, fit_boosted_depthwise):
            model = fit(table, rounds=50, seed=seed)
            worst = max(worst, float(np.max(np.diff(model.train_loss))))
            runs += 1
    ok = worst <= 0.0
    criterion(10, ok, f"{runs} runs, largest per-round loss change {worst:.3e}")
    assert ok
