import numpy as np
import pytest

from glassbox.lime import TrainStats, lime_explain, perturb


def stats_for(d, std=0.2, binary=None):
    return TrainStats(np.full(d, 0.5), np.full(d, std), np.zeros(d, bool) if binary is None else np.asarray(binary))


def test_single_sample_is_the_instance():
    x = np.array([0.2, 0.7, 1.0])
    assert np.array_equal(perturb(x, stats_for(3, binary=[0, 0, 1]), 1, 0), x[None, :])


def test_zero_std_column_constant_and_flagged():
    stats = TrainStats(np.zeros(2), np.array([0.0, 0.2]), np.zeros(2, bool))
    flags = []
    Z = perturb(np.array([0.4, 0.5]), stats, 500, 1, flags)
    assert np.all(Z[:, 0] == 0.4) and flags


def test_perturbed_mean_near_instance():
    x = np.array([0.5, 0.5])
    n = 10_000
    Z = perturb(x, stats_for(2, std=0.1), n, 2)
    assert np.all(np.abs(Z.mean(axis=0) - x) <= 3 * 0.1 / np.sqrt(n))


def test_binary_flip_rate_and_clipping():
    Z = perturb(np.array([1.0, 0.95]), stats_for(2, std=0.3, binary=[1, 0]), 20_000, 3)
    assert set(np.unique(Z[:, 0])) == {0.0, 1.0}
    assert abs((Z[1:, 0] == 0).mean() - 0.25) < 0.01
    assert Z.min() >= 0.0 and Z.max() <= 1.0


def test_linear_model_recovered():
    a = np.array([0.3, -0.2, 0.05])
    f = lambda X: np.atleast_2d(X) @ a + 0.1
    ex = lime_explain(f, np.array([0.5, 0.4, 0.6]), stats_for(3, std=0.1), 5000, None, 0)
    assert np.allclose(ex.coefficients, a, atol=1e-3)
    assert ex.intercept == pytest.approx(0.1, abs=1e-3) and ex.surrogate_r2 > 0.999


def test_constant_model_flat_surrogate():
    ex = lime_explain(lambda X: np.full(len(X), 0.42), np.full(4, 0.5), stats_for(4), 500, None, 0)
    assert np.all(np.abs(ex.coefficients) <= 1e-9)
    assert ex.intercept == pytest.approx(0.42, abs=1e-9)


def test_monotone_feature_positive_coefficient():
    f = lambda X: 1 / (1 + np.exp(-6 * (np.atleast_2d(X)[:, 1] - 0.5)))
    ex = lime_explain(f, np.array([0.3, 0.45, 0.8]), stats_for(3), 3000, None, 4)
    assert ex.coefficients[1] > 0 and abs(ex.coefficients[1]) > 10 * max(abs(ex.coefficients[[0, 2]]))


def test_default_kernel_width_and_determinism():
    f = lambda X: np.atleast_2d(X)[:, 0] ** 2
    x = np.full(4, 0.3)
    a = lime_explain(f, x, stats_for(4), 800, None, 7)
    b = lime_explain(f, x, stats_for(4), 800, None, 7)
    assert a.kernel_width == pytest.approx(0.75 * 2.0)
    assert np.array_equal(a.coefficients, b.coefficients)


def test_rank_deficient_design_uses_ridge():
    stats = TrainStats(np.zeros(2), np.array([0.0, 0.1]), np.zeros(2, bool))
    ex = lime_explain(lambda X: np.atleast_2d(X)[:, 1], np.array([0.5, 0.5]), stats, 200, None, 0)
    assert any("ridge" in fl for fl in ex.flags)
    assert ex.coefficients[1] == pytest.approx(1.0, abs=1e-3)


def test_from_matrix_detects_binary():
    X = np.array([[0, 0.2], [1, 0.4], [1, 0.9]])
    s = TrainStats.from_matrix(X)
    assert s.binary.tolist() == [True, False]


def test_invalid_arguments():
    with pytest.raises(ValueError):
        lime_explain(lambda X: X[:, 0], np.zeros(3), stats_for(3), 3, None, 0)
    with pytest.raises(ValueError):
        lime_explain(lambda X: X[:, 0], np.zeros(3), stats_for(3), 100, -1.0, 0)
