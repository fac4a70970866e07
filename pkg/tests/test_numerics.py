import numpy as np
import pytest

from tools.numerics import (ObjectiveHandle, bfgs_maximize, check_gradient, interval_probs, log_softmax,
                            ordinal_cdf, ordinal_probs, softmax)
from utils.errors import NumericDomainError


def test_softmax_is_stable_for_large_inputs():
    np.testing.assert_allclose(softmax([1000.0, 1000.0]), [0.5, 0.5])
    p = softmax([1000.0, 0.0, -1000.0])
    assert p[0] == pytest.approx(1.0)
    assert np.all(np.isfinite(p))


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericDomainError):
        softmax([np.nan, 1.0])
    with pytest.raises(NumericDomainError):
        log_softmax([np.inf, 1.0])


def test_log_softmax_matches_log_of_softmax():
    v = np.array([0.3, -1.2, 2.5])
    np.testing.assert_allclose(log_softmax(v), np.log(softmax(v)), rtol=1e-12)


@pytest.mark.parametrize("V", [-5.0, 0.0, 0.7, 4.0])
def test_ordinal_probs_form_a_distribution(V):
    p = ordinal_probs(V, [0.0, 1.0, 2.0, 3.0])
    assert p.shape == (5,)
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_ordinal_probs_limits():
    high = ordinal_probs(50.0, [0.0, 1.0, 2.0, 3.0])
    assert high[:-1].sum() < 1e-20
    low = ordinal_probs(-50.0, [0.0, 1.0, 2.0, 3.0])
    assert low[1:].sum() < 1e-20


def test_ordinal_thresholds_must_increase():
    with pytest.raises(NumericDomainError):
        ordinal_probs(0.0, [0.0, 1.0, 1.0])
    with pytest.raises(NumericDomainError):
        ordinal_cdf(0.0, [0.0, -1.0])


def test_ordinal_cdf_is_monotone():
    cdf = ordinal_cdf(0.4, [0.0, 0.5, 1.5])
    assert np.all(np.diff(cdf) > 0)


def test_interval_probs_keeps_right_tail_precision():
    p = interval_probs(np.array([40.0]), np.array([np.inf]))
    assert p[0] > 0
    assert p[0] == pytest.approx(np.exp(-40.0), rel=1e-6)


def _quadratic(a, A):
    return ObjectiveHandle(lambda x: -0.5 * (x - a) @ A @ (x - a), lambda x: -A @ (x - a))


def test_bfgs_maximizes_concave_quadratic():
    a = np.array([1.0, -2.0, 0.5])
    A = np.array([[3.0, 0.5, 0.0], [0.5, 2.0, 0.1], [0.0, 0.1, 1.0]])
    result = bfgs_maximize(_quadratic(a, A), np.zeros(3), tol=1e-9, max_iter=100)
    assert result.converged
    np.testing.assert_allclose(result.x, a, atol=1e-6)


def test_bfgs_on_negated_rosenbrock():
    def f(x):
        return -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

    def g(x):
        return -np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])

    result = bfgs_maximize(ObjectiveHandle(f, g), np.array([-1.2, 1.0]), tol=1e-6, max_iter=1000)
    np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-4)


def test_bfgs_returns_start_on_zero_gradient():
    result = bfgs_maximize(_quadratic(np.zeros(2), np.eye(2)), np.zeros(2))
    assert result.converged and result.iterations == 0


def test_bfgs_rejects_non_finite_start():
    with pytest.raises(NumericDomainError):
        bfgs_maximize(ObjectiveHandle(lambda x: np.nan, lambda x: x), np.zeros(1))


def test_check_gradient_flags_wrong_gradients():
    a, A = np.array([0.5, 1.0]), np.eye(2) * 2.0
    good = _quadratic(a, A)
    bad = ObjectiveHandle(good.eval, lambda x: 2.0 * good.grad(x))
    x = np.array([0.3, -0.4])
    assert check_gradient(good, x) < 1e-7
    assert check_gradient(bad, x) > 0.1


def _random_concave_quadratic(dim, seed):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    A = basis @ np.diag(rng.uniform(0.5, 5.0, dim)) @ basis.T
    return rng.normal(size=dim), (A + A.T) / 2.0


@pytest.mark.parametrize("dim,seed", [(1, 0), (2, 1), (5, 2), (10, 3), (15, 4), (20, 5)])
def test_bfgs_on_random_concave_quadratics(dim, seed):
    a, A = _random_concave_quadratic(dim, seed)
    objective = _quadratic(a, A)
    result = bfgs_maximize(objective, np.zeros(dim), tol=1e-8, max_iter=100)
    assert result.converged
    assert result.iterations <= 100
    assert np.max(np.abs(objective.grad(result.x))) < 1e-8
    np.testing.assert_allclose(result.x, a, atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_bfgs_distant_starts_reach_the_same_optimum(seed):
    a, A = _random_concave_quadratic(6, seed)
    objective = _quadratic(a, A)
    first = bfgs_maximize(objective, np.full(6, -50.0), tol=1e-9, max_iter=200)
    second = bfgs_maximize(objective, np.full(6, 50.0), tol=1e-9, max_iter=200)
    np.testing.assert_allclose(first.x, second.x, atol=1e-5)
