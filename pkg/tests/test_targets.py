import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowsampler import targets as T
from flowsampler.errors import DimensionError, SPDError, UnsupportedOperationError
from flowsampler.gaussian_flows import gauss_hermite_rule, GaussianMoments


BUILTINS = [
    T.gaussian_benchmark(0.01),
    T.gaussian_benchmark(1.0),
    T.logconcave(0.01),
    T.logconcave(1.0),
    T.rosenbrock(0.1),
    T.rosenbrock(1.0),
    T.polynomial_even(1),
    T.polynomial_even(2),
]


def test_log_density_examples():
    assert T.log_density_unnorm(T.gaussian_benchmark(1.0), [0.0, 0.0]) == 0.0
    assert T.log_density_unnorm(T.rosenbrock(0.1), [1.0, 1.0]) == 0.0
    assert T.log_density_unnorm(T.logconcave(0.01), [0.0, 2.0]) == pytest.approx(-1.0, abs=1e-15)


def test_grad_examples():
    np.testing.assert_allclose(T.grad_log_density(T.gaussian_benchmark(0.1), [1.0, 2.0]),
                               [-1.0, -0.2], rtol=1e-15)
    for lam in (0.01, 0.1, 1.0):
        np.testing.assert_array_equal(T.grad_log_density(T.rosenbrock(lam), [1.0, 1.0]), [0, 0])
    tg = T.logconcave(1.0)
    fd = T.finite_difference_gradient(tg.log_density_unnorm, np.array([2.0, 1.0]))
    np.testing.assert_allclose(T.grad_log_density(tg, [2.0, 1.0]), fd, atol=1e-6)


def test_hessian_examples():
    H = T.hess_log_density(T.gaussian_benchmark(0.01), np.array([3.0, -7.0]))
    np.testing.assert_allclose(H, -np.diag([1.0, 0.01]), rtol=1e-14)

    tg = T.polynomial_even(1)
    fd = T.finite_difference_gradient(tg.grad_log_density, np.array([1.0]))
    np.testing.assert_allclose(T.hess_log_density(tg, [1.0]), fd, rtol=1e-5)

    tg = T.rosenbrock(1.0)
    H = T.hess_log_density(tg, np.zeros(2))
    np.testing.assert_allclose(H, -np.array([[0.1, 0.0], [0.0, 0.1]]), atol=1e-15)
    fd = T.finite_difference_gradient(tg.grad_log_density, np.zeros(2))
    np.testing.assert_allclose(H, fd, atol=1e-8)


def test_dimension_mismatch_raises():
    with pytest.raises(DimensionError):
        T.log_density_unnorm(T.rosenbrock(1.0), [1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        T.grad_log_density(T.polynomial_even(1), [1.0, 2.0])


def test_custom_without_hessian_is_unsupported():
    tg = T.custom(2, lambda x: 0.5 * x @ x, lambda x: x)
    assert not tg.has_hessian
    np.testing.assert_allclose(tg.grad_log_density(np.array([1.0, -2.0])), [-1.0, 2.0])
    with pytest.raises(UnsupportedOperationError):
        T.hess_log_density(tg, np.zeros(2))


def test_gaussian_requires_spd():
    with pytest.raises(SPDError):
        T.gaussian([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(SPDError):
        T.gaussian([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])


def test_polynomial_even_needs_positive_leading_coefficient():
    with pytest.raises(ValueError):
        T.polynomial_even(1, [1.0, 0.0, -1.0])


def test_batched_evaluation_matches_pointwise():
    rng = np.random.default_rng(3)
    for tg in BUILTINS:
        x = rng.standard_normal((4, 3, tg.dim))
        batch = tg.grad_log_density(x)
        assert batch.shape == x.shape
        np.testing.assert_allclose(batch[2, 1], tg.grad_log_density(x[2, 1]))
        assert tg.log_density_unnorm(x).shape == (4, 3)
        assert tg.hess_log_density(x).shape == (4, 3, tg.dim, tg.dim)


@pytest.mark.parametrize("tg", BUILTINS, ids=lambda t: repr(t))
def test_derivatives_match_finite_differences(tg):
    rng = np.random.default_rng(11)
    for _ in range(100):
        theta = rng.uniform(-2.0, 2.0, tg.dim)
        g = tg.grad_log_density(theta)
        fd = T.finite_difference_gradient(tg.log_density_unnorm, theta)
        scale = max(1.0, np.abs(g).max())
        assert np.abs(g - fd).max() / scale < 1e-5
        H = tg.hess_log_density(theta)
        fdH = T.finite_difference_gradient(tg.grad_log_density, theta)
        assert np.abs(H - fdH).max() / max(1.0, np.abs(H).max()) < 1e-4
        np.testing.assert_array_equal(H, np.swapaxes(H, -1, -2))


def test_counterexample_coefficients_identity_points():
    coeffs = T.counterexample_coefficients(1)
    assert 1 - T.counterexample_f(coeffs, 1.0) * 1.0 == pytest.approx(0.0, abs=1e-14)
    assert 1 - T.counterexample_f(coeffs, 2.0) * 2.0 == pytest.approx(-1.0, abs=1e-13)


def test_counterexample_coefficients_k2_residual():
    coeffs = T.counterexample_coefficients(2)
    C = np.random.default_rng(0).uniform(0.5, 1.5, 10)
    resid = 1 - T.counterexample_f(coeffs, C) * C + (C - 1) ** 5
    assert np.abs(resid).max() < 1e-10


def test_counterexample_coefficients_k1_exact_values():
    # hand-solved: 2 a2 = 3, 12 a4 = -3, 90 a6 = 1
    assert T.counterexample_coefficients(1) == [Fraction(3, 2), Fraction(-1, 4), Fraction(1, 90)]


@given(st.integers(min_value=1, max_value=4), st.floats(min_value=0.1, max_value=3.0))
def test_counterexample_identity_holds(K, C):
    coeffs = T.counterexample_coefficients(K)
    lhs = 1 - T.counterexample_f(coeffs, C) * C
    assert lhs == pytest.approx(-((C - 1) ** (2 * K + 1)), abs=1e-9 * max(1.0, C ** (2 * K + 1)))


@pytest.mark.parametrize("C", [0.8, 1.0, 1.2])
def test_counterexample_gaussian_hessian_expectation(C):
    coeffs = T.counterexample_coefficients(1)
    tg = T.polynomial_even(1)
    rule = gauss_hermite_rule(GaussianMoments(np.zeros(1), np.array([[C]])), order=40)
    expect = rule.expect(tg.hess_log_density(rule.points))[0, 0]
    assert expect == pytest.approx(-T.counterexample_f(coeffs, C), abs=1e-8)


def test_affine_pushforward_of_gaussian_is_gaussian():
    base = T.gaussian_benchmark(0.1)
    A = np.array([[2.0, 1.0], [0.0, 0.5]])
    b = np.array([1.0, -3.0])
    push = T.affine_pushforward(base, A, b)
    ref = T.gaussian(b, A @ base.params["cov"] @ A.T)
    rng = np.random.default_rng(1)
    y = rng.standard_normal((5, 2))
    dphi = push.log_density_unnorm(y) - ref.log_density_unnorm(y)
    np.testing.assert_allclose(dphi, dphi[0], atol=1e-12)
    np.testing.assert_allclose(push.grad_log_density(y), ref.grad_log_density(y), atol=1e-12)
    np.testing.assert_allclose(push.hess_log_density(y), ref.hess_log_density(y), atol=1e-12)


def test_from_spec_kinds():
    assert T.from_spec({"kind": "rosenbrock", "lambda": 0.1}).params["lambda"] == 0.1
    assert T.from_spec({"kind": "polynomial_even", "K": 2}).dim == 1
    assert T.from_spec({"kind": "gaussian", "lambda": 0.01}).params["cov"][1, 1] == pytest.approx(100)
    with pytest.raises(ValueError):
        T.from_spec({"kind": "banana"})


def test_no_normalization_constant_is_added():
    # the unnormalized log density is exactly -Phi, whatever the scaling
    tg = T.gaussian_benchmark(1.0)
    x = np.array([3.0, 4.0])
    assert tg.log_density_unnorm(x) == -12.5
    assert not math.isclose(tg.log_density_unnorm(x), -12.5 - math.log(2 * math.pi))
