import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from mcw.errors import DomainError, ValidationError
from mcw.numerics import BoxGrid, EvalPoint, laplace_integral, log_laplace_integral, riemann_sum


def test_constant_integrand():
    grid = BoxGrid([0, -1], [2, 1], [7, 9])
    r = riemann_sum(lambda X: np.full(len(X), 3.0), grid)
    assert r.sum == pytest.approx(12.0, abs=1e-13) and r.error_bound == 0.0


def test_linear_lower_corner():
    r = riemann_sum(lambda X: X[:, 0], BoxGrid([0], [1], [100]), EvalPoint.LOWER_CORNER, grad_bound=1.0)
    assert r.sum == pytest.approx(0.495, abs=1e-14)
    assert r.error_bound >= 0.005 and r.grad_sup_source == "analytic"


def test_product_2d():
    r = riemann_sum(lambda X: X[:, 0] * X[:, 1], BoxGrid([0, 0], [1, 1], 50), EvalPoint.LOWER_CORNER)
    assert abs(0.25 - r.sum) <= r.error_bound and r.grad_sup_source == "sampled"


def test_grid_validation():
    with pytest.raises(ValidationError):
        BoxGrid([1], [0], [3])
    with pytest.raises(ValidationError):
        BoxGrid([0], [1], [0])
    with pytest.raises(ValidationError):
        BoxGrid([0, 0], [1], [3])


def poly(coef, powers):
    def g(X):
        return sum(c * np.prod(X ** p, axis=1) for c, p in zip(coef, powers))

    def integral(lo, hi):
        tot = 0.0
        for c, p in zip(coef, powers):
            term = c
            for a, b, k in zip(lo, hi, p):
                term *= (b ** (k + 1) - a ** (k + 1)) / (k + 1)
            tot += term
        return tot

    return g, integral


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(list(EvalPoint)))
def test_bound_dominates_error(seed, where):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 4))
    terms = int(rng.integers(1, 4))
    coef = rng.uniform(-2, 2, terms)
    powers = rng.integers(0, 4, (terms, K))
    lo = rng.uniform(-1, 0, K)
    hi = lo + rng.uniform(0.5, 2, K)
    g, integral = poly(coef, powers)
    r = riemann_sum(g, BoxGrid(lo, hi, rng.integers(3, 20, K)), where)
    assert abs(integral(lo, hi) - r.sum) <= r.error_bound + 1e-12


def test_laplace_gaussian_closed_form():
    val = laplace_integral(lambda X: -0.5 * X[:, 0] ** 2, [0.0], [[-1.0]], N=100)
    assert val == pytest.approx(math.sqrt(2 * math.pi / 100), rel=1e-15)
    assert val == pytest.approx(0.2506628, abs=1e-7)
    exact, _ = integrate.quad(lambda x: math.exp(-50 * x * x), -1, 1, epsabs=1e-15)
    assert val == pytest.approx(exact, rel=1e-12)
    scaled = laplace_integral(lambda X: -0.5 * X[:, 0] ** 2, [0.0], [[-1.0]], g=lambda X: 3.5 + 0 * X[:, 0], N=100)
    assert scaled == pytest.approx(3.5 * val, rel=1e-15)


def test_laplace_2d():
    f = lambda X: -(X[:, 0] ** 2 + 2 * X[:, 1] ** 2) / 2  # noqa: E731
    val = laplace_integral(f, [0.0, 0.0], [[-1.0, 0.0], [0.0, -2.0]], N=50)
    assert val == pytest.approx(2 * math.pi / (50 * math.sqrt(2)), rel=1e-14)
    quad, _ = integrate.dblquad(lambda y, x: math.exp(-25 * (x * x + 2 * y * y)), -1, 1, -1, 1, epsabs=1e-14)
    assert abs(val / quad - 1) < 0.01


def test_laplace_log_form_matches():
    f = lambda X: -np.cosh(X[:, 0]) + 1.0  # noqa: E731
    v = laplace_integral(f, [0.0], [[-1.0]], g=lambda X: 2.0 + X[:, 0], N=30)
    assert math.log(v) == pytest.approx(log_laplace_integral(0.0, [[-1.0]], 30, 2.0), rel=1e-14)


def test_laplace_errors():
    with pytest.raises(DomainError):
        laplace_integral(lambda X: X[:, 0] ** 2, [0.0], [[1.0]], N=10)
    with pytest.raises(DomainError):
        laplace_integral(lambda X: -X[:, 0] ** 2, [2.0], [[-2.0]], N=10, box=BoxGrid([-1], [1], [5]))
    with pytest.raises(DomainError):
        log_laplace_integral(0.0, [[-1.0, 0.0], [0.0, 0.0]], 10)


def test_laplace_error_decays():
    f = lambda X: np.log(np.cos(X[:, 0])) - 0.1 * X[:, 0] ** 4  # noqa: E731
    errs = []
    for N in (20, 80, 320):
        approx = laplace_integral(f, [0.0], [[-1.0]], N=N)
        ref, _ = integrate.quad(lambda x: math.exp(N * (math.log(math.cos(x)) - 0.1 * x ** 4)), -1.2, 1.2,
                                epsabs=1e-15, epsrel=1e-13, limit=200)
        errs.append(abs(approx / ref - 1))
    assert errs[0] > errs[1] > errs[2]
