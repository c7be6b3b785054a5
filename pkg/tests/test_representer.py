import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from comprkhs.geometry import DomainError, contract_l1, inflate, sign_patterns
from comprkhs.harmonics import CompositionalKernel, gram
from comprkhs.representer import (
    FitReport,
    KernelExpansion,
    SingularGramError,
    evaluate,
    interpolate,
    kernel_mean,
    min_independent_degree,
    ridge,
)


def _points(n, seed, d=2):
    return np.random.default_rng(seed).dirichlet(np.ones(d + 1), n)


def test_single_point_degree_zero():
    assert min_independent_degree(_points(1, 0)) == 0


def test_two_points_independent_degree():
    P = _points(2, 1)
    m = min_independent_degree(P, m_max=10)
    assert m <= 10
    assert np.linalg.eigvalsh(gram(inflate(P), m).entries)[0] > 0


def test_min_degree_is_minimal():
    P = _points(6, 2)
    m = min_independent_degree(P)
    assert gram(inflate(P), m).is_positive_definite()
    if m > 0:
        assert not gram(inflate(P), m - 1).is_positive_definite()


def test_duplicates_rejected():
    P = np.array([[0.2, 0.3, 0.5], [0.2, 0.3, 0.5], [0.6, 0.3, 0.1]])
    with pytest.raises(DomainError):
        min_independent_degree(P)
    with pytest.raises(DomainError):
        interpolate(P, [1.0, 2.0, 3.0], 4)


def test_duplicate_after_folding_rejected():
    z = inflate(np.array([0.2, 0.3, 0.5]))
    with pytest.raises(DomainError):
        min_independent_degree(np.vstack([z, -z]))


def test_search_budget_error():
    P = _points(10, 3)
    with pytest.raises(SingularGramError, match="m_max"):
        min_independent_degree(P, m_max=1)
    with pytest.raises(ValueError):
        min_independent_degree(P, m_max=0)


def test_interpolate_single_point():
    x = np.array([[0.2, 0.3, 0.5]])
    f = interpolate(x, [1.0], 2)
    z = inflate(x[0])
    assert f.coefficients[0] == pytest.approx(1 / CompositionalKernel(2, 2)(z, z), rel=1e-14)


def test_interpolate_zero_data():
    P = _points(5, 4)
    f = interpolate(P, np.zeros(5), min_independent_degree(P))
    assert np.all(f.coefficients == 0)


def test_interpolation_residual_and_report():
    P = _points(5, 5)
    y = np.random.default_rng(6).normal(size=5)
    m = min_independent_degree(P)
    rep = interpolate(P, y, m, report=True)
    assert isinstance(rep, FitReport)
    assert rep.degree_used == m and rep.gram_min_eigenvalue > 0
    assert rep.max_residual < 1e-8
    assert np.max(np.abs(rep.expansion(P) - y)) < 1e-8


def test_interpolate_singular_gram_error():
    P = _points(10, 7)
    with pytest.raises(SingularGramError, match="min_independent_degree"):
        interpolate(P, np.ones(10), 0)


def test_minimal_norm_orthogonality():
    rng = np.random.default_rng(8)
    P = _points(4, 9)
    m = min_independent_degree(P) + 1
    f0 = interpolate(P, rng.normal(size=4), m)
    # g vanishes on the data: a section at extra centres minus its interpolant
    extra = _points(3, 10)
    g_extra = KernelExpansion(inflate(extra), rng.normal(size=3), m)
    g_fit = interpolate(P, g_extra(P), m)
    centers = np.vstack([inflate(extra), inflate(P)])
    g = KernelExpansion(centers, np.concatenate([g_extra.coefficients, -g_fit.coefficients]), m)
    assert np.max(np.abs(g(P))) < 1e-8
    total = KernelExpansion(
        np.vstack([inflate(P), centers]), np.concatenate([f0.coefficients, g.coefficients]), m
    )
    lhs = total.norm_squared()
    rhs = f0.norm_squared() + g.norm_squared()
    assert abs(lhs - rhs) < 1e-8 * max(1.0, rhs)


def _ridge_objective(f, P, y, mu):
    return np.sum((f(P) - y) ** 2) + mu * f.norm_squared()


def test_ridge_optimal_against_perturbations():
    rng = np.random.default_rng(11)
    P = _points(8, 12)
    y = rng.normal(size=8)
    m, mu = 3, 0.05
    f = ridge(P, y, m, mu)
    best = _ridge_objective(f, P, y, mu)
    for _ in range(100):
        c = f.coefficients + rng.normal(scale=10 ** rng.uniform(-4, 0), size=8)
        assert best <= _ridge_objective(KernelExpansion(f.centers, c, m), P, y, mu) + 1e-12


def test_ridge_limits():
    P = _points(5, 13)
    y = np.random.default_rng(14).normal(size=5)
    m = min_independent_degree(P) + 1
    f_int = interpolate(P, y, m)
    f_small = ridge(P, y, m, 1e-10)
    assert np.max(np.abs(f_small.coefficients - f_int.coefficients)) < 1e-6
    assert np.linalg.norm(ridge(P, y, m, 1e12).coefficients) < 1e-6


def test_ridge_rejects_non_positive_mu():
    P = _points(3, 15)
    for mu in (0.0, -1.0):
        with pytest.raises(ValueError):
            ridge(P, np.ones(3), 2, mu)


def test_ridge_unique_system():
    P = _points(7, 16)
    mu = 0.3
    A = gram(inflate(P), 1).entries + mu * np.eye(7)
    assert np.linalg.eigvalsh(A)[0] >= mu - 1e-12


def test_evaluate_empty_and_mismatch():
    e = KernelExpansion(np.empty((0, 3)), np.empty(0), 2)
    assert evaluate(e, np.array([0.2, 0.3, 0.5])) == 0.0
    f = kernel_mean(_points(3, 17), 2)
    with pytest.raises(DomainError):
        f(np.array([0.5, 0.5]))


def test_evaluate_sign_invariant_brute_force():
    f = interpolate(_points(4, 18), [1.0, -2.0, 0.5, 3.0], 4)
    T = inflate(_points(10, 19))
    base = f(T)
    for g in sign_patterns(2):
        assert np.allclose(f(T * g), base, rtol=1e-12, atol=1e-12)
    assert np.allclose(f(contract_l1(T)), base, rtol=1e-12)


def test_kernel_mean_examples():
    x = np.array([[0.2, 0.3, 0.5]])
    T = _points(6, 20)
    k = CompositionalKernel(2, 3)
    km = kernel_mean(x, 3)
    assert km.coefficients[0] == 1.0
    assert np.allclose(km(T), k(inflate(T), inflate(x[0])), rtol=1e-14)
    assert np.allclose(kernel_mean(np.vstack([x, x]), 3)(T), km(T), rtol=1e-14)
    D = _points(9, 21)
    ref = np.mean([k(inflate(T), inflate(d)) for d in D], axis=0)
    assert np.allclose(kernel_mean(D, 3)(T), ref, rtol=1e-12)
    with pytest.raises(ValueError):
        kernel_mean(np.empty((0, 3)), 2)


def _separation(P):
    X = inflate(P)
    D = np.linalg.norm(X[:, None] - X[None], axis=-1)
    np.fill_diagonal(D, np.inf)
    return D.min()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(2, 6), st.integers(0, 2**31))
def test_interpolation_property(d, n, seed):
    # near-coincident points need huge coefficients whose rounding alone exceeds 1e-8
    P = _points(n, seed, d)
    assume(_separation(P) >= 0.1)
    m = min_independent_degree(P) + 1
    y = np.random.default_rng(seed + 1).normal(size=n)
    f = interpolate(P, y, m)
    assert np.max(np.abs(f(P) - y)) < 1e-8
    assert f.norm_squared() >= 0.0


def test_ill_conditioned_solve_is_refused():
    # distinct but nearly coincident centres: independent, yet too ill-conditioned to solve
    found = False
    for seed in range(300):
        rng = np.random.default_rng(seed)
        P = rng.dirichlet(np.ones(2), int(rng.integers(2, 11)))
        y = rng.normal(size=len(P))
        try:
            f = interpolate(P, y, min_independent_degree(P))
        except SingularGramError:
            found = True
            continue
        assert np.max(np.abs(f(P) - y)) < 1e-6 * (1 + np.max(np.abs(y)))
    assert found
