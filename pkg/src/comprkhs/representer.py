"""Kernel expansions, minimal-norm interpolation and ridge regression.

All fits live in the span of the sections ``omega_m(x_i, .)`` of the
degree-``m`` compositional kernel. Interpolation solves ``G c = y``; ridge
regression solves ``(mu I + G) c = y``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .geometry import DomainError, as_composition, fold, inflate
from .harmonics import PD_RTOL, gram, omega_matrix

__all__ = [
    "DUPLICATE_TOL",
    "SingularGramError",
    "KernelExpansion",
    "FitReport",
    "as_sphere_centers",
    "min_independent_degree",
    "interpolate",
    "ridge",
    "evaluate",
    "kernel_mean",
]

log = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-10


class SingularGramError(np.linalg.LinAlgError):
    """The Gram matrix is not positive definite at the requested degree."""


def _to_orthant_points(t, tol=1e-6):
    """Sphere points are folded; simplex points (rows summing to one) are inflated."""
    t = np.asarray(t, dtype=float)
    if t.ndim not in (1, 2) or t.shape[-1] < 2:
        raise DomainError("points must have at least two coordinates")
    norms = np.linalg.norm(t, axis=-1)
    if np.all(np.abs(norms - 1.0) <= tol):
        return fold(t / norms[..., None])
    return inflate(as_composition(t))


def as_sphere_centers(points):
    """Accept compositions or sphere points; return first-orthant sphere points."""
    return np.atleast_2d(_to_orthant_points(points))


@dataclass(frozen=True)
class KernelExpansion:
    """f(t) = sum_i c_i omega_m(x_i, t) with first-orthant centers ``x_i``."""

    centers: np.ndarray
    coefficients: np.ndarray
    degree: int

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float).reshape(-1)
        X = np.asarray(self.centers, dtype=float)
        if X.ndim != 2 or len(X) != len(c):
            raise DomainError("centers must be an (n, d+1) array with one coefficient per center")
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "centers", X)

    @property
    def dim(self):
        return self.centers.shape[1] - 1

    @property
    def n(self):
        return len(self.coefficients)

    def __call__(self, t):
        return evaluate(self, t)

    def norm_squared(self):
        """RKHS norm c^T G c, clipped at zero against round-off."""
        if self.n == 0:
            return 0.0
        G = gram(self.centers, self.degree).entries
        return max(float(self.coefficients @ G @ self.coefficients), 0.0)


@dataclass(frozen=True)
class FitReport:
    expansion: KernelExpansion
    residuals: np.ndarray
    gram_min_eigenvalue: float
    degree_used: int

    @property
    def max_residual(self):
        return float(np.max(np.abs(self.residuals))) if len(self.residuals) else 0.0


def evaluate(expansion, t):
    """Evaluate an expansion at sphere points or compositions."""
    t = np.asarray(t, dtype=float)
    single = t.ndim == 1
    if expansion.n == 0:
        return 0.0 if single else np.zeros(len(np.atleast_2d(t)))
    if t.shape[-1] != expansion.dim + 1:
        raise DomainError(f"point has {t.shape[-1]} coordinates, expansion expects {expansion.dim + 1}")
    T = np.atleast_2d(_to_orthant_points(t))
    vals = omega_matrix(T, expansion.centers, expansion.degree) @ expansion.coefficients
    return float(vals[0]) if single else vals


def _check_distinct(X):
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    i, j = np.unravel_index(np.argmin(dist), dist.shape)
    if dist[i, j] <= DUPLICATE_TOL:
        raise DomainError(f"points {min(i, j)} and {max(i, j)} coincide after folding")


def min_independent_degree(points, m_max=32):
    """Smallest degree m whose kernel sections at ``points`` are independent.

    Independence is judged by the scale-free Gram test (smallest over largest
    eigenvalue above 1e-10). The search doubles m from 1 and then scans the
    last bracket, so the cost is logarithmic in the answer when it is large.
    """
    X = as_sphere_centers(points)
    if m_max < 1:
        raise ValueError("m_max must be at least 1")
    _check_distinct(X)

    def pd(m):
        return gram(X, m).is_positive_definite(PD_RTOL)

    if pd(0):
        return 0
    lo, hi = 0, 1
    while not pd(hi):
        if hi >= m_max:
            raise SingularGramError(
                f"no degree <= {m_max} gives independent kernel sections; increase m_max"
            )
        lo, hi = hi, min(2 * hi, m_max)
    for m in range(lo + 1, hi):
        if pd(m):
            return m
    return hi


def _solve_spd(A, y):
    """Cholesky solve with a least-squares fallback for ill-conditioned systems."""
    try:
        cf = linalg.cho_factor(A, lower=True, check_finite=True)
        c = linalg.cho_solve(cf, y)
    except linalg.LinAlgError:
        log.info("Cholesky factorisation failed; falling back to least squares")
        c = linalg.lstsq(A, y, lapack_driver="gelsd")[0]
    return c


def _check_residual(A, c, y):
    res = A @ c - y
    bound = 1e-8 * (1.0 + np.max(np.abs(y), initial=0.0))
    if np.max(np.abs(res), initial=0.0) >= bound:
        raise SingularGramError(
            f"linear solve residual {np.max(np.abs(res)):.3e} exceeds {bound:.3e}; "
            "the Gram matrix is too ill-conditioned at this degree"
        )
    return res


def _prepare(points, y):
    X = as_sphere_centers(points)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != len(X):
        raise ValueError(f"{len(X)} points but {len(y)} responses")
    if not np.all(np.isfinite(y)):
        raise ValueError("responses must be finite")
    return X, y


def interpolate(points, y, m, report=False):
    """Minimal-norm interpolant of ``(points, y)`` in the degree-``m`` space.

    Raises SingularGramError when the Gram matrix is not positive definite;
    ``min_independent_degree`` gives a degree where it is.
    """
    X, y = _prepare(points, y)
    _check_distinct(X)
    G = gram(X, m)
    if not G.is_positive_definite():
        raise SingularGramError(
            f"Gram matrix at degree {m} is singular (relative min eigenvalue "
            f"{G.relative_min_eigenvalue:.2e}); use min_independent_degree to pick m"
        )
    A = G.entries
    c = _solve_spd(A, y)
    res = _check_residual(A, c, y)
    exp = KernelExpansion(X, c, m)
    if report:
        return FitReport(exp, res, G.min_eigenvalue, m)
    return exp


def ridge(points, y, m, mu, report=False):
    """Ridge fit: minimises sum (f(x_i) - y_i)^2 + mu ||f||^2 via (mu I + G) c = y."""
    if not mu > 0:
        raise ValueError("mu must be positive; use interpolate for mu = 0")
    X, y = _prepare(points, y)
    G = gram(X, m)
    A = G.entries + mu * np.eye(len(X))
    c = _solve_spd(A, y)
    _check_residual(A, c, y)
    exp = KernelExpansion(X, c, m)
    if report:
        return FitReport(exp, G.entries @ c - y, G.min_eigenvalue, m)
    return exp


def kernel_mean(data, m):
    """Empirical kernel mean (1/n) sum_i omega_m(x_i, .) of compositional data."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    if X.size == 0:
        raise ValueError("kernel mean of an empty dataset")
    X = as_sphere_centers(X)
    return KernelExpansion(X, np.full(len(X), 1.0 / len(X)), m)
