"""Zonal spherical kernels and compositional reproducing kernels.

The reproducing kernel of the degree-``i`` Laplacian eigenspace on S^d is
evaluated through the addition theorem,

    k_i(x, t) = a_i / vol(S^d) * C_i^lam(x.t) / C_i^lam(1),   lam = (d-1)/2,

so no explicit harmonic basis is ever built. Averaging over coordinate sign
flips gives the kernel of the sign-invariant subspace, and summing the even
degrees ``0, 2, ..., 2m`` gives the degree-``m`` compositional kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import comb, gammaln

from .geometry import DomainError, fold, iter_sign_blocks

__all__ = [
    "sphere_volume",
    "eigenspace_dim",
    "gegenbauer",
    "gegenbauer_normalized",
    "legendre_table",
    "ZonalKernel",
    "CompositionalKernel",
    "GramMatrix",
    "zonal_eval",
    "gamma_average_kernel",
    "omega_eval",
    "omega_matrix",
    "projective_kernel",
    "gram",
    "PD_RTOL",
]

PD_RTOL = 1e-10


def sphere_volume(d):
    """Surface area of the unit sphere S^d in R^{d+1}.

    >>> round(sphere_volume(2), 6)
    12.566371
    """
    if d < 0:
        raise DomainError(f"sphere dimension must be non-negative, got {d}")
    return float(np.exp(np.log(2.0) + 0.5 * (d + 1) * np.log(np.pi) - gammaln(0.5 * (d + 1))))


@lru_cache(maxsize=None)
def eigenspace_dim(d, i):
    """Dimension of the space of degree-``i`` spherical harmonics on S^d."""
    if d < 1 or i < 0:
        raise DomainError("need d >= 1 and i >= 0")
    lower = comb(d + i - 2, d, exact=True) if i >= 2 else 0
    return comb(d + i, d, exact=True) - lower


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1 + 1e-12):
        raise DomainError("Gegenbauer argument must lie in [-1, 1]")
    return np.clip(t, -1.0, 1.0)


def gegenbauer(n, lam, t):
    """Gegenbauer polynomial C_n^lam(t) by the three-term recurrence."""
    if n < 0:
        raise DomainError("degree must be non-negative")
    if lam <= 0:
        raise DomainError("order must be positive; use gegenbauer_normalized for lam = 0")
    t = _check_t(t)
    c0 = np.ones_like(t)
    if n == 0:
        return c0 if c0.ndim else float(c0)
    c1 = 2.0 * lam * t
    for k in range(2, n + 1):
        c0, c1 = c1, (2.0 * t * (k + lam - 1) * c1 - (k + 2 * lam - 2) * c0) / k
    return c1 if np.ndim(c1) else float(c1)


def legendre_table(n_max, lam, t):
    """Normalised Gegenbauer values ``C_k^lam(t) / C_k^lam(1)`` for k = 0..n_max.

    Returns an array of shape ``(n_max + 1,) + t.shape``. The normalised
    recurrence stays finite at ``lam = 0`` where it reduces to the
    Chebyshev recurrence, which is the d = 1 case.
    """
    t = np.asarray(t, dtype=float)
    out = np.empty((n_max + 1,) + t.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = t
    for k in range(2, n_max + 1):
        out[k] = (2.0 * t * (k + lam - 1) * out[k - 1] - (k - 1) * out[k - 2]) / (k + 2 * lam - 1)
    return out


def gegenbauer_normalized(n, lam, t):
    if lam < 0:
        raise DomainError("order must be non-negative")
    t = _check_t(t)
    p = legendre_table(n, lam, t)[n]
    return p if np.ndim(p) else float(p)


def _check_pair(x, t):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if x.shape[-1] != t.shape[-1]:
        raise DomainError(f"dimension mismatch: {x.shape[-1]} vs {t.shape[-1]}")
    return x, t


@dataclass(frozen=True)
class ZonalKernel:
    """Reproducing kernel of the degree-``degree`` eigenspace on S^dim."""

    dim: int
    degree: int

    def __post_init__(self):
        if self.dim < 1 or self.degree < 0:
            raise DomainError("need dim >= 1 and degree >= 0")

    @property
    def eigdim(self):
        return eigenspace_dim(self.dim, self.degree)

    @property
    def gegenbauer_order(self):
        return 0.5 * (self.dim - 1)

    @property
    def diagonal(self):
        """Value on the diagonal, a_i / vol(S^d)."""
        return self.eigdim / sphere_volume(self.dim)

    def profile(self, s):
        """Kernel as a function of the inner product ``s = x.t``."""
        s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
        return self.diagonal * legendre_table(self.degree, self.gegenbauer_order, s)[self.degree]

    def __call__(self, x, t):
        return zonal_eval(self, x, t)


def zonal_eval(kernel, x, t):
    x, t = _check_pair(x, t)
    if x.shape[-1] != kernel.dim + 1:
        raise DomainError("point dimension does not match the kernel")
    val = kernel.profile(np.sum(x * t, axis=-1))
    return val if np.ndim(val) else float(val)


def _sign_average(profile, x, y, d, even):
    """(1/|G|) sum over sign patterns g of profile(<g x, y>)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    prod = x * y
    acc = np.zeros(prod.shape[:-1])
    count = 0
    for signs in iter_sign_blocks(d, half=even):
        dots = prod @ signs.T
        acc = acc + profile(dots).sum(axis=-1)
        count += signs.shape[0]
    return acc / count


def gamma_average_kernel(kernel, x, y):
    """Sign-flip average of a zonal kernel, the kernel of the invariant subspace."""
    x, y = _check_pair(x, y)
    # odd degrees are odd under x -> -x, so the full group is needed there
    val = _sign_average(kernel.profile, x, y, kernel.dim, even=kernel.degree % 2 == 0)
    return val if np.ndim(val) else float(val)


def projective_kernel(kernel, x, y):
    """Average of ``k_i(x, y)`` and ``k_i(-x, y)``."""
    x, y = _check_pair(x, y)
    s = np.sum(x * y, axis=-1)
    val = 0.5 * (kernel.profile(s) + kernel.profile(-s))
    return val if np.ndim(val) else float(val)


@dataclass(frozen=True)
class CompositionalKernel:
    """Degree-``max_degree`` compositional reproducing kernel on S^dim.

    Sum of the sign-averaged zonal kernels of degrees 0, 2, ..., 2m. Only even
    degrees are kept because odd eigenspaces hold no sign-invariant functions.
    """

    dim: int
    max_degree: int

    def __post_init__(self):
        if self.dim < 1 or self.max_degree < 0:
            raise DomainError("need dim >= 1 and max_degree >= 0")

    @property
    def components(self):
        return tuple(ZonalKernel(self.dim, 2 * i) for i in range(self.max_degree + 1))

    @property
    def weights(self):
        """a_{2i} / vol(S^d) for i = 0..m."""
        vol = sphere_volume(self.dim)
        return np.array([eigenspace_dim(self.dim, 2 * i) / vol for i in range(self.max_degree + 1)])

    @property
    def diagonal_bound(self):
        return float(self.weights.sum())

    def profile(self, s):
        """Sum of the even zonal profiles before sign averaging."""
        s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
        table = legendre_table(2 * self.max_degree, 0.5 * (self.dim - 1), s)
        return np.tensordot(self.weights, table[::2], axes=(0, 0))

    def __call__(self, x, y):
        return omega_eval(self, x, y)


def omega_eval(kernel, x, y):
    x, y = _check_pair(x, y)
    if x.shape[-1] != kernel.dim + 1:
        raise DomainError("point dimension does not match the kernel")
    val = _sign_average(kernel.profile, fold(x), fold(y), kernel.dim, even=True)
    return val if np.ndim(val) else float(val)


def omega_matrix(X, Y, m):
    """Cross-kernel matrix ``[omega_m(X_i, Y_j)]``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise DomainError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d = X.shape[1] - 1
    kern = CompositionalKernel(d, m)
    X, Y = fold(X), fold(Y)
    out = np.zeros((X.shape[0], Y.shape[0]))
    count = 0
    for signs in iter_sign_blocks(d, block=256, half=True):
        for s in signs:
            out += kern.profile((X * s) @ Y.T)
        count += signs.shape[0]
    return out / count


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray
    centers: np.ndarray
    degree: int

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.entries)

    @property
    def min_eigenvalue(self):
        return float(self.eigenvalues[0])

    @property
    def relative_min_eigenvalue(self):
        ev = self.eigenvalues
        return float(ev[0] / ev[-1]) if ev[-1] > 0 else 0.0

    def is_positive_definite(self, rtol=PD_RTOL):
        """Scale-free test: smallest eigenvalue above ``rtol`` times the largest."""
        return self.relative_min_eigenvalue > rtol


def gram(points, m):
    """Gram matrix of the degree-``m`` compositional kernel on ``points``."""
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DomainError("gram needs a non-empty (n, d+1) array of points")
    G = omega_matrix(X, X, m)
    G = 0.5 * (G + G.T)
    G.setflags(write=False)
    return GramMatrix(G, fold(X), m)
