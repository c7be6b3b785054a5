"""Spread-out kernel density estimation on the compositional domain.

Compositions are inflated to the first-orthant sphere and replaced by their
weighted sign-flip orbits. An ordinary spherical KDE of the spread-out
sample is sign invariant, and summing it over an orbit ("pull-back") gives a
density on the first orthant. The integrated squared error (ISE) of the
spherical estimate against the induced null density is the goodness-of-fit
statistic; its null law is calibrated by simulation.

Bandwidth convention: a data point ``x`` contributes ``K((1 - z.x) / h^2)``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_legendre
from scipy.stats import skew

from .geometry import (
    DomainError,
    as_composition,
    contract_l1,
    fold,
    group_order,
    in_first_orthant,
    inflate,
    iter_sign_blocks,
    spread_sample,
    stabilizer_order,
)
from .harmonics import eigenspace_dim, sphere_volume
from .montecarlo import McEstimate, QuadratureError, RngStream, mc_integral_sphere, quad_1d, uniform_sphere

__all__ = [
    "SmoothingKernel",
    "EXPONENTIAL",
    "LINEAR",
    "BOX",
    "get_kernel",
    "lambda_d",
    "b_d",
    "normalizing_constant",
    "default_bandwidth",
    "SphericalKDE",
    "CompositionalKDE",
    "spherical_kde",
    "spread_kde",
    "pullback_density",
    "induced_density",
    "ise",
    "ise_orthant",
    "smoothing_coefficients",
    "ConvolvedProfile",
    "convolved_profile",
    "UniformNull",
    "IseStatistic",
    "GofResult",
    "simulate_null",
    "gof_test",
]

log = logging.getLogger(__name__)

_EVAL_CHUNK = 1 << 22


@dataclass(frozen=True)
class SmoothingKernel:
    """Non-negative radial profile ``K: [0, inf) -> [0, inf)``.

    ``support`` is the right end of the support (``inf`` if unbounded);
    ``cutoff`` is the radius beyond which ``K`` is numerically negligible and
    is used to truncate quadratures of unbounded profiles.
    """

    name: str
    profile: Callable = field(compare=False)
    support: float = math.inf
    cutoff: float = math.inf

    def __call__(self, r):
        return self.profile(np.asarray(r, dtype=float))

    @property
    def reach(self):
        return min(self.support, self.cutoff)


def _exp_profile(r):
    return np.exp(-r)


def _linear_profile(r):
    return np.clip(1.0 - r, 0.0, None)


def _box_profile(r):
    return np.where(r <= 1.0, 1.0, 0.0)


EXPONENTIAL = SmoothingKernel("exponential", _exp_profile, math.inf, 80.0)
LINEAR = SmoothingKernel("linear", _linear_profile, 1.0, 1.0)
BOX = SmoothingKernel("box", _box_profile, 1.0, 1.0)

_KERNELS = {k.name: k for k in (EXPONENTIAL, LINEAR, BOX)}


def get_kernel(name):
    try:
        return _KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown kernel profile {name!r}; choose from {sorted(_KERNELS)}") from None


def _radial_integral(K, power, d, extra):
    """int_0^inf K(r)^power r^(d/2 - 1 + extra) dr."""
    expo = 0.5 * d - 1.0 + extra

    def f(r):
        return float(K(r)) ** power * r**expo

    try:
        if math.isfinite(K.support):
            return quad_1d(f, 0.0, K.support, rel_tol=1e-9)
        return quad_1d(f, 0.0, 1.0, rel_tol=1e-9) + quad_1d(f, 1.0, math.inf, rel_tol=1e-9)
    except QuadratureError as exc:
        raise ValueError(
            f"radial moment of kernel {K.name!r} diverges in d = {d}; "
            "the kernel must keep lambda_d(K) and lambda_d(K^2) finite"
        ) from exc


def lambda_d(K, d, power=1):
    """2^(d/2-1) vol(S^(d-1)) int_0^inf K^power(r) r^(d/2-1) dr.

    The small-bandwidth volume of a kernel bump is ``h^d lambda_d(K)``.
    """
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    if d < 1:
        raise DomainError("d must be >= 1")
    return 2.0 ** (0.5 * d - 1.0) * sphere_volume(d - 1) * _radial_integral(K, power, d, 0.0)


def b_d(K, d):
    """Ratio of the radial moments of order d/2 and d/2 - 1."""
    if d < 1:
        raise DomainError("d must be >= 1")
    return _radial_integral(K, 1, d, 1.0) / _radial_integral(K, 1, d, 0.0)


def _angle_reach(K, h):
    r = K.reach
    if not math.isfinite(r):
        return math.pi
    return math.acos(max(-1.0, 1.0 - h * h * r))


@lru_cache(maxsize=256)
def normalizing_constant(K, d, h):
    """c_h such that a single kernel bump ``c_h K((1 - z.x)/h^2)`` integrates to one.

    The bump integral is reduced to one dimension in the polar angle,
    vol(S^(d-1)) int_0^pi K((1 - cos phi)/h^2) sin^(d-1)(phi) dphi.
    """
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    if d < 1:
        raise DomainError("d must be >= 1")
    h2 = h * h

    def f(phi):
        return float(K((1.0 - math.cos(phi)) / h2)) * math.sin(phi) ** (d - 1)

    upper = _angle_reach(K, h)
    pts = None
    if upper == math.pi:
        # most of the mass sits within a few bandwidths of the pole
        pts = [min(math.pi / 2, 10 * h)]
    integral = quad_1d(f, 0.0, upper, rel_tol=1e-11, points=pts)
    return 1.0 / (sphere_volume(d - 1) * integral)


def default_bandwidth(n, d):
    """Rate-compatible rule ``h = n^(-1/(d+4))``."""
    return float(n) ** (-1.0 / (d + 4))


class SphericalKDE:
    """Weighted kernel density estimate on S^d.

    f(z) = (c_h / W) sum_i w_i K((1 - z.x_i) / h^2),  W = sum_i w_i.
    """

    def __init__(self, points, weights, h, kernel=EXPONENTIAL):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 0:
            raise ValueError("KDE needs a non-empty sample")
        w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (len(pts),) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative, one per point, with positive sum")
        if not h > 0:
            raise ValueError("bandwidth must be positive")
        self.points = pts
        self.weights = w
        self.h = float(h)
        self.kernel = kernel
        self.dim = pts.shape[1] - 1
        self.norm_const = normalizing_constant(kernel, self.dim, self.h)
        self._scaled_w = w * (self.norm_const / w.sum())

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        Z = np.atleast_2d(z)
        if Z.shape[1] != self.dim + 1:
            raise DomainError("query dimension does not match the sample")
        out = np.empty(len(Z))
        step = max(1, _EVAL_CHUNK // len(self.points))
        inv_h2 = 1.0 / (self.h * self.h)
        for start in range(0, len(Z), step):
            block = Z[start : start + step]
            r = (1.0 - block @ self.points.T) * inv_h2
            np.maximum(r, 0.0, out=r)
            out[start : start + step] = self.kernel(r) @ self._scaled_w
        return float(out[0]) if single else out


def spherical_kde(sample, kernel=EXPONENTIAL, h=0.3, weights=None):
    return SphericalKDE(sample, weights, h, kernel)


class CompositionalKDE:
    """Sign-invariant spherical KDE built from spread-out compositions."""

    def __init__(self, data, kernel=EXPONENTIAL, h=None):
        X = np.atleast_2d(as_composition(data))
        self.compositions = X
        self.n = X.shape[0]
        self.dim = X.shape[1] - 1
        self.h = default_bandwidth(self.n, self.dim) if h is None else float(h)
        pts, wts, _ = spread_sample(X)
        self.underlying = SphericalKDE(pts, wts, self.h, kernel)
        self.kernel = kernel

    @property
    def sphere_data(self):
        """Inflated data, one first-orthant point per composition."""
        return inflate(self.compositions)

    @property
    def norm_const(self):
        return self.underlying.norm_const

    def __call__(self, z):
        return self.underlying(z)

    def pullback(self, z):
        return pullback_density(self, z)


def spread_kde(data, kernel=EXPONENTIAL, h=None):
    return CompositionalKDE(data, kernel, h)


def pullback_density(est, z):
    """Density on the first orthant: the estimate summed over the orbit of ``z``.

    Orbit points are counted with their stabilizer multiplicity, so the sum
    always has ``2^(d+1)`` terms, all equal by sign invariance.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(in_first_orthant(z)):
        raise DomainError("pull-back is evaluated on first-orthant points only")
    return group_order(est.dim) * est(z)


def induced_density(p, z):
    """Density on S^d of a randomly sign-flipped variable with orthant density ``p``."""
    z = np.asarray(z, dtype=float)
    d = z.shape[-1] - 1
    ratio = stabilizer_order(z) / group_order(d)
    val = ratio * np.asarray(p(fold(z)), dtype=float)
    return float(val) if np.ndim(val) == 0 else val


def ise(f, g, d, n_mc=100_000, stream=0):
    """Monte Carlo integral of ``(f - g)^2`` over S^d."""
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    return mc_integral_sphere(lambda z: (np.asarray(f(z)) - np.asarray(g(z))) ** 2, d, n_mc, stream)


def ise_orthant(f, g, d, n_mc=100_000, stream=0):
    """Monte Carlo integral of ``(f - g)^2`` over the first-orthant sphere."""
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    full = mc_integral_sphere(
        lambda z: (np.asarray(f(fold(z))) - np.asarray(g(fold(z)))) ** 2, d, n_mc, stream
    )
    k = group_order(d)
    return McEstimate(full.value / k, full.std_error / k, full.n)


# --- exact ISE through zonal (Funk-Hecke) coefficients ----------------------


def _angle_nodes(K, h, n_max):
    upper = _angle_reach(K, h)
    n_pan = int(min(4096, max(64, math.ceil(n_max * upper / math.pi) * 2)))
    x, w = roots_legendre(24)
    edges = np.linspace(0.0, upper, n_pan + 1)
    a, b = edges[:-1, None], edges[1:, None]
    phi = ((b - a) / 2 * x + (a + b) / 2).ravel()
    wt = ((b - a) / 2 * w).ravel()
    return phi, wt


def smoothing_coefficients(K, d, h, n_max):
    """Zonal coefficients of the kernel bump ``K((1 - z.x)/h^2)``.

    Returns kappa_l, l = 0..n_max, with the bump equal to
    sum_l kappa_l a_l/vol(S^d) P_l(z.x). Then kappa_0 = 1/c_h.
    """
    phi, wt = _angle_nodes(K, h, n_max)
    t = np.cos(phi)
    g = K((1.0 - t) / (h * h)) * np.sin(phi) ** (d - 1) * wt
    lam = 0.5 * (d - 1)
    out = np.empty(n_max + 1)
    p_prev, p_cur = np.ones_like(t), t.copy()
    out[0] = g.sum()
    if n_max >= 1:
        out[1] = p_cur @ g
    for k in range(2, n_max + 1):
        p_prev, p_cur = p_cur, (2.0 * t * (k + lam - 1) * p_cur - (k - 1) * p_prev) / (k + 2 * lam - 1)
        out[k] = p_cur @ g
    return sphere_volume(d - 1) * out


class ConvolvedProfile:
    """Tabulated ``L(s) = int_{S^d} K((1-z.u)/h^2) K((1-z.v)/h^2) dz`` with ``s = u.v``.

    Built from the zonal coefficients of the bump, L(s) = sum_l kappa_l^2
    a_l/vol P_l(s), and linearly interpolated on a uniform grid in ``s``.
    """

    def __init__(self, K, d, h, rtol=1e-11, max_degree=6000):
        self.kernel, self.dim, self.h = K, d, float(h)
        vol = sphere_volume(d)
        n_max = int(min(max_degree, math.ceil(20.0 / h) + 40))
        while True:
            kappa = smoothing_coefficients(K, d, h, n_max)
            a = np.array([eigenspace_dim(d, l) for l in range(n_max + 1)], dtype=float)
            terms = kappa**2 * a / vol
            tail = np.abs(terms[-max(8, n_max // 8) :]).sum()
            if tail <= rtol * terms.sum() or n_max >= max_degree:
                break
            n_max = min(max_degree, 2 * n_max)
        if tail > 1e-6 * terms.sum():
            log.warning("zonal series for kernel %s truncated with relative tail %.2e", K.name, tail / terms.sum())
        self.degree = n_max
        self.coefficients = kappa
        n_grid = int(min(1 << 21, max(4097, math.ceil(2000.0 / (h * h)))))
        self.grid = np.linspace(-1.0, 1.0, n_grid)
        self.values = self._series(terms, self.grid, 0.5 * (d - 1))
        self._scale = (n_grid - 1) / 2.0
        self._slopes = np.diff(self.values)
        # L(s) + L(-s); the grid is symmetric about zero
        self._even = self.values + self.values[::-1]
        self._even_slopes = np.diff(self._even)

    @staticmethod
    def _series(terms, s, lam):
        acc = terms[0] * np.ones_like(s)
        if len(terms) == 1:
            return acc
        p_prev, p_cur = np.ones_like(s), s.copy()
        acc += terms[1] * p_cur
        for k in range(2, len(terms)):
            p_prev, p_cur = p_cur, (2.0 * s * (k + lam - 1) * p_cur - (k - 1) * p_prev) / (k + 2 * lam - 1)
            acc += terms[k] * p_cur
        return acc

    def _lookup(self, values, slopes, s):
        # uniform grid: locate cells arithmetically instead of by binary search
        u = (np.clip(np.asarray(s, dtype=float), -1.0, 1.0) + 1.0) * self._scale
        i = np.minimum(u.astype(np.intp), len(values) - 2)
        return values[i] + (u - i) * slopes[i]

    def __call__(self, s):
        return self._lookup(self.values, self._slopes, s)

    def even(self, s):
        """L(s) + L(-s)."""
        return self._lookup(self._even, self._even_slopes, s)


@lru_cache(maxsize=32)
def convolved_profile(K, d, h):
    return ConvolvedProfile(K, d, h)


class UniformNull:
    """Uniform distribution on the compositional domain (first-orthant sphere)."""

    name = "uniform"

    def __init__(self, d):
        if d < 1:
            raise DomainError("d must be >= 1")
        self.dim = d

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        val = np.full(z.shape[:-1], group_order(self.dim) / sphere_volume(self.dim))
        return float(val) if val.ndim == 0 else val

    def sample(self, n, stream):
        if n == 0:
            return np.empty((0, self.dim + 1))
        return contract_l1(fold(uniform_sphere(self.dim, n, stream)))


def _signs(d, half):
    for block in iter_sign_blocks(d, block=1024, half=half):
        yield from block


class IseStatistic:
    """ISE of the spread-out KDE against the induced null density on S^d.

    ISE = int fhat^2 - 2 int fhat p0~ + int p0~^2. The first term is exact up
    to the tabulated convolution profile. For the uniform null the other two
    are both 1/vol(S^d); otherwise they use a fixed node set drawn from the
    null (the same nodes for every dataset, so the statistic is a
    deterministic function of the data).
    """

    def __init__(self, null, kernel, h, n_nodes=4096, stream=None):
        self.null = null
        self.kernel = kernel
        self.h = float(h)
        self.dim = null.dim
        d = self.dim
        self.c_h = normalizing_constant(kernel, d, self.h)
        self.profile = convolved_profile(kernel, d, self.h)
        if isinstance(null, UniformNull):
            self.nodes = None
            const = 1.0 / sphere_volume(d)
            self._null_sq = const
            self._uniform_cross = const
        else:
            stream = RngStream(0) if stream is None else stream
            comp = np.asarray(null.sample(n_nodes, stream), dtype=float)
            nodes = inflate(comp)
            self.nodes = nodes
            vals = np.asarray(null.pdf(nodes), dtype=float) / group_order(d)
            self._null_sq = float(vals.mean())
            self._uniform_cross = None

    def _sq_norm(self, X):
        # pair each sign pattern with its negative; the Gram block is
        # symmetric, so only the upper triangle is evaluated
        n = X.shape[0]
        iu = np.triu_indices(n, 1)
        acc = 0.0
        for s in _signs(self.dim, half=True):
            M = (X * s) @ X.T
            acc += 2.0 * self.profile.even(M[iu]).sum() + self.profile.even(np.diagonal(M)).sum()
        return self.c_h**2 * acc / (n * n * group_order(self.dim))

    def _cross(self, X):
        if self._uniform_cross is not None:
            return self._uniform_cross
        inv_h2 = 1.0 / (self.h * self.h)
        tot = 0.0
        for s in _signs(self.dim, half=False):
            r = np.maximum((1.0 - (X * s) @ self.nodes.T) * inv_h2, 0.0)
            tot += self.kernel(r).sum()
        return self.c_h * tot / (X.shape[0] * len(self.nodes) * group_order(self.dim))

    def __call__(self, sphere_data):
        X = np.atleast_2d(np.asarray(sphere_data, dtype=float))
        return max(self._sq_norm(X) - 2.0 * self._cross(X) + self._null_sq, 0.0)

    def of_compositions(self, compositions):
        return self(inflate(np.atleast_2d(as_composition(compositions))))


@dataclass(frozen=True)
class GofResult:
    statistic: float
    p_value: float
    n_sim: int
    z_score: float
    null_mean: float
    null_sd: float
    bandwidth: float
    simulated: np.ndarray = field(repr=False)

    @property
    def null_skewness(self):
        return float(skew(self.simulated))

    def as_dict(self):
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n_sim": self.n_sim,
            "z_score": self.z_score,
            "null_mean": self.null_mean,
            "null_sd": self.null_sd,
            "bandwidth": self.bandwidth,
        }


def simulate_null(stat, null, n, n_sim, stream, workers=1):
    """ISE values for ``n_sim`` datasets of size ``n`` drawn from ``null``.

    Replicate ``r`` always uses ``stream.spawn(r)``, so the output does not
    depend on ``workers``.
    """

    def one(r):
        return stat.of_compositions(null.sample(n, stream.spawn(r)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.fromiter(pool.map(one, range(n_sim)), float, count=n_sim)
    return np.fromiter((one(r) for r in range(n_sim)), float, count=n_sim)


def gof_test(data, null, kernel=EXPONENTIAL, h=None, n_sim=199, seed=0, n_nodes=4096, workers=1):
    """Monte Carlo goodness-of-fit test based on the ISE of the spread-out KDE.

    Parameters
    ----------
    data : array_like, shape (n, d+1)
        Compositions.
    null : object
        Null model with ``dim``, ``pdf(z)`` (density on the first-orthant
        sphere) and ``sample(n, stream)`` returning compositions.
    kernel : SmoothingKernel
    h : float, optional
        Bandwidth; defaults to ``n^(-1/(d+4))``.
    n_sim : int
        Number of null datasets used for calibration (at least 99).
    seed : int
        Master seed. Node set and replicates use independent substreams.

    Returns
    -------
    GofResult
        ``p_value = (1 + #{simulated >= observed}) / (n_sim + 1)``.
    """
    X = np.atleast_2d(as_composition(data))
    n, d = X.shape[0], X.shape[1] - 1
    if n < 2:
        raise ValueError("goodness-of-fit test needs at least two observations")
    if n_sim < 99:
        raise ValueError("n_sim must be at least 99")
    if not callable(getattr(null, "sample", None)) or not callable(getattr(null, "pdf", None)):
        raise TypeError("null model must provide sample(n, stream) and pdf(z)")
    if null.dim != d:
        raise DomainError(f"null model has d = {null.dim}, data has d = {d}")
    h = default_bandwidth(n, d) if h is None else float(h)
    root = RngStream(seed)
    stat = IseStatistic(null, kernel, h, n_nodes=n_nodes, stream=root.spawn(0))
    observed = stat.of_compositions(X)
    sims = simulate_null(stat, null, n, n_sim, root.spawn(1), workers=workers)
    exceed = int(np.sum(sims >= observed))
    mean, sd = float(sims.mean()), float(sims.std(ddof=1))
    z = (observed - mean) / sd if sd > 0 else math.inf
    return GofResult(observed, (1 + exceed) / (n_sim + 1), n_sim, z, mean, sd, h, sims)
