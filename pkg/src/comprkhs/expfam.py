"""Exponential families on the compositional domain.

The natural statistic of degree ``m`` is the vector of monomials
``T_alpha(x) = prod_i (x_i^2)^alpha_i`` with ``|alpha| = m``, evaluated on
sphere coordinates, so every density is invariant under sign flips. With
respect to the surface measure of the first-orthant sphere the density is

    p(x; theta) = exp(s_m(x; theta) - g(theta)),
    g(theta) = log[(1/2^(d+1)) int_{S^d} exp(s_m)].

Because ``sum_alpha binom(m; alpha) T_alpha = (sum x_i^2)^m = 1`` on the
sphere, theta is identified only up to multiples of the multinomial
coefficient vector; fits project that direction out.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from .geometry import DomainError, as_composition, contract_l1, fold, group_order, inflate
from .harmonics import sphere_volume
from .montecarlo import McEstimate, RngStream, uniform_sphere
from .representer import kernel_mean

__all__ = [
    "basis",
    "basis_size",
    "gauge_direction",
    "ThetaPoly",
    "ExpFamilyModel",
    "sufficient_statistics",
    "log_partition",
    "fit_model",
    "log_density",
    "sample",
    "fit_mle",
    "MleInfo",
    "moments",
    "kernel_mean",
    "example_theta",
    "theta_to_text",
    "theta_from_text",
    "SamplingError",
]

log = logging.getLogger(__name__)

_CHUNK = 1 << 16
MIN_ACCEPTANCE = 1e-4
ENVELOPE_MARGIN = 0.2


class SamplingError(RuntimeError):
    """Rejection sampling is too inefficient for this parameter."""


@lru_cache(maxsize=None)
def _basis(d, m):
    if d < 1 or m < 0:
        raise DomainError("need d >= 1 and m >= 0")

    def rec(k, total):
        if k == 1:
            return [(total,)]
        out = []
        for first in range(total, -1, -1):
            out.extend((first,) + rest for rest in rec(k - 1, total - first))
        return out

    return tuple(rec(d + 1, m))


def basis(d, m):
    """Exponent vectors of total degree ``m`` in ``d + 1`` variables, graded-lex order.

    >>> basis(2, 1)
    [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    """
    return list(_basis(d, m))


def basis_size(d, m):
    return math.comb(m + d, d)


def gauge_direction(d, m):
    """Multinomial coefficients of ``(sum x_i^2)^m``; constant on the sphere."""
    A = np.array(_basis(d, m), dtype=float)
    return np.exp(gammaln(m + 1) - gammaln(A + 1).sum(axis=1))


def sufficient_statistics(z, d, m):
    """Monomials ``prod_i (z_i^2)^alpha_i`` for every basis exponent; shape (n, p)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != d + 1:
        raise DomainError(f"expected {d + 1} coordinates, got {z.shape[1]}")
    A = np.array(_basis(d, m), dtype=np.int64)
    u = z * z
    # powers[k, :, i] = u_i^k, reused across exponents
    powers = u[None, :, :] ** np.arange(m + 1)[:, None, None]
    out = np.ones((z.shape[0], len(A)))
    for i in range(d + 1):
        out *= powers[A[:, i], :, i].T
    return out


@dataclass(frozen=True)
class ThetaPoly:
    """Natural parameter: coefficients on the degree-``degree`` monomial basis."""

    dim: int
    degree: int
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).reshape(-1)
        if len(c) != basis_size(self.dim, self.degree):
            raise ValueError(
                f"theta for d={self.dim}, m={self.degree} needs {basis_size(self.dim, self.degree)} coefficients"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("theta coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def zeros(cls, d, m):
        return cls(d, m, np.zeros(basis_size(d, m)))

    @classmethod
    def from_terms(cls, d, m, terms):
        """Build from a mapping exponent tuple -> coefficient (missing terms are 0)."""
        index = {a: i for i, a in enumerate(_basis(d, m))}
        c = np.zeros(len(index))
        for a, v in terms.items():
            a = tuple(int(k) for k in a)
            if a not in index:
                raise ValueError(f"exponent {a} does not have total degree {m} in {d + 1} variables")
            c[index[a]] = v
        return cls(d, m, c)

    @property
    def terms(self):
        return dict(zip(_basis(self.dim, self.degree), self.coefficients.tolist()))

    def __call__(self, z):
        """s_m(z; theta) at sphere points."""
        z = np.asarray(z, dtype=float)
        vals = sufficient_statistics(z, self.dim, self.degree) @ self.coefficients
        return float(vals[0]) if z.ndim == 1 else vals

    def __add__(self, other):
        if (self.dim, self.degree) != (other.dim, other.degree):
            raise ValueError("theta shapes differ")
        return ThetaPoly(self.dim, self.degree, self.coefficients + other.coefficients)

    def scaled(self, c):
        return ThetaPoly(self.dim, self.degree, c * self.coefficients)

    def __eq__(self, other):
        return (
            isinstance(other, ThetaPoly)
            and (self.dim, self.degree) == (other.dim, other.degree)
            and np.array_equal(self.coefficients, other.coefficients)
        )

    def __hash__(self):
        return hash((self.dim, self.degree, self.coefficients.tobytes()))


def example_theta(k):
    """Three degree-2 parameters on three parts used throughout the examples and tests."""
    t = {
        1: {(2, 0, 0): -2, (0, 2, 0): -2, (0, 0, 2): -3, (1, 1, 0): 9, (1, 0, 1): 9, (0, 1, 1): -2},
        2: {(2, 0, 0): -1, (0, 2, 0): -1, (0, 0, 2): -1, (1, 1, 0): -1, (1, 0, 1): -1, (0, 1, 1): -1},
        3: {(2, 0, 0): -3, (0, 2, 0): -2, (0, 0, 2): -1, (1, 1, 0): 9, (1, 0, 1): -5, (0, 1, 1): -5},
    }
    if k not in t:
        raise ValueError("example parameters are numbered 1, 2, 3")
    return ThetaPoly.from_terms(2, 2, t[k])


def _log_orthant_area(d):
    return math.log(sphere_volume(d)) - math.log(group_order(d))


def _as_sphere(x, d):
    """Compositions (rows summing to one) are inflated; sphere points are folded."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d + 1:
        raise DomainError(f"expected {d + 1} coordinates, got {x.shape[-1]}")
    nrm = np.linalg.norm(x, axis=-1)
    if np.all(np.abs(nrm - 1.0) <= 1e-10):
        return fold(x / nrm[..., None])
    return inflate(as_composition(x))


def log_partition(theta, n_mc=1_000_000, seed=0):
    """Monte Carlo log-partition ``g(theta)`` and its delta-method standard error.

    Uses uniform points on the whole sphere and a running log-sum-exp, so
    large coefficients do not overflow.
    """
    if n_mc < 10_000:
        raise ValueError("n_mc must be at least 1e4")
    stream = seed if isinstance(seed, RngStream) else RngStream(seed)
    rng = stream.generator()
    d = theta.dim
    top = -math.inf
    s1 = s2 = 0.0
    done = 0
    while done < n_mc:
        k = min(_CHUNK, n_mc - done)
        s = theta(uniform_sphere(d, k, rng))
        if not np.all(np.isfinite(s)):
            raise OverflowError(f"non-finite exponent; max s_m = {np.nanmax(s)}")
        new_top = max(top, float(s.max()))
        if new_top > top:
            shift = math.exp(top - new_top) if math.isfinite(top) else 0.0
            s1 *= shift
            s2 *= shift * shift
            top = new_top
        e = np.exp(s - top)
        s1 += e.sum()
        s2 += e @ e
        done += k
    mean = s1 / n_mc
    var = max(s2 / n_mc - mean * mean, 0.0) * n_mc / (n_mc - 1)
    if not mean > 0:
        raise OverflowError(f"log-partition underflowed; max s_m = {top}")
    g = top + math.log(mean) + _log_orthant_area(d)
    se = math.sqrt(var / n_mc) / mean
    return g, se


@dataclass(frozen=True)
class MleInfo:
    iterations: int
    converged: bool
    grad_norm: float
    effective_sample_size: float


@dataclass(frozen=True)
class ExpFamilyModel:
    """Parameter with its Monte Carlo log-partition."""

    theta: ThetaPoly
    log_partition: float
    mc_se: float
    mc_samples: int
    seed: int
    info: MleInfo | None = field(default=None, compare=False)

    @property
    def dim(self):
        return self.theta.dim

    @property
    def degree(self):
        return self.theta.degree

    def log_density(self, x):
        return log_density(self, x)

    def pdf(self, x):
        """Density w.r.t. surface measure on the first-orthant sphere."""
        return np.exp(log_density(self, x))

    def sample(self, n, stream):
        return sample(self, n, stream)


def fit_model(theta, n_mc=1_000_000, seed=0):
    g, se = log_partition(theta, n_mc, seed)
    return ExpFamilyModel(theta, g, se, int(n_mc), int(seed))


def log_density(model, x):
    """s_m(x; theta) - g(theta); compositions are inflated first."""
    z = _as_sphere(x, model.dim)
    val = model.theta(z) - model.log_partition
    return float(val) if np.ndim(val) == 0 else val


@lru_cache(maxsize=64)
def _envelope(theta, n_probe=20_000):
    """Upper bound for s_m on the sphere: probe, polish the best probes, add a margin.

    The probes come from a fixed stream, so the bound depends on theta only.
    """
    d, m = theta.dim, theta.degree
    probes = fold(uniform_sphere(d, n_probe, RngStream(0x5EED)))
    probes = np.vstack([probes, np.eye(d + 1), np.full((1, d + 1), 1.0 / math.sqrt(d + 1))])
    s = theta(probes)
    s_min, s_max = float(s.min()), float(s.max())
    if m > 0 and s_max > s_min:
        A = np.array(_basis(d, m), dtype=float)
        c = theta.coefficients

        # s_m is a polynomial in u = x^2 on the simplex
        def neg(u):
            return -float(c @ np.prod(np.maximum(u, 0.0) ** A, axis=1))

        cons = ({"type": "eq", "fun": lambda u: u.sum() - 1.0},)
        for i in np.argsort(s)[-5:]:
            res = optimize.minimize(
                neg, probes[i] ** 2, method="SLSQP", bounds=[(0.0, 1.0)] * (d + 1), constraints=cons,
                options={"ftol": 1e-12, "maxiter": 200},
            )
            u = np.clip(res.x, 0.0, None)
            if u.sum() > 0:
                s_max = max(s_max, theta(np.sqrt(u / u.sum())))
    bound = s_max + ENVELOPE_MARGIN * (s_max - s_min)
    log.info("rejection envelope: max s_m = %.6g, bound = %.6g", s_max, bound)
    return bound


def _sample_sphere(model, n, stream):
    stream = stream if isinstance(stream, RngStream) else RngStream(stream)
    d = model.dim
    bound = _envelope(model.theta)
    rng = stream.generator()
    out = []
    have = proposed = accepted = 0
    batch = max(1024, 2 * n)
    while have < n:
        z = fold(uniform_sphere(d, batch, rng))
        s = model.theta(z)
        if np.any(s > bound + 1e-9):
            log.warning("s_m exceeded the rejection envelope by %.3g", float(s.max() - bound))
        keep = rng.random(batch) < np.exp(s - bound)
        out.append(z[keep])
        have += int(keep.sum())
        proposed += batch
        accepted += int(keep.sum())
        if proposed >= 100_000 and accepted / proposed < MIN_ACCEPTANCE:
            raise SamplingError(
                f"acceptance rate {accepted / proposed:.2e} below {MIN_ACCEPTANCE}; "
                "reparameterise or reduce the coefficient scale"
            )
        rate = max(accepted / proposed, 1e-3)
        batch = int(min(1 << 20, max(1024, 1.2 * (n - have) / rate)))
    return np.vstack(out)[:n]


def sample(model, n, stream):
    """Exact draws from the model by rejection from the uniform law; returns compositions."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return np.empty((0, model.dim + 1))
    return contract_l1(_sample_sphere(model, n, stream))


def moments(model, n_mc=200_000, seed=0):
    """E_theta[T] and its standard error by self-normalised importance sampling."""
    rng = (seed if isinstance(seed, RngStream) else RngStream(seed)).generator()
    Z = fold(uniform_sphere(model.dim, n_mc, rng))
    F = sufficient_statistics(Z, model.dim, model.degree)
    s = F @ model.theta.coefficients
    w = np.exp(s - s.max())
    w /= w.sum()
    mu = w @ F
    se = np.sqrt((w * w) @ (F - mu) ** 2)
    return McEstimate(mu, se, n_mc)


def fit_mle(data, m, n_mc=200_000, seed=0, max_iter=100, tol=1e-8):
    """Maximum likelihood fit of the degree-``m`` family.

    The log-partition and its derivatives are replaced by importance-sampling
    averages over one fixed set of uniform proposal points, so the objective
    is smooth and deterministic and damped Newton converges quickly. The
    gauge direction is projected out. The returned model carries a
    log-partition recomputed on an independent sample.

    Parameters
    ----------
    data : array_like, shape (n, d+1)
        Compositions.
    m : int
        Degree of the natural statistic.
    n_mc : int
        Proposal sample size for the likelihood surrogate and for ``g``.
    tol : float
        Stop when the sup-norm of the gradient falls below ``tol``.
    """
    X = np.atleast_2d(as_composition(data))
    n, d = X.shape[0], X.shape[1] - 1
    p = basis_size(d, m)
    Z = inflate(X)
    if np.all(np.abs(Z - Z[0]) <= 1e-10):
        raise ValueError("data form a single point; the likelihood has no maximiser")
    if n < p:
        log.warning("only %d observations for %d parameters; the fit may be unstable", n, p)
    t_bar = sufficient_statistics(Z, d, m).mean(axis=0)
    if m == 0:
        return fit_model(ThetaPoly.zeros(d, 0), n_mc, seed)

    root = RngStream(seed)
    F = sufficient_statistics(fold(uniform_sphere(d, n_mc, root.spawn(0))), d, m)
    v = gauge_direction(d, m)
    # orthonormal basis of the complement of the gauge direction
    P = np.linalg.svd(np.eye(p) - np.outer(v, v) / (v @ v))[0][:, : p - 1]

    def surrogate(theta):
        s = F @ theta
        top = s.max()
        w = np.exp(s - top)
        tot = w.sum()
        return theta @ t_bar - (top + math.log(tot / len(s))), w / tot

    theta = np.zeros(p)
    obj, w = surrogate(theta)
    grad = t_bar - w @ F
    it = 0
    converged = bool(np.max(np.abs(grad)) < tol)
    while not converged and it < max_iter:
        it += 1
        C = (F * w[:, None]).T @ F - np.outer(w @ F, w @ F)
        H = P.T @ C @ P
        g_red = P.T @ grad
        try:
            step = P @ np.linalg.solve(H + 1e-14 * np.trace(H) * np.eye(p - 1), g_red)
        except np.linalg.LinAlgError:
            step = P @ g_red
        t = 1.0
        while True:
            cand = theta + t * step
            new_obj, new_w = surrogate(cand)
            if np.isfinite(new_obj) and new_obj >= obj - 1e-12 * abs(obj):
                break
            t *= 0.5
            if t < 1e-10:
                raise ArithmeticError("line search failed; the likelihood surrogate is not finite")
        theta, obj, w = cand, new_obj, new_w
        if not np.isfinite(obj):
            raise ArithmeticError("non-finite log-likelihood")
        grad = t_bar - w @ F
        converged = bool(np.max(np.abs(grad)) < tol)
        if np.max(np.abs(theta)) > 1e6:
            raise ArithmeticError("coefficients diverge; the data may lie on the boundary of the family")
    ess = 1.0 / float(w @ w)
    if not converged:
        log.warning("MLE stopped after %d iterations with gradient %.3g", it, np.max(np.abs(grad)))
    if ess < 100:
        log.warning("importance sampling effective size only %.0f; increase n_mc", ess)
    th = ThetaPoly(d, m, theta)
    g, se = log_partition(th, max(n_mc, 10_000), root.spawn(1))
    info = MleInfo(it, converged, float(np.max(np.abs(grad))), ess)
    return ExpFamilyModel(th, g, se, int(n_mc), int(seed), info)


# --- text serialisation -----------------------------------------------------


def _fmt(x):
    return "%.17g" % x


def theta_to_text(model):
    """Flat text: '#' header with g, its SE, sample size and seed; then 'd m';
    then one line ``a_1 ... a_{d+1} coefficient`` per basis exponent."""
    if isinstance(model, ThetaPoly):
        model = ExpFamilyModel(model, math.nan, math.nan, 0, 0)
    th = model.theta
    buf = io.StringIO()
    buf.write(f"# log_partition={_fmt(model.log_partition)}\n")
    buf.write(f"# mc_se={_fmt(model.mc_se)}\n")
    buf.write(f"# mc_samples={model.mc_samples}\n")
    buf.write(f"# seed={model.seed}\n")
    buf.write(f"{th.dim} {th.degree}\n")
    for a, c in zip(_basis(th.dim, th.degree), th.coefficients):
        buf.write(" ".join(str(k) for k in a) + " " + _fmt(c) + "\n")
    return buf.getvalue()


def theta_from_text(text):
    """Inverse of ``theta_to_text``. Other '#' lines are ignored."""
    header = {}
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, val = line[1:].strip().partition("=")
            if sep:
                header[key.strip()] = val.strip()
            continue
        rows.append(line.split())
    if not rows or len(rows[0]) != 2:
        raise ValueError("theta file must start with a 'd m' line")
    d, m = int(rows[0][0]), int(rows[0][1])
    terms = {}
    for r in rows[1:]:
        if len(r) != d + 2:
            raise ValueError(f"theta line {' '.join(r)!r} should have {d + 2} fields")
        a = tuple(int(k) for k in r[:-1])
        if a in terms:
            raise ValueError(f"exponent {a} listed twice")
        terms[a] = float(r[-1])
    if len(terms) != basis_size(d, m):
        raise ValueError(f"theta file lists {len(terms)} terms, expected {basis_size(d, m)}")
    theta = ThetaPoly.from_terms(d, m, terms)
    return ExpFamilyModel(
        theta,
        float(header.get("log_partition", "nan")),
        float(header.get("mc_se", "nan")),
        int(header.get("mc_samples", "0")),
        int(header.get("seed", "0")),
    )
