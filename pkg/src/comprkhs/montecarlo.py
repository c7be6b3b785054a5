"""Randomness and integration substrate.

Seeded substreams, uniform sampling on spheres, Monte Carlo integrals with
standard errors, and a thin wrapper around adaptive 1-D quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln

__all__ = [
    "RngStream",
    "McEstimate",
    "QuadratureError",
    "as_generator",
    "uniform_sphere",
    "mc_integral_sphere",
    "quad_1d",
]

_MASK64 = (1 << 64) - 1
_CHUNK = 1 << 16


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(master_seed, substream_id)``.

    The generator is seeded from a hash of both integers, so distinct
    substream ids give independent streams and the same pair always
    reproduces the same sequence, no matter which worker draws it.
    """

    master_seed: int
    substream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) & _MASK64)
        object.__setattr__(self, "substream_id", int(self.substream_id) & _MASK64)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.substream_id,))
        return np.random.Generator(np.random.PCG64(seq))

    def spawn(self, key: int) -> "RngStream":
        """Child stream for a sub-task, e.g. a replicate number."""
        mixed = np.random.SeedSequence([self.substream_id, int(key) & _MASK64])
        lo, hi = mixed.generate_state(2, dtype=np.uint32)
        return RngStream(self.master_seed, (int(hi) << 32) | int(lo))


def as_generator(stream) -> np.random.Generator:
    """Accept an RngStream, a Generator or an integer seed."""
    if isinstance(stream, RngStream):
        return stream.generator()
    if isinstance(stream, np.random.Generator):
        return stream
    return RngStream(int(stream)).generator()


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n: int

    def within(self, target, k=3.0):
        """True if ``target`` lies within ``k`` standard errors."""
        return abs(self.value - target) <= k * self.std_error


def uniform_sphere(d, n, stream):
    """Draw ``n`` points uniformly from the unit sphere S^d in R^{d+1}.

    Each point is a vector of independent standard normals scaled to unit
    length, which makes the law rotation invariant.
    """
    if d < 1:
        raise ValueError(f"sphere dimension must be >= 1, got {d}")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = as_generator(stream)
    g = rng.standard_normal((int(n), d + 1))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # zero-norm draws have probability zero; redraw defensively
    bad = norms[:, 0] == 0.0
    while np.any(bad):
        g[bad] = rng.standard_normal((int(bad.sum()), d + 1))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        bad = norms[:, 0] == 0.0
    return g / norms


def _log_sphere_volume(d):
    return np.log(2.0) + 0.5 * (d + 1) * np.log(np.pi) - gammaln(0.5 * (d + 1))


def mc_integral_sphere(f, d, n, stream, chunk=_CHUNK):
    """Monte Carlo estimate of the integral of ``f`` over S^d.

    ``f`` receives an ``(k, d+1)`` array of points and returns ``k`` values.
    Points are drawn in fixed-size chunks from a single generator, so the
    estimate depends only on ``(stream, n, chunk)``.
    """
    if n < 2:
        raise ValueError("need at least two Monte Carlo samples")
    rng = as_generator(stream)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n:
        k = min(chunk, n - done)
        vals = np.asarray(f(uniform_sphere(d, k, rng)), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("integrand returned non-finite values")
        total += vals.sum()
        total_sq += np.dot(vals, vals)
        done += k
    vol = np.exp(_log_sphere_volume(d))
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return McEstimate(vol * mean, vol * np.sqrt(var / n), n)


def quad_1d(f, a, b, rel_tol=1e-9, points=None, limit=500):
    """Adaptive Gauss-Kronrod quadrature of a scalar function.

    ``b`` may be ``np.inf``. Raises QuadratureError when the subdivision
    budget runs out before the error estimate drops below ``rel_tol``.
    """
    kwargs = dict(epsabs=0.0, epsrel=rel_tol, limit=limit, full_output=1)
    if points is not None and np.isfinite(b):
        kwargs["points"] = points
    out = integrate.quad(f, a, b, **kwargs)
    value, err = out[0], out[1]
    if len(out) > 3:
        if value != 0.0 and err <= max(rel_tol, 1e-12) * abs(value) * 10:
            return value
        raise QuadratureError(f"quadrature on [{a}, {b}] did not converge: {out[3]}")
    return value
