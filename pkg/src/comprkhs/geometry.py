"""Quotient geometry of the compositional domain.

A composition of ``d + 1`` parts lives on the closed simplex. Dividing by
the Euclidean norm ("inflation") places it on the first-orthant sphere, and
the first orthant is a strict fundamental domain for the group of
coordinate sign flips acting on S^d. Every function in this package accepts
plain ndarrays; points are rows, so a batch has shape ``(n, d + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "D_MAX",
    "ZERO_TOL",
    "DomainError",
    "OrbitData",
    "as_composition",
    "as_sphere_point",
    "inflate",
    "contract_l1",
    "fold",
    "group_order",
    "sign_patterns",
    "iter_sign_blocks",
    "stabilizer_order",
    "sign_average",
    "orbit",
    "spread_out",
    "spread_sample",
    "in_first_orthant",
]

D_MAX = 24
ZERO_TOL = 1e-12
SUM_TOL = 1e-6


class DomainError(ValueError):
    """Input outside the domain of an operation."""


def _check_dim(d):
    if d < 1:
        raise DomainError(f"need at least two parts (d >= 1), got d = {d}")
    if d > D_MAX:
        raise DomainError(f"d = {d} exceeds the configured cap D_MAX = {D_MAX}")


def as_composition(v, tol=SUM_TOL):
    """Validate and renormalise one composition or a batch of them.

    Entries in ``[-1e-12, 0)`` are clamped to zero. Rows whose sum is
    within ``tol`` of one are rescaled to sum exactly to one; anything else
    raises DomainError.
    """
    x = np.array(v, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] < 2:
        raise DomainError("a composition needs at least two parts")
    _check_dim(x.shape[-1] - 1)
    if not np.all(np.isfinite(x)):
        raise DomainError("composition contains non-finite values")
    if np.any(x < -ZERO_TOL):
        raise DomainError("composition has negative parts")
    x[x < 0] = 0.0
    s = x.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s - 1.0) > tol):
        raise DomainError(f"composition parts must sum to 1 (tolerance {tol})")
    return x / s


def as_sphere_point(z, tol=1e-10):
    """Validate unit vectors (within ``tol``) and return them renormalised."""
    x = np.array(z, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] < 2:
        raise DomainError("a sphere point needs at least two coordinates")
    _check_dim(x.shape[-1] - 1)
    if not np.all(np.isfinite(x)):
        raise DomainError("sphere point contains non-finite values")
    nrm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(np.abs(nrm - 1.0) > tol):
        raise DomainError("points must lie on the unit sphere")
    return x / nrm


def inflate(v):
    """Map simplex points to the first-orthant sphere by l2 normalisation."""
    x = np.asarray(v, dtype=float)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def contract_l1(s):
    """Map first-orthant sphere points back to the simplex (l1 normalisation)."""
    x = np.asarray(s, dtype=float)
    if np.any(x < -ZERO_TOL):
        raise DomainError("contraction is defined on the first orthant only")
    x = np.where(x < 0, 0.0, x)
    return x / x.sum(axis=-1, keepdims=True)


def fold(z):
    """Quotient map S^d -> first orthant: componentwise absolute value."""
    return np.abs(np.asarray(z, dtype=float))


def in_first_orthant(z, tol=ZERO_TOL):
    return np.all(np.asarray(z) >= -tol, axis=-1)


def group_order(d):
    return 2 ** (d + 1)


def sign_patterns(d):
    """All ``2^(d+1)`` sign vectors as rows; row 0 is the identity."""
    _check_dim(d)
    idx = np.arange(2 ** (d + 1), dtype=np.int64)[:, None]
    bits = (idx >> np.arange(d + 1)) & 1
    return 1.0 - 2.0 * bits


def iter_sign_blocks(d, block=4096, half=False):
    """Yield the sign patterns in blocks to bound memory for large ``d``.

    With ``half=True`` only patterns whose first sign is +1 are produced;
    that suffices for functions that are even under ``x -> -x``.
    """
    _check_dim(d)
    free = d if half else d + 1
    total = 2 ** free
    for start in range(0, total, block):
        idx = np.arange(start, min(start + block, total), dtype=np.int64)[:, None]
        bits = (idx >> np.arange(free)) & 1
        signs = 1.0 - 2.0 * bits
        if half:
            signs = np.hstack([np.ones((signs.shape[0], 1)), signs])
        yield signs


def sign_average(f, z):
    """Average of ``f(g z)`` over all sign patterns ``g``.

    ``f`` maps a ``(k, d+1)`` array to ``k`` values. The average is reduced
    one coordinate flip at a time, so terms that cancel in pairs (odd
    monomials, for instance) give exactly zero.
    """
    z = np.asarray(z, dtype=float)
    Z = np.atleast_2d(z)
    d = Z.shape[1] - 1
    S = sign_patterns(d)
    vals = np.asarray(f((S[:, None, :] * Z[None, :, :]).reshape(-1, d + 1)), dtype=float)
    v = vals.reshape((2,) * (d + 1) + (len(Z),))
    for _ in range(d + 1):
        v = 0.5 * (v[0] + v[1])
    return float(v[0]) if z.ndim == 1 else v


def stabilizer_order(z, tol=ZERO_TOL):
    """``2^(number of zero coordinates)``, zeros detected with ``tol``."""
    zeros = np.sum(np.abs(np.asarray(z, dtype=float)) <= tol, axis=-1)
    return np.left_shift(1, zeros)


@dataclass(frozen=True)
class OrbitData:
    """Distinct sign-flip images of a sphere point.

    Each distinct point stands for ``stabilizer_order`` group elements, so
    ``len(points) * stabilizer_order == 2^(d+1)`` always.
    """

    representative: np.ndarray
    points: np.ndarray
    stabilizer_order: int

    @property
    def dim(self):
        return self.points.shape[1] - 1

    @property
    def multiplicities(self):
        return np.full(len(self.points), self.stabilizer_order, dtype=np.int64)

    @property
    def weighted_count(self):
        return len(self.points) * self.stabilizer_order

    def __len__(self):
        return len(self.points)


def orbit(z):
    """Enumerate the orbit of a single sphere point under coordinate sign flips."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise DomainError("orbit expects a single point")
    d = z.size - 1
    _check_dim(d)
    nonzero = np.flatnonzero(np.abs(z) > ZERO_TOL)
    k = nonzero.size
    idx = np.arange(2**k, dtype=np.int64)[:, None]
    signs = 1.0 - 2.0 * ((idx >> np.arange(k)) & 1)
    pts = np.repeat(z[None, :], 2**k, axis=0)
    pts[:, nonzero] *= signs
    pts.setflags(write=False)
    rep = z.copy()
    rep.setflags(write=False)
    return OrbitData(rep, pts, 2 ** (d + 1 - k))


def spread_out(x):
    """Orbit of an inflated composition, each point carrying its stabilizer
    order as multiplicity (total weighted count ``2^(d+1)``)."""
    return orbit(inflate(as_composition(x)))


def spread_sample(compositions):
    """Spread a batch of compositions to a weighted sample on S^d.

    Returns ``(points, weights, owner)`` where ``owner[k]`` is the row of the
    composition that produced ``points[k]``. Weights sum to ``n 2^(d+1)``.
    """
    X = np.atleast_2d(as_composition(compositions))
    pts, wts, owner = [], [], []
    for i, row in enumerate(inflate(X)):
        ob = orbit(row)
        pts.append(ob.points)
        wts.append(ob.multiplicities)
        owner.append(np.full(len(ob), i, dtype=np.int64))
    return np.vstack(pts), np.concatenate(wts).astype(float), np.concatenate(owner)
