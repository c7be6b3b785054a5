"""Independent reference computations for the test suite.

Nothing here calls the library's kernel or geometry code: harmonic bases are
built from monomials by linear algebra, sphere integrals use closed-form
monomial moments or a product Gauss rule, and sign groups are enumerated
with itertools.
"""

import itertools
import math

import numpy as np
from scipy.special import gammaln


def sign_group(d):
    return np.array(list(itertools.product((1.0, -1.0), repeat=d + 1)))


def brute_orbit(z):
    """Distinct sign images of z (rounded keys) and how many patterns hit each."""
    counts = {}
    for g in sign_group(len(z) - 1):
        key = tuple(np.round(g * z, 14) + 0.0)
        counts[key] = counts.get(key, 0) + 1
    return counts


def monomials(deg, nvar=3):
    """Exponent tuples of total degree ``deg``."""
    out = []
    for combo in itertools.combinations_with_replacement(range(nvar), deg):
        a = [0] * nvar
        for k in combo:
            a[k] += 1
        out.append(tuple(a))
    return sorted(set(out), reverse=True)


def sphere_monomial_integral(a):
    """Integral of prod x_i^a_i over S^{len(a)-1}."""
    if any(k % 2 for k in a):
        return 0.0
    b = [(k + 1) / 2 for k in a]
    return 2.0 * math.exp(sum(gammaln(x) for x in b) - gammaln(sum(b)))


def _laplacian_matrix(deg, nvar=3):
    src = monomials(deg, nvar)
    dst = monomials(deg - 2, nvar) if deg >= 2 else []
    idx = {a: i for i, a in enumerate(dst)}
    L = np.zeros((len(dst), len(src)))
    for j, a in enumerate(src):
        for v in range(nvar):
            if a[v] >= 2:
                b = list(a)
                b[v] -= 2
                L[idx[tuple(b)], j] += a[v] * (a[v] - 1)
    return src, L


def _inner_product_matrix(exps):
    n = len(exps)
    M = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            M[i, j] = sphere_monomial_integral([p + q for p, q in zip(exps[i], exps[j])])
    return M


def harmonic_basis(deg, nvar=3, invariant=False):
    """L2(S^{nvar-1})-orthonormal basis of degree-``deg`` harmonic polynomials.

    Returns ``(exps, C)`` with basis function k equal to
    sum_j C[j, k] x^exps[j]. With ``invariant=True`` only polynomials in the
    squared variables are kept (the sign-invariant harmonics).
    """
    exps, L = _laplacian_matrix(deg, nvar)
    if invariant:
        keep = [j for j, a in enumerate(exps) if all(k % 2 == 0 for k in a)]
        exps = [exps[j] for j in keep]
        L = L[:, keep]
    if L.shape[0]:
        u, s, vt = np.linalg.svd(L)
        rank = int(np.sum(s > 1e-9 * max(s.max(), 1.0)))
        N = vt[rank:].T
    else:
        N = np.eye(len(exps))
    G = N.T @ _inner_product_matrix(exps) @ N
    w, V = np.linalg.eigh(G)
    C = N @ V / np.sqrt(w)
    return exps, C


def eval_poly(exps, C, X):
    X = np.atleast_2d(X)
    mons = np.stack([np.prod(X ** np.array(a), axis=1) for a in exps], axis=1)
    return mons @ C


def explicit_zonal(deg, x, t):
    """sum_k Y_k(x) Y_k(t) over an explicit orthonormal basis of degree ``deg`` on S^2."""
    exps, C = harmonic_basis(deg)
    return np.sum(eval_poly(exps, C, x) * eval_poly(exps, C, t), axis=1)


def sphere_product_rule(n_theta):
    """Gauss-Legendre in cos(theta) times a uniform rule in phi on S^2.

    Exact for polynomials of degree below 2 * n_theta.
    """
    u, wu = np.polynomial.legendre.leggauss(n_theta)
    n_phi = 2 * n_theta
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    U, P = np.meshgrid(u, phi, indexing="ij")
    W = np.outer(wu, np.full(n_phi, 2 * np.pi / n_phi))
    r = np.sqrt(1 - U**2)
    pts = np.stack([r * np.cos(P), r * np.sin(P), U], axis=-1).reshape(-1, 3)
    return pts, W.ravel()


def simplex_lattice_count(d, m):
    """Number of exponent vectors of total degree m in d + 1 variables, by enumeration."""
    return sum(1 for _ in itertools.combinations_with_replacement(range(d + 1), m))


def uniform_orthant_moment(a):
    """E[prod z_i^a_i] for z uniform on the first-orthant part of S^d (all a_i >= 0)."""
    d = len(a) - 1
    num = math.exp(sum(gammaln((k + 1) / 2) for k in a) - gammaln((sum(a) + d + 1) / 2))
    den = math.exp((d + 1) * gammaln(0.5) - gammaln((d + 1) / 2))
    return num / den
