"""Exact expectations of polynomials of projected mixture data.

For ``z = V^T (mu_J + Y)`` with i.i.d. coordinates ``Y_i``, the joint
cumulants of ``z`` given the class are ``kappa_n(nu) * sum_i prod_a V_ia^alpha_a``
for ``|alpha| = n >= 2`` plus the shift ``V^T mu_J`` in the first order. Joint
moments follow from the cumulants by the standard recursion, so the mean of
any polynomial of ``z`` is exact at finite ``d``.
"""

from __future__ import annotations

import functools
import itertools
import math

import numpy as np

from .distributions import NoiseDistribution


def noise_cumulants(noise: NoiseDistribution, order: int) -> np.ndarray:
    """``kappa_0..kappa_order`` of the one-coordinate law (``kappa_0 = 0``)."""
    m = [1.0] + [float(noise.moment(n)) for n in range(1, order + 1)]
    k = [0.0] * (order + 1)
    for n in range(1, order + 1):
        k[n] = m[n] - sum(math.comb(n - 1, j - 1) * k[j] * m[n - j] for j in range(1, n))
    return np.array(k)


def joint_moments(V: np.ndarray, shift: np.ndarray, noise: NoiseDistribution, degree: int) -> dict:
    """``E prod_a z_a^alpha_a`` for every multi-index with ``|alpha| <= degree``."""
    V = np.asarray(V, dtype=float)
    r = V.shape[1]
    kap = noise_cumulants(noise, degree)

    @functools.lru_cache(maxsize=None)
    def cumulant(alpha):
        n = sum(alpha)
        if n == 1:
            return float(shift[alpha.index(1)])
        return kap[n] * float(np.sum(np.prod(V ** np.array(alpha), axis=1)))

    @functools.lru_cache(maxsize=None)
    def moment(alpha):
        if sum(alpha) == 0:
            return 1.0
        j = next(a for a in range(r) if alpha[a] > 0)
        rest = list(alpha)
        rest[j] -= 1
        tot = 0.0
        for beta in itertools.product(*(range(x + 1) for x in rest)):
            coef = math.prod(math.comb(x, b) for x, b in zip(rest, beta))
            bj = list(beta)
            bj[j] += 1
            rem = tuple(x - b for x, b in zip(rest, beta))
            tot += coef * cumulant(tuple(bj)) * moment(rem)
        return tot

    return {alpha: moment(alpha) for alpha in itertools.product(range(degree + 1), repeat=r) if sum(alpha) <= degree}


def polynomial_coefficients(fn, r: int, degree: int) -> dict:
    """Monomial coefficients of a polynomial ``fn: (n, r) -> (n,)`` of total degree ``<= degree``,
    recovered by least squares on an oversampled tensor Chebyshev grid."""
    n = degree + 3  # two spare nodes per axis so a non-polynomial leaves a residual
    nodes = np.cos(np.pi * (np.arange(n) + 0.5) / n) * 1.5
    pts = np.array(list(itertools.product(nodes, repeat=r)))
    alphas = [a for a in itertools.product(range(degree + 1), repeat=r) if sum(a) <= degree]
    A = np.stack([np.prod(pts ** np.array(a), axis=1) for a in alphas], axis=1)
    vals = fn(pts)
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
    resid = float(np.max(np.abs(A @ coef - vals), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(vals), initial=0.0)))
    if resid > 1e-8 * scale:
        raise ValueError(f"function is not a polynomial of degree {degree} (residual {resid:.3g})")
    return dict(zip(alphas, coef))


def exact_mean(fn, V: np.ndarray, means: np.ndarray, weights, noise: NoiseDistribution, degree: int) -> float:
    """``E fn(z)`` for ``z = V^T (mu_J + Y)``; columns of ``V`` that are identically zero are
    passed to ``fn`` as zeros."""
    V = np.asarray(V, dtype=float)
    live = [a for a in range(V.shape[1]) if np.any(V[:, a] != 0.0)]
    r_full = V.shape[1]

    def f_live(pts):
        z = np.zeros((pts.shape[0], r_full))
        z[:, live] = pts
        return fn(z)

    coef = polynomial_coefficients(f_live, len(live), degree)
    Vl = V[:, live]
    tot = 0.0
    for a, pa in enumerate(weights):
        if pa == 0.0:
            continue
        mom = joint_moments(Vl, Vl.T @ means[a], noise, degree)
        tot += pa * sum(c * mom[alpha] for alpha, c in coef.items())
    return float(tot)
