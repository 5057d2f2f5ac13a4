"""Small dense linear algebra and Gaussian sampling / quadrature primitives.

Everything here works on matrices of size at most ~12 and is pure given its
inputs (and seed, where one is taken).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

CLIP_REL_TOL = 1e-10
MAX_GH_DIM = 4
MAX_GH_NODES = 10**6


class NotPsdError(ValueError):
    """Raised when a Gram matrix has an eigenvalue below the clip tolerance."""


def symmetrize(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def clip_tolerance(M: np.ndarray, rel_tol: float = CLIP_REL_TOL) -> float:
    return rel_tol * max(float(np.trace(M)), 0.0)


def clip_psd(M: np.ndarray, rel_tol: float = CLIP_REL_TOL, strict: bool = True):
    """Project a symmetric matrix onto the PSD cone by eigenvalue clipping.

    Returns ``(clipped, removed)`` where ``removed`` is the total negative
    eigenvalue mass that was discarded. With ``strict`` set, eigenvalues
    below ``-rel_tol * trace`` raise :class:`NotPsdError`.
    """
    S = symmetrize(M)
    if S.size == 0:
        return S, 0.0
    if not np.all(np.isfinite(S)):
        raise NotPsdError("matrix has non-finite entries")
    evals, evecs = np.linalg.eigh(S)
    tol = clip_tolerance(S, rel_tol)
    if strict and evals[0] < -tol:
        raise NotPsdError(
            f"smallest eigenvalue {evals[0]:.3e} is below -{tol:.3e}"
        )
    neg = evals < 0
    if not np.any(neg):
        return S, 0.0
    removed = float(-evals[neg].sum())
    clipped = (evecs * np.clip(evals, 0.0, None)) @ evecs.T
    return symmetrize(clipped), removed


def cholesky_psd(M: np.ndarray, rel_tol: float = CLIP_REL_TOL) -> np.ndarray:
    """Lower-triangular factor ``L`` with ``L @ L.T`` equal to the clipped ``M``.

    Works for singular matrices: the clipped matrix is factored as ``B B^T``
    by eigendecomposition and ``B`` is reduced to lower-triangular form with
    a QR step, so zero pivots give zero columns instead of NaNs. For a
    positive definite input this is the ordinary Cholesky factor.
    """
    S = symmetrize(M)
    r = S.shape[0]
    if r == 0:
        return np.zeros((0, 0))
    clip_psd(S, rel_tol)  # validation only
    if np.all(np.linalg.eigvalsh(S) > clip_tolerance(S, 1e-8)):
        return np.linalg.cholesky(S)
    evals, evecs = np.linalg.eigh(S)
    B = evecs * np.sqrt(np.clip(evals, 0.0, None))
    _, R = np.linalg.qr(B.T, mode="complete")
    L = R.T
    signs = np.where(np.diag(L) < 0, -1.0, 1.0)
    L = L * signs
    # columns whose scale sits at rounding level carry no information
    scale = math.sqrt(max(float(np.trace(S)), 0.0))
    dead = np.linalg.norm(L, axis=0) <= 1e-12 * max(scale, 1e-300)
    L[:, dead] = 0.0
    return np.tril(L)


def psd_sqrt(M: np.ndarray, rel_tol: float = CLIP_REL_TOL) -> np.ndarray:
    """Symmetric square root of a PSD matrix (via eigendecomposition)."""
    S, _ = clip_psd(M, rel_tol)
    evals, evecs = np.linalg.eigh(S)
    root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    return symmetrize(root)


def sample_mvn(mean, cov, n: int, seed) -> np.ndarray:
    """Draw ``n`` samples of N(mean, cov); returns an ``(n, r)`` array."""
    mean = np.asarray(mean, dtype=float)
    L = cholesky_psd(cov)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((n, mean.shape[0]))
    return mean + xi @ L.T


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor Gauss-Hermite rule for the standard Gaussian in ``dim`` variables.

    ``nodes`` has shape ``(N, dim)``; ``weights`` sum to one.
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def expect(self, values: np.ndarray) -> np.ndarray:
        """Weighted sum over nodes along axis 0."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def gauss_hermite_grid(dim: int, order: int) -> QuadratureGrid:
    """Tensor-product Gauss-Hermite grid for N(0, I_dim).

    Exact for polynomials of degree at most ``2 * order - 1`` in each variable.
    """
    if dim < 0:
        raise ValueError("dim must be non-negative")
    if dim > MAX_GH_DIM:
        raise ValueError(
            f"Gauss-Hermite grids are limited to dim <= {MAX_GH_DIM}; use Monte Carlo"
        )
    if order < 1:
        raise ValueError("order must be positive")
    if order**dim > MAX_GH_NODES:
        raise ValueError(f"grid with {order}^{dim} nodes exceeds {MAX_GH_NODES}")
    x, w = hermegauss(order)
    w = w / w.sum()
    if dim == 0:
        return QuadratureGrid(np.zeros((1, 0)), np.ones(1), order)
    mesh = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    weights = weights / weights.sum()
    return QuadratureGrid(nodes, weights, order)


def active_columns(L: np.ndarray) -> np.ndarray:
    """Indices of the non-zero columns of a factor from :func:`cholesky_psd`."""
    return np.flatnonzero(np.any(L != 0.0, axis=0))


def numerical_rank(G: np.ndarray, rel_tol: float = CLIP_REL_TOL) -> int:
    S = symmetrize(G)
    if S.size == 0:
        return 0
    evals = np.linalg.eigvalsh(S)
    tol = max(clip_tolerance(S, rel_tol), 1e-300)
    return int(np.sum(evals > tol))
