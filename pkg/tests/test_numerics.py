import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from projective_sgd.numerics import (NotPsdError, cholesky_psd, clip_psd, gauss_hermite_grid, numerical_rank,
                                     psd_sqrt, sample_mvn)


def gaussian_moment(n: int) -> float:
    return 0.0 if n % 2 else float(math.prod(range(n - 1, 0, -2)))


@st.composite
def psd_matrices(draw, max_r=6):
    r = draw(st.integers(1, max_r))
    rank = draw(st.integers(0, r))
    B = draw(arrays(float, (r, rank), elements=st.floats(-3, 3)))
    return B @ B.T


@given(psd_matrices())
def test_clip_psd_output_is_symmetric_and_psd(M):
    C, removed = clip_psd(M)
    assert np.array_equal(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-12 * max(1.0, np.trace(M))
    assert removed >= 0.0


@given(psd_matrices())
def test_cholesky_psd_reconstructs(M):
    L = cholesky_psd(M)
    assert np.allclose(L, np.tril(L))
    assert np.allclose(L @ L.T, M, atol=1e-9 * max(1.0, np.abs(M).max()))


@given(psd_matrices())
def test_psd_sqrt_squares_back(M):
    S = psd_sqrt(M)
    assert np.allclose(S @ S, M, atol=1e-8 * max(1.0, np.abs(M).max()))


def test_clip_rejects_clearly_indefinite():
    with pytest.raises(NotPsdError):
        clip_psd(np.diag([1.0, -0.5]))
    C, removed = clip_psd(np.diag([1.0, -1e-12]))
    assert removed == pytest.approx(1e-12)
    assert np.linalg.eigvalsh(C).min() >= 0.0


def test_rank_of_singular_gram():
    B = np.array([[1.0, 2.0], [0.5, 1.0], [3.0, 6.0]])
    assert numerical_rank(B @ B.T) == 1


@pytest.mark.parametrize("dim,order", [(1, 5), (2, 6), (3, 4)])
def test_gauss_hermite_integrates_monomials_exactly(dim, order):
    grid = gauss_hermite_grid(dim, order)
    assert grid.weights.sum() == pytest.approx(1.0, abs=1e-14)
    top = 2 * order - 1
    for powers in np.ndindex(*([top + 1] * dim)):
        vals = np.prod(grid.nodes ** np.array(powers), axis=1)
        exact = math.prod(gaussian_moment(p) for p in powers)
        scale = grid.expect(np.abs(vals))
        assert grid.expect(vals) == pytest.approx(exact, rel=1e-10, abs=1e-13 * scale)


def test_gauss_hermite_limits():
    with pytest.raises(ValueError):
        gauss_hermite_grid(5, 3)


def test_sample_mvn_moments():
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    x = sample_mvn([1.0, -1.0], cov, 200_000, seed=3)
    assert np.allclose(x.mean(axis=0), [1.0, -1.0], atol=0.02)
    assert np.allclose(np.cov(x.T), cov, atol=0.03)
    assert np.array_equal(x, sample_mvn([1.0, -1.0], cov, 200_000, seed=3))
