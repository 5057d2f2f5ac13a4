import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from projective_sgd.distributions import gaussian
from projective_sgd.mixture import symmetric_two_class
from projective_sgd.models import ParameterState, make_logistic, make_phase_retrieval
from projective_sgd.summary import (SummaryLayout, SummaryState, compute_summary, deloc_report, rescale,
                                    zeta_eff)


def test_layout_names_and_order():
    lay = SummaryLayout(k1=2, k_frozen=1, k_means=1, k2=2)
    assert lay.names == ("G_t0_t0", "G_t0_t1", "G_t0_f0", "G_t0_m0", "G_t1_t1", "G_t1_f0", "G_t1_m0", "w_0", "w_1")
    assert lay.index(1, 0) == lay.index(0, 1) == 1
    assert lay.quadratic_mask().tolist() == [True, True, False, False, True, False, False, False, False]


@given(arrays(float, (6, 2), elements=st.floats(-3, 3)))
def test_summary_is_the_gram_matrix(theta):
    spec = symmetric_two_class(6, gaussian(), 1.3)
    u = compute_summary(ParameterState(theta, np.zeros(0)), spec, make_logistic(2))
    V = np.concatenate([theta, spec.means.T], axis=1)
    assert np.allclose(u.G, V.T @ V)
    assert np.array_equal(u.G, u.G.T)
    assert np.linalg.eigvalsh(u.G).min() >= -1e-10 * max(1.0, np.trace(u.G))
    # the means block never depends on theta
    assert np.allclose(u.G[2:, 2:], spec.means @ spec.means.T)


@given(arrays(float, (5,), elements=st.floats(-1e3, 1e3)), st.integers(2, 10**6))
def test_rescale_roundtrip_is_exact(vec, d):
    lay = SummaryLayout(1, 1, 1, 0)
    star = SummaryState(np.eye(3), np.zeros(0), lay)
    u = star.with_vector(np.concatenate([vec, [0.0]])[: lay.size])
    back = rescale(u, star, d).unrescale(star)
    assert np.array_equal(back.vector(), u.vector())


@given(arrays(float, (20, 2), elements=st.floats(-5, 5)))
def test_deloc_bounds(theta):
    rep = deloc_report(theta)
    norms = np.linalg.norm(theta, axis=0)
    assert rep.linf <= norms.max() + 1e-12
    assert rep.l3cubed <= rep.linf * np.max(norms**2) + 1e-9


def test_zeta_eff_values():
    d = 10_000
    assert zeta_eff(1 / math.sqrt(d), d) == pytest.approx(0.0, abs=1e-12)
    assert zeta_eff(1.0, d) == pytest.approx(0.5)


def test_summary_checks_shapes():
    spec = symmetric_two_class(4, gaussian())
    with pytest.raises(ValueError):
        compute_summary(ParameterState(np.zeros((4, 1)), np.zeros(0)), spec, make_phase_retrieval())
