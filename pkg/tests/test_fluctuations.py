import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from projective_sgd.dynamics import DriftEvaluatorConfig
from projective_sgd.experiments import he3_fixed_point
from projective_sgd.fluctuations import (SdeSpec, build_sde_spec, find_fixed_point, jacobian_h, ou_variance,
                                         simulate_sde, stability, volatility_sigma)
from projective_sgd.models import make_he3_he2, make_quadratic
from projective_sgd.summary import SummaryLayout, SummaryState


def _quad_state(R):
    return SummaryState(np.array([[R, 0.0], [0.0, 0.0]]), np.zeros(0), SummaryLayout(1, 0, 1, 0))


@given(st.floats(0.2, 3.0), st.floats(-1.5, 1.5), st.floats(0.05, 1.0))
def test_quadratic_jacobian_and_volatility_closed_form(R, coef, c):
    m = make_quadratic(coef, 0.1)
    u = _quad_state(R)
    J = jacobian_h(u, m, [1.0], [0], c)
    rate = -2 * coef + c * coef**2 - 0.4
    assert J[0, 0] == pytest.approx(rate, rel=1e-6, abs=1e-8)
    # per-step fluctuation (2 coef - c coef^2) Z^2 with Var(Z^2) = 2 R^2
    vol = volatility_sigma(u, m, [1.0], [0], c, method="gauss_hermite")
    assert vol.sigma[0, 0] == pytest.approx(c * (2 * coef - c * coef**2) ** 2 * 2 * R * R, rel=1e-9, abs=1e-12)
    first = volatility_sigma(u, m, [1.0], [0], c, method="gauss_hermite", second_order=False)
    assert first.sigma[0, 0] == pytest.approx(c * (2 * coef) ** 2 * 2 * R * R, rel=1e-9, abs=1e-12)


def test_monte_carlo_volatility_matches_quadrature():
    m = make_quadratic(0.7)
    u = _quad_state(1.3)
    gh = volatility_sigma(u, m, [1.0], [0], 0.5, method="gauss_hermite").sigma[0, 0]
    mc = volatility_sigma(u, m, [1.0], [0], 0.5, n_samples=400_000, seed=1, method="monte_carlo").sigma[0, 0]
    assert mc == pytest.approx(gh, rel=0.03)


def test_sigma_sqrt_squares_to_sigma():
    sig = np.array([[2.0, 0.5], [0.5, 1.0]])
    spec = SdeSpec(-np.eye(2), sig, ("a", "b"))
    assert np.allclose(spec.sigma_sqrt @ spec.sigma_sqrt, sig, atol=1e-8)
    with pytest.raises(ValueError):
        SdeSpec(-np.eye(3), sig, ("a", "b"))


def test_sde_spec_text_roundtrip():
    spec = SdeSpec([[-1.0, 0.3], [0.0, 0.5]], [[2.0, -0.4], [-0.4, 1.0]], ("G_t0_t0", "G_t0_f0"), None,
                   np.array([0.16, 0.0]))
    back = SdeSpec.from_text(spec.to_text())
    assert back.names == spec.names
    for a, b in ((back.jacobian, spec.jacobian), (back.sigma, spec.sigma), (back.sigma_sqrt, spec.sigma_sqrt),
                 (back.u_star, spec.u_star)):
        assert np.array_equal(a, b)
    sub = spec.restrict([1])
    assert sub.names == ("G_t0_f0",) and sub.jacobian[0, 0] == 0.5


@pytest.mark.parametrize("lam", [-2.0, 0.0, 1.0])
def test_euler_maruyama_matches_ou_variance(lam):
    spec = SdeSpec([[lam]], [[3.0]], ("x",))
    ens = simulate_sde(np.zeros(1), spec, 1.0, 1e-3, 4000, seed=5, record_every=100)
    var = ens.variance()[:, 0]
    exact = ou_variance(lam, 3.0, ens.times)
    se = exact * math.sqrt(2 / 4000)
    assert np.all(np.abs(var[1:] - exact[1:]) <= 4 * se[1:] + 3e-3 * exact[1:])


def test_simulate_sde_rules():
    spec = SdeSpec([[-1.0]], [[1.0]], ("x",))
    with pytest.raises(ValueError):
        simulate_sde(np.zeros(1), spec, 1.0, 0.01, 10, seed=0)
    a = simulate_sde(np.zeros(1), spec, 0.1, 1e-4, 8, seed=3)
    b = simulate_sde(np.zeros(1), spec, 0.1, 1e-4, 8, seed=3)
    assert np.array_equal(a.paths, b.paths)


def test_he3_fixed_point_solvers_agree_and_slice_stays_pinned():
    cfg = DriftEvaluatorConfig(order=12)
    fi, fn, roots = he3_fixed_point(1.0, 0.008, cfg)
    assert fi.converged and fn.converged
    assert abs(fi.u_star.G[0, 0] - fn.u_star.G[0, 0]) <= 1e-4
    assert fi.u_star.G[0, 1] == 0.0 and fn.u_star.G[0, 1] == 0.0
    assert fi.residual <= 1e-6 and fn.residual <= 1e-6
    J = build_sde_spec(fi.u_star, make_he3_he2(), [1.0], [0], 0.008, cfg).restrict([0, 1]).jacobian
    ev = stability(J)
    assert ev[0].real > 0 > ev[-1].real


def test_fixed_point_failure_is_reported():
    # growing quadratic drift has no non-trivial fixed point: the flow runs off
    m = make_quadratic(-2.0)
    fp = find_fixed_point(_quad_state(1.0), m, [1.0], [0], 1.0, method="integrate", pinned=(), max_time=50.0)
    assert not fp.converged and fp.message
