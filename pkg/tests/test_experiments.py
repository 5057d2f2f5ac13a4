import itertools
import json
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from projective_sgd import experiments as E
from projective_sgd.distributions import centered_exponential, two_point_with_m4
from projective_sgd.mixture import centered
from projective_sgd.models import make_he3_he2
from projective_sgd.summary import ParameterState

# ------------------------------------------------------------------ symbolic Gaussian oracle

zb, zc = sp.symbols("z_b z_c")


def _he3_F():
    """Gradient part of the drift of <theta, theta_star> for the He3+He2 loss, written out by hand."""
    f = lambda x: x**3 + x**2 - 3 * x  # noqa: E731
    return sp.expand(-zc * 2 * (f(zb) - f(zc)) * sp.diff(f(zb), zb))


def _gauss_mean(expr, G):
    """E expr(z) for z ~ N(0, G), via z = L u and independent normal moments."""
    L = np.linalg.cholesky(np.asarray(G, dtype=float))
    u = sp.symbols("u0 u1")
    sub = {zb: L[0, 0] * u[0], zc: L[1, 0] * u[0] + L[1, 1] * u[1]}
    poly = sp.Poly(sp.expand(expr.subs(sub)), *u)

    def m(n):
        return 0 if n % 2 else math.prod(range(n - 1, 0, -2))

    return float(sum(float(c) * m(a) * m(b) for (a, b), c in poly.terms()))


def _orthogonal_pair(d, R, rho, seed=3):
    star = np.full(d, rho / math.sqrt(d))
    return np.stack([E.projected_init(d, star, R, seed), star], axis=1)


def test_third_cumulant_gap_matches_symbolic_expansion():
    d, R, rho = 40, 0.3, 0.8
    V = _orthogonal_pair(d, R, rho)
    law = centered_exponential()
    G = V.T @ V
    F = _he3_F()
    oracle = 0.0
    for a, b, c in itertools.product(range(2), repeat=3):
        kap = float(np.sum(V[:, a] * V[:, b] * V[:, c]))
        deriv = sp.diff(F, (zb, zc)[a], (zb, zc)[b], (zb, zc)[c])
        oracle += kap * _gauss_mean(deriv, G)
    oracle *= law.m3 / 6.0
    got = E.third_cumulant_gap(make_he3_he2(), ParameterState(V, np.zeros(0)), centered(d, law), (0, 1), law.m3)
    assert got == pytest.approx(oracle, rel=1e-8, abs=1e-12)


def test_exact_gap_matches_enumeration():
    d = 8
    law = two_point_with_m4(4.0)
    V = _orthogonal_pair(d, 0.4, 1.0)
    a, b = law._atoms
    p = law.p
    F = sp.lambdify((zb, zc), _he3_F(), "numpy")
    tot = 0.0
    for bits in itertools.product((0, 1), repeat=d):
        bits = np.array(bits)
        y = np.where(bits == 1, a, b)
        prob = p ** bits.sum() * (1 - p) ** (d - bits.sum())
        z = y @ V
        tot += prob * F(z[0], z[1])
    oracle = tot - _gauss_mean(_he3_F(), V.T @ V)
    got = E.exact_overlap_drift_gap(make_he3_he2(), V, law, (0, 1))
    assert got == pytest.approx(oracle, rel=1e-9, abs=1e-12)


def test_gaussian_noise_has_zero_exact_gap():
    from projective_sgd.distributions import gaussian

    V = _orthogonal_pair(30, 0.5, 1.0)
    assert abs(E.exact_overlap_drift_gap(make_he3_he2(), V, gaussian(), (0, 1))) < 1e-12


def test_projected_init_is_orthogonal_with_requested_norm():
    d = 500
    u = np.full(d, 1 / math.sqrt(d))
    th = E.projected_init(d, u, 0.37, 11)
    assert abs(th @ u) < 1e-12
    assert th @ th == pytest.approx(0.37, rel=1e-12)


def test_he3_slice_has_no_m_drift_at_unit_rho():
    # m = 0 is invariant on the slice only when rho = 1
    from projective_sgd.dynamics import DriftEvaluatorConfig, drift_h

    model = make_he3_he2()
    u = E.he3_slice_state(0.2, 1.0)
    h = drift_h(u, model, [1.0], [0], 0.008, DriftEvaluatorConfig())
    assert abs(h[u.layout.index(0, 1)]) < 1e-10
    h_off = drift_h(E.he3_slice_state(0.2, 0.5), model, [1.0], [0], 0.008, DriftEvaluatorConfig())
    assert abs(h_off[u.layout.index(0, 1)]) > 1e-6


# ------------------------------------------------------------------ report plumbing


def test_tolerance_overrides_and_unknown_keys():
    t = E._tol("diffusive_gap", {"rel": 0.5})
    assert t["rel"] == 0.5
    with pytest.raises(ValueError, match="unknown tolerance"):
        E._tol("diffusive_gap", {"nope": 1.0})


@given(st.floats(-1e6, 1e6), st.floats(0, 1e3), st.booleans())
def test_claim_interval_is_symmetric(value, se, ok):
    c = E.Claim.of("x", value, se, ok, "t")
    assert c.ci_low <= c.value <= c.ci_high
    assert c.ci_high - c.value == pytest.approx(c.value - c.ci_low, abs=1e-6 * (1 + abs(value)))
    assert c.passed is ok


def test_report_passes_only_if_every_claim_passes(tmp_path):
    rep = E.ExperimentReport("demo", {"a": 1, "cfg": "x: 1\ny: 2\n"})
    rep.add(E.Claim.of("good", 1.0, 0.1, True, "t"))
    assert rep.passed
    rep.add(E.Claim.failed("bad", "needs a thing"))
    assert not rep.passed
    rep.tables["t"] = [dict(a=1.0, b=np.float64(np.nan))]
    rep.write(tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["passed"] is False and data["tables"]["t"][0]["b"] == "nan"
    text = (tmp_path / "report.txt").read_text()
    assert "overall: FAIL" in text and "    y: 2" in text
    assert "wall_clock_s" not in rep.to_dict(timing=False)


def test_every_registered_experiment_has_default_tolerances():
    for name, fn in E.EXPERIMENTS.items():
        key = name.replace("-", "_")
        assert key in E.DEFAULT_TOLERANCES, name
        assert callable(fn)


# ------------------------------------------------------------------ small runs


def test_ballistic_universality_small_run_is_deterministic():
    kw = dict(d=200, T=0.5, replicas=4, d_scan=(100, 200), dists=("rademacher",))
    E.clear_cache()
    r1 = E.exp_ballistic_universality(**kw)
    E.clear_cache()
    r2 = E.exp_ballistic_universality(**kw)
    assert r1.to_json(timing=False) == r2.to_json(timing=False)
    assert r1.claims and all(math.isfinite(c.value) for c in r1.claims)


def test_localized_init_small_run():
    rep = E.exp_localized_init(d=200, n_samples=20_000, control_samples=5_000)
    assert {row["dist"] for row in rep.tables["localized"]} >= {"gaussian", "rademacher"}


def test_clt_gap_scaling_small_run():
    rep = E.exp_clt_gap_scaling(d=400, n_members=4, n_samples=200_000, chunk=100_000)
    assert "loglog_slope" in [c.name for c in rep.claims]


def test_third_cumulant_gap_leading_terms_match_hand_expansion():
    # for theta orthogonal to a flat teacher only kappa_bbc and kappa_ccc survive at large d
    R_, rho_ = sp.symbols("R rho", positive=True)
    F = _he3_F()

    def gmean(expr):
        poly = sp.Poly(sp.expand(expr), zb, zc)
        mom = lambda n, s: 0 if n % 2 else sp.factorial2(n - 1) * s**n  # noqa: E731
        return sum(c * mom(a, sp.sqrt(R_)) * mom(b, rho_) for (a, b), c in poly.terms())

    lead = sp.expand((3 * R_ * rho_ * gmean(sp.diff(F, zb, zb, zc)) + rho_**3 * gmean(sp.diff(F, zc, 3))) / 6)
    assert sp.simplify(lead - (rho_ * R_ * (18 - 60 * R_ + 24 * rho_**2) - 6 * rho_**3)) == 0

    d, R, rho = 20000, 0.1623, 1.0
    V = _orthogonal_pair(d, R, rho)
    law = centered_exponential()
    got = math.sqrt(d) * E.third_cumulant_gap(make_he3_he2(), ParameterState(V, np.zeros(0)), centered(d, law),
                                              (0, 1), law.m3)
    want = law.m3 * float(lead.subs({R_: R, rho_: rho}))
    assert got == pytest.approx(want, rel=0.05)


def test_dgec_probe_rejects_snapshots_past_the_horizon():
    with pytest.raises(ValueError, match="snapshot times"):
        E.exp_dgec_probe(d_list=(50, 60), times=(0.0, 2.0), T=1.0, replicas=2)
