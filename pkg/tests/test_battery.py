import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from projective_sgd.battery import (RidgeFunction, default_battery, exact_expectation, exact_gaps, mc_gaps,
                                    sum_char_fn, third_moment_probe)
from projective_sgd.distributions import NoiseDistribution, gaussian, rademacher
from projective_sgd.mixture import MixtureSpec, centered, symmetric_two_class


def _fd_sup(f: RidgeFunction, k: int) -> float:
    x = np.linspace(-15, 15, 300_001)
    y = f.g(x)
    for _ in range(k):
        y = np.gradient(y, x)
    return float(np.max(np.abs(y[50:-50])))


@pytest.mark.parametrize("f", [RidgeFunction("bump", (1.0,), width=1.5), RidgeFunction("bump", (1.0,), width=0.7),
                               RidgeFunction("tanh_poly", (1.0,), poly=(0.0, -0.5, 0.0, 1.0)),
                               RidgeFunction("tanh_poly", (1.0,), poly=(0.0, 0.0, 1.0))], ids=lambda f: f.label)
def test_derivative_sups_match_finite_differences(f):
    sups = f.derivative_sups()
    for k in range(4):
        assert sups[k] == pytest.approx(_fd_sup(f, k), rel=2e-3)


def test_default_battery_is_normalized():
    bat = default_battery(2)
    assert len(bat) == 56
    assert len({f.label for f in bat}) == len(bat)
    for f in bat:
        assert f.c3_norm() == pytest.approx(1.0, rel=1e-12)


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=8), st.floats(-3, 3))
def test_rademacher_cosine_product_formula(a, b):
    coef = np.array(a)
    f = RidgeFunction("cos", (1.0,), offset=b)
    spec = MixtureSpec(np.zeros((1, len(a))), [1.0], [0], rademacher())
    val = exact_expectation(f, coef[:, None], spec)
    assert val == pytest.approx(math.cos(b) * np.prod(np.cos(coef)), abs=1e-12)


def test_gaussian_bump_closed_form():
    # E exp(-(sZ + m)^2 / 2w^2) for Z ~ N(0, 1)
    d, s, w, m = 30, 0.9, 1.5, 0.4
    theta = np.full((d, 1), s / math.sqrt(d))
    spec = MixtureSpec(np.full((1, d), m / s / math.sqrt(d)), [1.0], [0], gaussian())
    f = RidgeFunction("bump", (1.0,), width=w)
    exact = w / math.sqrt(w * w + s * s) * math.exp(-m * m / (2 * (w * w + s * s)))
    assert exact_expectation(f, theta, spec) == pytest.approx(exact, rel=1e-10)


def test_sum_char_fn_matches_single_law():
    law = NoiseDistribution("centered_exponential")
    t = np.array([0.3, 1.1])
    assert np.allclose(sum_char_fn(law, np.array([1.0, 1.0]), t), law.char_fn(t) ** 2)


def test_monte_carlo_gaps_match_exact():
    d = 60
    spec = symmetric_two_class(d, NoiseDistribution("centered_exponential"))
    rng = np.random.default_rng(0)
    theta = rng.standard_normal((d, 2)) / math.sqrt(d)
    theta[0, 0] = 0.8  # a spike makes the gap visible
    bat = [f for f in default_battery(2) if f.exact][:12]
    ex = exact_gaps(bat, theta, spec, gaussian())
    mc = mc_gaps(bat, theta, spec, gaussian(), 200_000, seed=1)
    assert np.all(np.abs(mc.gap - ex) <= 4 * mc.se)
    self_cmp = mc_gaps(bat, theta, spec.with_noise(gaussian()), gaussian(), 50_000, seed=2, coupled=False)
    assert self_cmp.max_z() < 4.5


def test_third_moment_probe_is_odd():
    f = third_moment_probe()
    theta = np.full((10, 1), 1 / math.sqrt(10))
    assert exact_expectation(f, theta, centered(10, gaussian())) == pytest.approx(0.0, abs=1e-15)
    assert abs(exact_expectation(f, theta, centered(10, NoiseDistribution("centered_exponential")))) > 1e-3
