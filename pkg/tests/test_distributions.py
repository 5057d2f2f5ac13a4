import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from projective_sgd.distributions import (KINDS, NoiseDistribution, parse_distribution, sample_iid, two_point,
                                          two_point_with_m4)

LAWS = [NoiseDistribution(k) for k in KINDS if k != "two_point"] + [two_point(0.3), two_point(0.5)]
SCIPY = {
    "standard_gaussian": stats.norm(),
    "uniform_scaled": stats.uniform(-math.sqrt(3), 2 * math.sqrt(3)),
    "centered_exponential": stats.expon(loc=-1.0),
}


@pytest.mark.parametrize("law", LAWS, ids=lambda x: x.name)
def test_standardized(law):
    assert law.moment(1) == pytest.approx(0.0, abs=1e-14)
    assert law.moment(2) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("kind", sorted(SCIPY))
def test_moments_match_scipy(kind):
    law = NoiseDistribution(kind)
    ref = SCIPY[kind]
    for n in range(1, 7):
        assert law.moment(n) == pytest.approx(ref.expect(lambda x: x**n), rel=1e-7, abs=1e-9)


@pytest.mark.parametrize("law", LAWS, ids=lambda x: x.name)
def test_empirical_m3_m4_within_5_se(law):
    x = sample_iid(law, 10**6, seed=7)
    for k, exact in ((3, law.m3), (4, law.m4)):
        se = np.std(x**k) / math.sqrt(x.size)
        assert abs(np.mean(x**k) - exact) <= 5 * se + 1e-12


@pytest.mark.parametrize("law", LAWS, ids=lambda x: x.name)
def test_char_fn_matches_numeric_transform(law):
    t = np.array([0.0, 0.3, 1.0, 2.5])
    phi = law.char_fn(t)
    if law.kind in SCIPY:
        ref = SCIPY[law.kind]
        lo, hi = ref.support()
        lo, hi = max(lo, -40), min(hi, 40)
        num = [integrate.quad(lambda x: math.cos(s * x) * ref.pdf(x), lo, hi, limit=400)[0]
               + 1j * integrate.quad(lambda x: math.sin(s * x) * ref.pdf(x), lo, hi, limit=400)[0] for s in t]
    else:
        atoms, probs = law.ppf(np.array([0.0, 1.0 - 1e-12])), np.array([0.5, 0.5])
        if law.kind == "two_point":
            probs = np.array([1.0 - law.p, law.p])
        num = [np.sum(probs * np.exp(1j * s * atoms)) for s in t]
    assert np.allclose(phi, num, atol=1e-8)


@given(st.floats(0.02, 0.98))
def test_two_point_standardized_for_any_p(p):
    law = two_point(p)
    assert law.moment(1) == pytest.approx(0.0, abs=1e-12)
    assert law.moment(2) == pytest.approx(1.0, rel=1e-12)
    # m4 = m3^2 + 1 holds for every standardized two-point law
    assert law.m4 == pytest.approx(law.m3**2 + 1.0, rel=1e-10)


@given(st.floats(1.0, 50.0))
def test_two_point_with_m4_hits_target(m4):
    assert two_point_with_m4(m4).m4 == pytest.approx(m4, rel=1e-9)


@given(st.floats(1e-6, 1 - 1e-6))
def test_ppf_coupling_is_monotone(u):
    for law in LAWS:
        a, b = law.ppf(np.array([u * 0.5, u]))
        assert a <= b


def test_sum_sampler_matches_moments():
    rng = np.random.default_rng(0)
    for law in (NoiseDistribution("rademacher"), NoiseDistribution("centered_exponential"), two_point(0.2)):
        s = law.sample_sum(50, 200_000, rng)
        assert abs(s.mean()) < 5 * math.sqrt(50 / 200_000)
        assert s.var() == pytest.approx(50, rel=0.02)
        # third cumulant is additive
        assert np.mean(s**3) == pytest.approx(50 * law.m3, abs=5 * np.std(s**3) / math.sqrt(s.size) + 1e-9)


def test_parse_and_reject():
    assert parse_distribution("gaussian").kind == "standard_gaussian"
    assert parse_distribution("two_point(0.25)").p == 0.25
    with pytest.raises(ValueError):
        parse_distribution("cauchy")
    with pytest.raises(ValueError):
        NoiseDistribution("two_point", 1.5)


def test_sample_iid_reproducible():
    law = NoiseDistribution("uniform_scaled")
    assert np.array_equal(sample_iid(law, 100, 4), sample_iid(law, 100, 4))
