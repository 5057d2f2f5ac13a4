import math

import numpy as np
import pytest

from projective_sgd.distributions import gaussian, rademacher
from projective_sgd.dynamics import drift_h
from projective_sgd.mixture import centered, symmetric_two_class
from projective_sgd.models import ParameterState, make_logistic, make_null, make_phase_retrieval, make_quadratic
from projective_sgd.sgd import (SgdConfig, gaussian_init, mean_curve, one_step_drift_oracle, run_replicas,
                                run_summary_chain)
from projective_sgd.summary import compute_summary


def test_config_step_arithmetic():
    cfg = SgdConfig(c_lr=0.5, total_time=2.0)
    assert cfg.step_size(1000) * 1000 == 0.5
    assert cfg.n_steps(1000) == 4000
    assert cfg.stride(1000) == 10
    with pytest.raises(ValueError):
        SgdConfig(record_stride=0)


def test_regularization_only_recursion_is_exact():
    d, lam = 200, 0.5
    m = make_null(2, lam)
    spec = centered(d, gaussian())
    cfg = SgdConfig(c_lr=1.0, total_time=1.0, record_stride=7)
    init = gaussian_init(m, d, None, 0, 0)
    G0 = compute_summary(init, spec, m).G
    tr = run_replicas(m, spec, [init], cfg)[0]
    delta = 1.0 / d
    for n, step in enumerate(tr.steps):
        expected = (1 - 2 * delta * lam) ** (2 * step) * G0[:2, :2]
        assert np.allclose(tr.G[n][:2, :2], expected, atol=1e-10, rtol=0)
    assert np.all(np.diff(tr.steps) > 0)


def test_frozen_columns_bit_identical():
    d = 100
    m = make_phase_retrieval()
    spec = centered(d, rademacher())
    frozen = np.full((d, 1), 1 / math.sqrt(d))
    tr = run_replicas(m, spec, [gaussian_init(m, d, frozen, 1, 0)], SgdConfig(c_lr=0.1, total_time=0.5))[0]
    assert np.array_equal(tr.final_state.theta[:, 1:], frozen)
    assert np.all(np.isfinite(tr.G))


def test_replicas_are_deterministic_and_independent_of_batching():
    d = 80
    m = make_logistic(2)
    spec = symmetric_two_class(d, rademacher())
    cfg = SgdConfig(total_time=0.5, master_seed=9)
    inits = lambda r: gaussian_init(m, d, None, 9, r)
    a = run_replicas(m, spec, inits, cfg, [0, 1, 2])
    b = run_replicas(m, spec, inits, cfg, [0, 1, 2], batch_size=1)
    c = run_replicas(m, spec, inits, cfg, [2])
    for x, y in zip(a, b):
        assert np.array_equal(x.G, y.G)
    assert np.array_equal(a[2].G, c[0].G)
    assert not np.array_equal(a[0].G, a[1].G)


def test_r_exit_truncates_records():
    d = 50
    m = make_quadratic(-2.0)  # grows the norm
    cfg = SgdConfig(total_time=3.0, r_exit=4.0, record_stride=1)
    tr = run_replicas(m, centered(d, gaussian()), [gaussian_init(m, d, None, 0, 0)], cfg)[0]
    assert tr.exit_step_R is not None
    assert tr.steps[-1] == tr.exit_step_R


def test_snapshots_recorded():
    d = 40
    m = make_logistic(2)
    cfg = SgdConfig(total_time=1.0, snapshot_times=(0.0, 0.5))
    tr = run_replicas(m, symmetric_two_class(d, gaussian()), [gaussian_init(m, d, None, 0, 0)], cfg)[0]
    assert sorted(tr.snapshots) == [0.0, 0.5]


def test_summary_chain_matches_full_sgd_in_law():
    # the chain and the full simulation share no random numbers; compare means over replicas
    d, R = 300, 60
    m = make_logistic(2)
    spec = symmetric_two_class(d, gaussian())
    cfg = SgdConfig(total_time=1.0, master_seed=3)
    inits = [gaussian_init(m, d, None, 3, r) for r in range(R)]
    full = run_replicas(m, spec, inits, cfg)
    chain = run_summary_chain(m, spec, [compute_summary(s, spec, m) for s in inits], cfg)
    U_full = np.array([t.U[-1] for t in full])
    U_chain = np.array([t.U[-1] for t in chain])
    se = np.sqrt(U_full.var(axis=0) / R + U_chain.var(axis=0) / R)
    assert np.all(np.abs(U_full.mean(0) - U_chain.mean(0)) <= 4 * se + 1e-9)


def test_oracle_agrees_with_finite_d_gaussian_drift():
    d = 400
    m = make_logistic(2)
    spec = symmetric_two_class(d, gaussian())
    st = gaussian_init(m, d, None, 0, 0)
    u = compute_summary(st, spec, m)
    est = one_step_drift_oracle(m, spec, st, 1.0, 100_000, seed=1)
    h = drift_h(u, m, spec.weights, spec.labels, 1.0, d=d)
    assert np.all(np.abs(est.mean - h) <= 4 * est.se + 1e-12)


def test_oracle_samplers_agree():
    d = 400
    m = make_phase_retrieval()
    spec = centered(d, rademacher())
    st = ParameterState(np.stack([np.full(d, 0.8 / math.sqrt(d)), np.full(d, 1 / math.sqrt(d))], 1), np.zeros(0))
    blk = one_step_drift_oracle(m, spec, st, 1.0, 100_000, seed=2, sampler="block")
    dense = one_step_drift_oracle(m, spec, st, 1.0, 50_000, seed=3, sampler="dense")
    se = np.hypot(blk.se, dense.se)
    assert blk.sampler == "block" and dense.sampler == "dense"
    assert np.all(np.abs(blk.mean - dense.mean) <= 4 * se)


def test_mean_curve():
    d = 40
    m = make_logistic(2)
    cfg = SgdConfig(total_time=0.5)
    trajs = run_replicas(m, symmetric_two_class(d, gaussian()), lambda r: gaussian_init(m, d, None, 0, r), cfg,
                         [0, 1])
    c = mean_curve(trajs)
    assert np.allclose(c.values, 0.5 * (trajs[0].U + trajs[1].U))


def test_worker_processes_give_identical_replicas():
    d = 60
    m = make_logistic(2)
    spec = symmetric_two_class(d, rademacher())
    cfg = SgdConfig(total_time=0.3, master_seed=5)
    inits = lambda r: gaussian_init(m, d, None, 5, r)  # noqa: E731
    serial = run_replicas(m, spec, inits, cfg, [0, 1, 2, 3], batch_size=1)
    forked = run_replicas(m, spec, inits, cfg, [0, 1, 2, 3], batch_size=1, n_jobs=2)
    for a, b in zip(serial, forked):
        assert a.replica == b.replica and np.array_equal(a.G, b.G)
