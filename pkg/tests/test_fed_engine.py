from fractions import Fraction

import numpy as np
import pytest

from fairfed.constraints import build_constraints, eval_client, eval_global, grad_client
from fairfed.dataset import ClientShard, FederatedSplit
from fairfed.fed_engine import (
    DivergedClientError,
    RoundConfig,
    ScheduleState,
    aggregate,
    lagrangian,
    lagrangian_grad,
    local_update,
    make_schedule,
    run_epoch,
    step_size,
)
from fairfed.linear_model import ConfigError, LossSpec, Smoothness, client_gradient

from conftest import random_split

SPEC = LossSpec(ridge_mu=0.1)


def test_theory_step_size_example():
    s = ScheduleState.theory(Smoothness(mu=1.0, L=2.0, kappa=2.0), J=1, beta=1.0, B=1.0)
    assert s.gamma == 16
    assert step_size(s, RoundConfig(schedule="theory")) == pytest.approx(0.0625)


def test_schedule_monotone_and_constant_mode():
    s = ScheduleState.theory(Smoothness(0.5, 3.0, 6.0), J=4, beta=1.0, B=2.0)
    cfg = RoundConfig(schedule="theory")
    etas = []
    for t in range(1000):
        s.t = t
        etas.append(step_size(s, cfg))
    closed = 2.0 / ((1.0 + 2.0) * 0.5 * (48.0 + np.arange(1000)))
    np.testing.assert_allclose(etas, closed, rtol=1e-15)
    assert np.all(np.diff(etas) < 0)
    const = RoundConfig(eta_w=0.3)
    assert {step_size(ScheduleState(t=t), const) for t in (0, 10, 10**6)} == {0.3}


def test_round_config_validation():
    with pytest.raises(ConfigError):
        RoundConfig(J=0)
    with pytest.raises(ConfigError):
        RoundConfig(schedule="cosine")
    with pytest.raises(ConfigError):
        RoundConfig(eta_w=0.0)


def test_theory_schedule_needs_strong_convexity(rng):
    _ds, split = random_split(rng)
    with pytest.raises(ConfigError):
        make_schedule(RoundConfig(schedule="theory"), split, LossSpec(), 1.0, 1.0)


def test_one_local_step_unrolls_exactly(rng):
    _ds, split = random_split(rng, K=3)
    cs = build_constraints(split, "bgl", zeta=0.3)
    shard = split.shards[1]
    w = rng.standard_normal(4)
    lam = np.array([0.2, 0.5])
    eta, beta, K = 0.1, 0.7, 3
    delta, r_k = local_update(shard, w, lam, 1, eta, beta, K, cs, SPEC)
    want = -eta * (beta * client_gradient(w, shard, SPEC) + K * grad_client(cs, shard, w, lam, SPEC))
    np.testing.assert_allclose(delta, want, rtol=1e-14, atol=1e-16)
    np.testing.assert_allclose(r_k, eval_client(cs, shard, w + delta, SPEC), rtol=1e-14)


def test_zero_multipliers_reduce_to_local_erm(rng):
    _ds, split = random_split(rng, K=2)
    cs = build_constraints(split, "bgl", zeta=0.3)
    shard = split.shards[0]
    w = rng.standard_normal(4)
    d, _ = local_update(shard, w, np.zeros(2), 3, 0.2, 1.0, 2, cs, SPEC)
    v = w.copy()
    for _ in range(3):
        v = v - 0.2 * client_gradient(v, shard, SPEC)
    np.testing.assert_allclose(w + d, v, rtol=1e-14)


def test_diverged_client_reports_id_and_step():
    X = np.array([[1e200, 1e200]])
    shard = ClientShard(X, np.array([1]), np.array([0]), np.array([0]))
    split = FederatedSplit((shard,), 1, np.array([1]), np.array([[0, 1]]))
    cs = build_constraints(split, "none")
    with pytest.raises(DivergedClientError) as info:
        local_update(shard, np.array([1e200, 1e200, 0.0]), np.zeros(0), 3, 1e200, 1.0, 1,
                     cs, LossSpec(ridge_mu=1.0), client_id=7)
    assert info.value.client_id == 7 and info.value.step == 0


def test_aggregate_examples(rng):
    w = rng.standard_normal(3)
    d = rng.standard_normal(3)
    np.testing.assert_allclose(aggregate(w, [d, d, d]), w + d, rtol=1e-15)
    np.testing.assert_array_equal(aggregate(w, [d, -d]), w)
    deltas = [rng.standard_normal(3) * 10.0 ** rng.integers(-3, 3) for _ in range(7)]
    got = aggregate(w, deltas)
    for j in range(3):
        exact = Fraction(w[j]) + sum(Fraction(x[j]) for x in deltas) / 7
        assert abs(got[j] - float(exact)) <= 1e-14 * max(1.0, abs(float(exact)))
    with pytest.raises(ValueError):
        aggregate(w, [np.array([np.nan, 0, 0])])


def test_gd_equivalence_single_client(rng):
    ds, split = random_split(rng, K=3)
    merged = split.merged()
    cs = build_constraints(merged, "bgl", zeta=0.2)
    lam = np.array([0.4, 0.3])
    eta = 0.2
    ep = run_epoch(merged, np.zeros(4), lam, RoundConfig(J=1, T=50, eta_w=eta), ScheduleState(),
                   cs, SPEC, beta=1.0)
    w = np.zeros(4)
    for t in range(50):
        w = w - eta * lagrangian_grad(w, lam, merged, cs, SPEC, 1.0)
        assert np.max(np.abs(ep.iterates[t] - w)) <= 1e-12


def test_scaled_client_directions_average_to_full_gradient(rng):
    _ds, split = random_split(rng, K=5, n=100)
    cs = build_constraints(split, "cbgl", zeta_y=(0.3, 0.4))
    beta = 0.8
    for _ in range(10):
        w = rng.standard_normal(4)
        lam = rng.random(cs.Z)
        avg = sum(beta * client_gradient(w, s, SPEC) + split.K * grad_client(cs, s, w, lam, SPEC)
                  for s in split.shards) / split.K
        assert np.max(np.abs(avg - lagrangian_grad(w, lam, split, cs, SPEC, beta))) <= 1e-10


def test_run_epoch_contract_and_determinism(rng):
    _ds, split = random_split(rng, K=3)
    cs = build_constraints(split, "bgl", zeta=0.3)
    cfg = RoundConfig(J=2, T=7, eta_w=0.1)
    lam = np.array([0.1, 0.6])
    s1, s2 = ScheduleState(), ScheduleState()
    a = run_epoch(split, np.zeros(4), lam, cfg, s1, cs, SPEC, 1.0)
    b = run_epoch(split, np.zeros(4), lam, cfg, s2, cs, SPEC, 1.0)
    assert a.iterates.shape == (7, 4) and np.all(np.isfinite(a.iterates))
    assert a.iterates.tobytes() == b.iterates.tobytes()
    assert s1.t == 7
    np.testing.assert_array_equal(a.r_epoch, eval_global(cs, split, a.iterates[-1], SPEC))


def test_minibatch_mode_is_seeded(rng):
    _ds, split = random_split(rng, K=2, n=80)
    cs = build_constraints(split, "bgl", zeta=0.3)
    cfg = RoundConfig(J=2, T=5, eta_w=0.1, batch_size=8)
    run = lambda seed: run_epoch(split, np.zeros(4), np.array([0.2, 0.2]), cfg,  # noqa: E731
                                 ScheduleState(), cs, SPEC, 1.0, np.random.default_rng(seed))
    assert run(1).iterates.tobytes() == run(1).iterates.tobytes()
    assert run(1).iterates.tobytes() != run(2).iterates.tobytes()


def test_monotone_descent_under_theory_schedule(rng):
    _ds, split = random_split(rng, K=4, n=120)
    cs = build_constraints(split, "bgl", zeta=0.3)
    lam = np.array([0.3, 0.5])
    B = 1.0
    cfg = RoundConfig(J=1, T=300, schedule="theory")
    sched = make_schedule(cfg, split, SPEC, 1.0, B)
    ep = run_epoch(split, 2 * rng.standard_normal(4), lam, cfg, sched, cs, SPEC, 1.0)
    G = [lagrangian(w, lam, split, cs, SPEC, 1.0) for w in ep.iterates]
    start = int(np.ceil(sched.gamma)) if sched.gamma < 300 else 0
    assert np.all(np.diff(G[start:]) <= 1e-10)


def test_detailed_rows(rng):
    _ds, split = random_split(rng, K=2)
    cs = build_constraints(split, "bgl", zeta=0.3)
    ep = run_epoch(split, np.zeros(4), np.array([0.1, 0.1]), RoundConfig(T=3), ScheduleState(),
                   cs, SPEC, 1.0, epoch=4, detailed=True)
    assert [r["round"] for r in ep.rows] == [0, 1, 2]
    assert set(ep.rows[0]) == {"epoch", "round", "global_step", "eta", "G_value", "grad_norm",
                               "r_a0", "r_a1"}
