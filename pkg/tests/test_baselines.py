import numpy as np
import pytest

from fairfed.baselines import (
    effective_config,
    group_example_weights,
    local_constraint_sets,
    run_baseline,
    run_fedavg,
    run_group_weighted,
    run_local_bgl,
)
from fairfed.constraints import build_constraints
from fairfed.dataset import Dataset, split_from_assignment
from fairfed.fed_engine import RoundConfig
from fairfed.linear_model import ConfigError, LossSpec
from fairfed.pffl import PfflConfig, minmax_config, run

from conftest import random_split

CFG = PfflConfig(E=5, round=RoundConfig(J=2, T=3, eta_w=0.2), B=2.0, nu=0.1,
                 loss=LossSpec(ridge_mu=0.05))


def test_frequency_group_weights_reproduce_fedavg(rng):
    _ds, split = random_split(rng, K=3, n=90)
    freq = split.group_counts / split.num_examples
    for w in group_example_weights(split, freq):
        np.testing.assert_allclose(w, 1.0, rtol=1e-15)
    a = run_fedavg(split, CFG)
    b = run_group_weighted(split, CFG, freq)
    assert np.max(np.abs(a.w_bar.w - b.w_bar.w)) <= 1e-12


def test_uniform_group_weights_balance_group_mass(rng):
    _ds, split = random_split(rng, K=3, n=90)
    ws = group_example_weights(split)
    mass = np.zeros(2)
    for s, w in zip(split.shards, ws):
        mass += np.bincount(s.a, weights=w, minlength=2)
    np.testing.assert_allclose(mass, split.num_examples / 2)
    with pytest.raises(ConfigError):
        group_example_weights(split, [0.7, 0.7])


def test_local_bgl_on_one_client_matches_global_method(rng):
    ds, _ = random_split(rng)
    split = split_from_assignment(ds, [np.arange(len(ds))])
    a = run_local_bgl(split, CFG, zeta=0.3)
    b = run(split, build_constraints(split, "bgl", zeta=0.3), CFG)
    np.testing.assert_allclose(a.iterates, b.iterates, atol=1e-12)
    assert a.verdict == b.verdict


def test_local_bgl_uses_only_local_groups():
    X = np.arange(8, dtype=float)[:, None]
    ds = Dataset(X, [0, 1, 0, 1, 0, 1, 0, 1], [0, 0, 0, 0, 1, 1, 1, 1], 2)
    split = split_from_assignment(ds, [np.arange(3), np.arange(5, 8), np.array([3, 4])])
    sets = local_constraint_sets(split, 0.2)
    assert [cs.Z for _, cs in sets] == [1, 1, 2]
    assert list(sets[0][0].group_counts) == [3, 0]
    res = run_local_bgl(split, CFG, zeta=0.2)
    # the server never holds multipliers: the trace carries no global constraint vector
    assert all(rec.r.size == 0 for rec in res.trace)


def test_fedminmax_preset_matches_direct_call(rng):
    _ds, split = random_split(rng, K=3)
    got = run_baseline("fedminmax", split, CFG)
    pre = minmax_config(E=CFG.E, round=CFG.round, loss=CFG.loss, nu=CFG.nu)
    want = run(split, build_constraints(split, "minmax"), pre)
    np.testing.assert_array_equal(got.w_bar.w, want.w_bar.w)
    assert got.verdict == "skipped"
    for rec in got.trace:
        assert rec.lam.sum() <= 1.0 + 1e-12


def test_effective_config_presets():
    assert effective_config("fedavg", CFG).beta == 1.0
    assert not effective_config("group_weighted", CFG).gate
    mm = effective_config("fedminmax", CFG)
    assert (mm.beta, mm.B, mm.gate) == (0.0, 1.0, False)
    assert effective_config("pffl", CFG) is CFG
    with pytest.raises(ConfigError):
        effective_config("qffl", CFG)
    with pytest.raises(ConfigError):
        run_baseline("local-bgl", None, CFG)
