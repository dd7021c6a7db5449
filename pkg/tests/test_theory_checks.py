import json
from dataclasses import replace

import numpy as np

from fairfed.constraints import build_constraints
from fairfed.dual import softmax_with_slack
from fairfed.fed_engine import RoundConfig
from fairfed.linear_model import LossSpec
from fairfed.pffl import PfflConfig, run
from fairfed.theory_checks import (
    check_gate_bound,
    check_schedule,
    gd_equivalence_error,
    lambda_bar_from_thetas,
    verify_run,
)

from conftest import random_split

CFG = PfflConfig(E=8, round=RoundConfig(J=2, T=4, eta_w=0.1), B=2.0, nu=0.1,
                 loss=LossSpec(ridge_mu=0.1))


def test_lambda_bar_from_thetas_example():
    hist = np.array([[0.0, 0.0], [np.log(2), 0.0]])
    got = lambda_bar_from_thetas(hist, 3.0)
    want = (softmax_with_slack([0.0, 0.0], 3.0) + np.array([1.5, 0.75])) / 2
    np.testing.assert_allclose(got, want, rtol=1e-15)
    assert lambda_bar_from_thetas(np.zeros((0, 2)), 1.0).shape == (2,)


def test_feasible_run_passes_every_check(rng):
    _ds, split = random_split(rng, K=3, n=90)
    cs = build_constraints(split, "cbgl", zeta_y=(0.6, 0.6))
    res = run(split, cs, CFG)
    assert res.verdict == "feasible"
    rep = verify_run(res, split, cs, CFG, check_gap=True)
    assert rep.gate_bound.holds and rep.gate_bound.margin >= 0 and rep.gate_bound.applies
    assert rep.gate_bound.verdict_consistent
    assert rep.cbgl_implies_bgl.holds
    assert rep.gd_equivalence_maxerr <= 1e-12
    assert rep.gap_vs_nu is not None and not rep.errors
    assert json.loads(rep.to_json())["gate_bound"]["holds"] is True


def test_report_is_reproducible(rng):
    _ds, split = random_split(rng, K=3)
    cs = build_constraints(split, "bgl", zeta=0.3)
    res = run(split, cs, CFG)
    a = verify_run(res, split, cs, CFG, check_gap=True).to_json()
    b = verify_run(res, split, cs, CFG, check_gap=True).to_json()
    assert a == b


def test_missing_trace_keeps_gate_verdict(rng):
    _ds, split = random_split(rng, K=3)
    cs = build_constraints(split, "bgl", zeta=0.3)
    res = run(split, cs, CFG)
    stripped = replace(res, trace=[])
    full = verify_run(res, split, cs, CFG)
    part = verify_run(stripped, split, cs, CFG, check_gap=True)
    assert part.gate_bound == full.gate_bound
    assert "gap_vs_nu" in part.errors and part.gap_vs_nu is None
    assert not part.ok


def test_gate_bound_flags_inconsistent_verdict(rng):
    _ds, split = random_split(rng)
    cs = build_constraints(split, "bgl", zeta=0.0)
    w = np.zeros(4)   # r = log 2 everywhere, far above (M + 2 nu) / B for large B
    chk = check_gate_bound(w, "feasible", split, cs, replace(CFG, B=100.0))
    assert not chk.holds and not chk.verdict_consistent and chk.margin < 0


def test_schedule_check():
    rng = np.random.default_rng(3)
    _ds, split = random_split(rng)
    theory = replace(CFG, round=RoundConfig(schedule="theory", T=50))
    chk = check_schedule(split, theory)
    assert chk.nonincreasing and chk.holds
    big = replace(CFG, round=RoundConfig(eta_w=50.0, T=5))
    assert not check_schedule(split, big).holds


def test_gd_equivalence_for_every_kind(rng):
    _ds, split = random_split(rng, K=4)
    for cs in (build_constraints(split, "bgl", zeta=0.2),
               build_constraints(split, "cbgl", zeta_y=(0.2, 0.3)),
               build_constraints(split, "minmax")):
        lam = rng.random(cs.Z)
        assert gd_equivalence_error(split, cs, CFG, lam) <= 1e-12
