import itertools
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from fairfed.constraints import build_constraints
from fairfed.dataset import Dataset
from fairfed.fed_engine import RoundConfig, lagrangian
from fairfed.linear_model import LossSpec, ModelParams, empirical_risk, empirical_risk_grad
from fairfed.metrics import (
    OracleFailure,
    evaluate,
    gap,
    max_over_lambda,
    min_over_w,
    minimize_smooth,
)
from fairfed.pffl import PfflConfig, run

from conftest import random_split

SPEC = LossSpec(ridge_mu=0.1)


def eight_examples():
    # one feature, bias on; w = (1, 0) predicts 1 exactly when x >= 0
    X = np.array([[2.0], [-1.0], [0.5], [-3.0], [1.0], [-0.5], [4.0], [-2.0]])
    y = np.array([1, 0, 0, 0, 1, 1, 1, 0])
    a = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    return Dataset(X, y, a, 2)


def test_evaluate_hand_examples():
    ds = eight_examples()
    rep = evaluate(ModelParams(np.array([1.0, 0.0])), ds)
    # predictions: 1 0 1 0 | 1 0 1 0 ; mistakes at rows 2 and 5
    assert rep.error_rate == pytest.approx(2 / 8)
    assert rep.delta_dp == pytest.approx(0.0)        # both groups predict 1 half the time
    assert rep.delta_eo == pytest.approx(1.0 - 2 / 3)  # TPR 1/1 vs 2/3
    sp = lambda z: math.log1p(math.exp(z))  # noqa: E731  CE for label 0 at logit z
    g0 = np.mean([sp(-2.0), sp(-1.0), sp(0.5), sp(-3.0)])
    g1 = np.mean([sp(-1.0), sp(0.5), sp(-4.0), sp(-2.0)])
    np.testing.assert_allclose(rep.group_losses, [g0, g1], rtol=1e-12)
    assert rep.max_group_loss == pytest.approx(max(g0, g1))
    assert set(rep.as_dict()) >= {"error_rate", "group_losses", "delta_dp", "delta_eo"}


def test_constant_classifier_has_no_parity_gap():
    ds = eight_examples()
    rep = evaluate(ModelParams(np.array([0.0, 50.0])), ds)
    assert rep.delta_dp == 0.0 and rep.delta_eo == 0.0
    assert rep.error_rate == pytest.approx(4 / 8)


def test_zero_model_losses_are_log2():
    rep = evaluate(ModelParams(np.zeros(2)), eight_examples())
    np.testing.assert_allclose(rep.group_losses, math.log(2), rtol=1e-14)
    np.testing.assert_allclose(rep.group_label_losses, math.log(2), rtol=1e-14)


def test_parity_gaps_symmetric_under_group_swap(rng):
    ds = eight_examples()
    swapped = Dataset(ds.X, ds.y, 1 - ds.a, 2)
    for _ in range(10):
        m = ModelParams(rng.standard_normal(2))
        r1, r2 = evaluate(m, ds), evaluate(m, swapped)
        assert r1.delta_dp == pytest.approx(r2.delta_dp)
        assert r1.delta_eo == pytest.approx(r2.delta_eo)
        np.testing.assert_allclose(r1.group_losses, r2.group_losses[::-1])


def test_max_over_lambda_closed_form(rng):
    _ds, split = random_split(rng)
    w = np.zeros(4)
    F = empirical_risk(w, split, SPEC)
    # at w = 0 every group loss is log 2, so r = log 2 - zeta
    cs = build_constraints(split, "bgl", zeta=math.log(2) - 0.3)
    assert max_over_lambda(w, cs, split, 1.0, 2.0, SPEC) == pytest.approx(F + 0.6)
    cs = build_constraints(split, "bgl", zeta=1.0)
    assert max_over_lambda(w, cs, split, 1.0, 2.0, SPEC) == pytest.approx(F)


def test_max_over_lambda_matches_simplex_grid(rng):
    _ds, split = random_split(rng, A=2)
    cs = build_constraints(split, "bgl", zeta=0.3)
    B, beta = 3.0, 0.7
    for _ in range(5):
        w = rng.standard_normal(4)
        grid = np.linspace(0, B, 61)
        best = max(lagrangian(w, np.array([l0, l1]), split, cs, SPEC, beta)
                   for l0, l1 in itertools.product(grid, grid) if l0 + l1 <= B + 1e-12)
        assert max_over_lambda(w, cs, split, beta, B, SPEC) == pytest.approx(best, abs=1e-10)


def test_minimize_smooth_quadratic():
    fun = lambda x: 2.0 * (x[0] - 3.0) ** 2  # noqa: E731
    grad = lambda x: np.array([4.0 * (x[0] - 3.0)])  # noqa: E731
    res = minimize_smooth(fun, grad, np.array([0.0]), lipschitz=4.0, strong_convexity=4.0,
                          tol=1e-10)
    assert abs(res.w[0] - 3.0) <= 1e-8
    assert res.lower_bound <= res.value + 1e-15
    with pytest.raises(OracleFailure):
        minimize_smooth(fun, grad, np.array([0.0]), lipschitz=1e3, tol=1e-12, max_iter=5)


def test_zero_multipliers_give_the_unconstrained_minimum(rng):
    _ds, split = random_split(rng, K=3)
    cs = build_constraints(split, "bgl", zeta=0.2)
    ours = min_over_w(np.zeros(2), split, 1.0, cs, SPEC, tol=1e-9)
    ref = minimize(lambda w: empirical_risk(w, split, SPEC), np.zeros(4),
                   jac=lambda w: empirical_risk_grad(w, split, SPEC), method="L-BFGS-B",
                   options={"gtol": 1e-12, "ftol": 1e-15})
    assert ours.value == pytest.approx(ref.fun, abs=1e-10)
    assert ours.lower_bound <= ref.fun + 1e-12


def test_gap_is_nonnegative_after_training(rng):
    _ds, split = random_split(rng, K=3, n=90)
    cs = build_constraints(split, "bgl", zeta=0.4)
    cfg = PfflConfig(E=10, round=RoundConfig(T=5, eta_w=0.2), B=2.0, loss=SPEC)
    res = run(split, cs, cfg)
    est = gap(res.w_bar, res.lambda_bar(), split, cs, cfg.beta, cfg.B, SPEC, tol=1e-7)
    assert est.gap >= -est.oracle_tol
    assert est.upper >= est.lower - est.oracle_tol
