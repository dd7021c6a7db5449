import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairfed.dataset import ClientShard
from fairfed.linear_model import (
    EPS,
    ConfigError,
    LossSpec,
    ModelParams,
    client_gradient,
    client_objective,
    empirical_risk,
    empirical_risk_grad,
    grad_loss,
    loss,
    predict_prob,
    smoothness_constants,
)

from conftest import random_split

mpmath.mp.dps = 50


def mp_loss(w, x, y, mu, bias=True):
    """Cross-entropy with the same clamp, evaluated in 50-digit arithmetic."""
    xd = list(x) + ([1.0] if bias else [])
    z = mpmath.fsum(mpmath.mpf(a) * mpmath.mpf(b) for a, b in zip(w, xd))
    sig = 1 / (1 + mpmath.exp(-z))
    sig = min(max(sig, mpmath.mpf(EPS)), 1 - mpmath.mpf(EPS))
    ce = -(y * mpmath.log(sig) + (1 - y) * mpmath.log(1 - sig))
    return ce + mpmath.mpf(mu) / 2 * mpmath.fsum(mpmath.mpf(v) ** 2 for v in w)


def test_predict_prob_examples():
    m0 = ModelParams(np.zeros(3))
    assert predict_prob(m0, np.array([4.0, -2.0])) == 0.5
    m = ModelParams(np.array([math.log(3.0)]), bias=False)
    assert predict_prob(m, np.array([1.0])) == pytest.approx(0.75, abs=1e-15)
    ps = [predict_prob(m, np.array([t])) for t in np.linspace(-3, 3, 13)]
    assert np.all(np.diff(ps) > 0)


def test_loss_at_zero_is_log2():
    m = ModelParams(np.zeros(3))
    assert loss(m, np.array([1.0, 2.0]), 1, LossSpec(ridge_mu=0.3)) == pytest.approx(math.log(2))


def test_confident_prediction_hits_clamp_floor():
    m = ModelParams(np.array([100.0]), bias=False)
    val = loss(m, np.array([1.0]), 1, LossSpec())
    assert 0 < val <= 1.01 * EPS


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_loss_matches_extended_precision(data):
    p = data.draw(st.integers(1, 5))
    w = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=p + 1, max_size=p + 1)))
    x = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=p, max_size=p)))
    y = data.draw(st.integers(0, 1))
    mu = data.draw(st.floats(0, 1))
    got = loss(ModelParams(w), x, y, LossSpec(ridge_mu=mu))
    want = float(mp_loss(w, x, y, mu))
    assert got == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_grad_loss_examples():
    spec = LossSpec(ridge_mu=0.2)
    x = np.array([1.5, -2.0])
    for y in (0, 1):
        np.testing.assert_allclose(grad_loss(ModelParams(np.zeros(3)), x, y, spec),
                                   (0.5 - y) * np.append(x, 1.0))
    # y equal to the predicted probability leaves only the ridge term
    w = np.array([0.0, 0.0, 0.0])
    m = ModelParams(w)
    np.testing.assert_allclose(grad_loss(m, x, predict_prob(m, x), spec), spec.ridge_mu * w)


def central_difference(f, w, h=1e-6):
    g = np.zeros_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def test_grad_loss_finite_differences():
    rng = np.random.default_rng(0)
    spec = LossSpec(ridge_mu=0.1)
    worst = 0.0
    for _ in range(100):
        w = rng.standard_normal(4)
        x = rng.standard_normal(3)
        y = int(rng.integers(0, 2))
        g = grad_loss(ModelParams(w), x, y, spec)
        fd = central_difference(lambda v: loss(ModelParams(v), x, y, spec), w)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-8))
    assert worst <= 1e-6


def test_smoothness_constants_examples():
    X = np.array([[2.0, 0.0], [0.0, 2.0], [np.sqrt(2), np.sqrt(2)]])
    shard = ClientShard(X, np.array([0, 1, 0]), np.array([0, 1, 0]), np.arange(3))
    sm = smoothness_constants([shard], LossSpec(ridge_mu=1.0, bias=False))
    assert sm.L == pytest.approx(2.0) and sm.kappa == pytest.approx(2.0)
    big = smoothness_constants([shard], LossSpec(ridge_mu=1e6, bias=False))
    assert 1 < big.kappa < 1 + 1e-5
    c = 3.0
    scaled = ClientShard(c * X, shard.y, shard.a, shard.indices)
    s1 = smoothness_constants([shard], LossSpec(ridge_mu=0.5, bias=False))
    s2 = smoothness_constants([scaled], LossSpec(ridge_mu=0.5, bias=False))
    assert s2.L - s2.mu == pytest.approx(c * c * (s1.L - s1.mu))
    with pytest.raises(ConfigError):
        smoothness_constants([shard], LossSpec(ridge_mu=0.0))


def test_risk_gradients_finite_differences(rng):
    _ds, split = random_split(rng, K=3)
    spec = LossSpec(ridge_mu=0.05)
    for _ in range(20):
        w = rng.standard_normal(4)
        fd = central_difference(lambda v: empirical_risk(v, split, spec), w)
        g = empirical_risk_grad(w, split, spec)
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)
        s = split.shards[0]
        fd = central_difference(lambda v: client_objective(v, s, spec), w)
        g = client_gradient(w, s, spec)
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), t=st.floats(0.01, 0.99))
def test_convexity_and_strong_convexity(seed, t):
    rng = np.random.default_rng(seed)
    _ds, split = random_split(rng, K=2)
    spec = LossSpec(ridge_mu=0.3)
    w1, w2 = 2 * rng.standard_normal(4), 2 * rng.standard_normal(4)
    F = lambda v: empirical_risk(v, split, spec)  # noqa: E731
    assert F(t * w1 + (1 - t) * w2) <= t * F(w1) + (1 - t) * F(w2) + 1e-10
    d = w2 - w1
    lower = F(w1) + empirical_risk_grad(w1, split, spec) @ d + 0.5 * spec.ridge_mu * d @ d
    assert F(w2) >= lower - 1e-10


def test_model_json_roundtrip(tmp_path):
    m = ModelParams(np.array([0.1, -2.5, 1 / 3]), bias=True, mu=0.01)
    m.save(tmp_path / "m.json")
    back = ModelParams.load(tmp_path / "m.json")
    assert back.w.tobytes() == m.w.tobytes() and back.bias and back.mu == 0.01
    assert set(__import__("json").loads(m.to_json())) == {"w", "bias", "mu"}
    with pytest.raises(ValueError):
        ModelParams(np.array([np.nan]))
