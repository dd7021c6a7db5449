"""Logistic predictor, clamped cross-entropy and analytic gradients.

Weights act on the design matrix, i.e. the raw features with a trailing
column of ones when ``bias`` is enabled. The per-example training loss is

    l(w; x, y) = CE(sigmoid(w.x), y) + (mu / 2) ||w||^2

so every client objective is ``mu``-strongly convex. Fairness constraints use
the cross-entropy part only (:func:`cross_entropy`).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.special import expit

EPS = 1e-12
_LOSS_MAX = -math.log(EPS)
_LOSS_MIN = -math.log1p(-EPS)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    kind: str = "logistic"
    ridge_mu: float = 0.0
    bias: bool = True

    def __post_init__(self) -> None:
        if self.kind != "logistic":
            raise ConfigError(f"unsupported loss kind {self.kind!r}")
        if not self.ridge_mu >= 0:
            raise ConfigError("ridge_mu must be >= 0")


@dataclass(frozen=True, eq=False)
class ModelParams:
    w: np.ndarray
    bias: bool = True
    mu: float = 0.0

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError("w must be a vector")
        if not np.all(np.isfinite(w)):
            raise ValueError("model weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def zeros(cls, num_features: int, spec: LossSpec | None = None) -> ModelParams:
        spec = spec or LossSpec()
        return cls(np.zeros(num_features + int(spec.bias)), spec.bias, spec.ridge_mu)

    @property
    def num_features(self) -> int:
        return self.w.size - int(self.bias)

    def to_json(self) -> str:
        return json.dumps({"w": self.w.tolist(), "bias": self.bias, "mu": self.mu})

    @classmethod
    def from_json(cls, text: str) -> ModelParams:
        d = json.loads(text)
        return cls(np.asarray(d["w"], dtype=np.float64), bool(d["bias"]), float(d["mu"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> ModelParams:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def design(X: np.ndarray, bias: bool) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if not bias:
        return X
    if X.ndim == 1:
        return np.append(X, 1.0)
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _check_dim(m: ModelParams, x: np.ndarray) -> None:
    if x.shape[-1] != m.num_features:
        raise ValueError(f"expected {m.num_features} features, got {x.shape[-1]}")


def predict_prob(m: ModelParams, x: np.ndarray) -> np.ndarray | float:
    """``sigmoid(w . x)`` for one example or a row-stacked batch."""
    x = np.asarray(x, dtype=np.float64)
    _check_dim(m, x)
    out = expit(design(x, m.bias) @ m.w)
    return float(out) if out.ndim == 0 else out


# -- array-level kernels (w acts on an already-built design matrix) ---------

def cross_entropy(w: np.ndarray, Xd: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-example cross-entropy with the probability clamped to [EPS, 1-EPS].

    Evaluated as ``softplus(-s z)`` with ``s = 2y - 1`` which is exact for
    moderate margins and then clipped to the clamp's range.
    """
    z = Xd @ w
    s = 2.0 * y - 1.0
    return np.clip(np.logaddexp(0.0, -s * z), _LOSS_MIN, _LOSS_MAX)


def residual(w: np.ndarray, Xd: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``sigmoid(w . x_i) - y_i``; the cross-entropy gradient is ``residual * x``."""
    return expit(Xd @ w) - y


def ridge(w: np.ndarray, mu: float) -> float:
    return 0.5 * mu * float(w @ w)


# -- public per-example API -------------------------------------------------

def loss(m: ModelParams, x: np.ndarray, y, spec: LossSpec) -> np.ndarray | float:
    """Regularised loss of one example (or one value per row of a batch)."""
    x = np.asarray(x, dtype=np.float64)
    _check_dim(m, x)
    Xd = np.atleast_2d(design(x, m.bias))
    out = cross_entropy(m.w, Xd, np.atleast_1d(y)) + ridge(m.w, spec.ridge_mu)
    return float(out[0]) if x.ndim == 1 else out


def grad_loss(m: ModelParams, x: np.ndarray, y, spec: LossSpec) -> np.ndarray:
    """``(sigmoid(w . x) - y) x + mu w`` for a single example."""
    x = np.asarray(x, dtype=np.float64)
    _check_dim(m, x)
    xd = design(x, m.bias)
    return (float(expit(xd @ m.w)) - float(y)) * xd + spec.ridge_mu * m.w


@dataclass(frozen=True)
class Smoothness:
    mu: float
    L: float
    kappa: float


def smoothness_constants(shards: Iterable, spec: LossSpec) -> Smoothness:
    """Strong convexity ``mu``, smoothness ``L`` and ``kappa = L / mu``.

    The logistic Hessian is ``sigma'(z) x x^T`` with ``sigma' <= 1/4``, so
    ``L = mu + max_i ||x_i||^2 / 4`` over every client (bias column included).
    """
    if not spec.ridge_mu > 0:
        raise ConfigError("the theory schedule needs ridge_mu > 0 (strong convexity)")
    sq = 0.0
    for shard in shards:
        Xd = shard.design(spec.bias) if hasattr(shard, "design") else design(shard, spec.bias)
        sq = max(sq, float(np.max(np.einsum("ij,ij->i", Xd, Xd))))
    L = spec.ridge_mu + sq / 4.0
    return Smoothness(spec.ridge_mu, L, L / spec.ridge_mu)


def client_objective(w: np.ndarray, shard, spec: LossSpec,
                     weights: np.ndarray | None = None) -> float:
    """Local empirical risk ``f_k(w)`` (mean regularised loss on the shard)."""
    ce = cross_entropy(w, shard.design(spec.bias), shard.y)
    if weights is not None:
        ce = ce * weights
    return float(ce.mean()) + ridge(w, spec.ridge_mu)


def client_gradient(w: np.ndarray, shard, spec: LossSpec,
                    weights: np.ndarray | None = None) -> np.ndarray:
    Xd = shard.design(spec.bias)
    res = residual(w, Xd, shard.y)
    if weights is not None:
        res = res * weights
    return Xd.T @ res / Xd.shape[0] + spec.ridge_mu * w


def empirical_risk(w: np.ndarray, split, spec: LossSpec) -> float:
    """``F(w) = (1/K) sum_k f_k(w)``: unweighted mean of client risks."""
    return sum(client_objective(w, s, spec) for s in split.shards) / split.K


def empirical_risk_grad(w: np.ndarray, split, spec: LossSpec) -> np.ndarray:
    g = np.zeros_like(w)
    for s in split.shards:
        g += client_gradient(w, s, spec)
    return g / split.K
