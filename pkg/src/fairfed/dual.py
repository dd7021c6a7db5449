"""Dual player: logits ``theta`` and the multipliers they induce.

``lambda_z = B exp(theta_z) / (1 + sum_z' exp(theta_z'))``. The ``1`` is an
implicit slack coordinate with logit 0, so ``lambda`` always stays inside
``{lambda >= 0, ||lambda||_1 <= B}`` and no projection is ever needed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linear_model import ConfigError


@dataclass(frozen=True, eq=False)
class DualState:
    theta: np.ndarray
    B: float
    eta_theta: float

    def __post_init__(self) -> None:
        theta = np.array(self.theta, dtype=np.float64)
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        if not self.B > 0 or not self.eta_theta > 0:
            raise ConfigError("B and eta_theta must be positive")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def initial(cls, Z: int, B: float, eta_theta: float) -> DualState:
        return cls(np.zeros(Z), B, eta_theta)

    @property
    def lam(self) -> np.ndarray:
        return lambda_from_theta(self)


def softmax_with_slack(theta: np.ndarray, B: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size == 0:
        return np.zeros(0)
    shift = max(float(theta.max()), 0.0)
    e = np.exp(theta - shift)
    return B * e / (np.exp(-shift) + e.sum())


def lambda_from_theta(ds: DualState) -> np.ndarray:
    return softmax_with_slack(ds.theta, ds.B)


def ascend(ds: DualState, r_global: np.ndarray) -> DualState:
    """One exponentiated-gradient step: ``theta <- theta + eta_theta * r``."""
    r = np.asarray(r_global, dtype=np.float64)
    if r.shape != ds.theta.shape:
        raise ValueError(f"r has shape {r.shape}, theta {ds.theta.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("constraint values must be finite")
    return DualState(ds.theta + ds.eta_theta * r, ds.B, ds.eta_theta)


def default_eta_theta(nu: float, rho: float, B: float) -> float:
    """Dual step ``nu / (2 rho^2 B)`` that makes the dual regret at most ``nu / 2``."""
    if not (nu > 0 and rho > 0 and B > 0):
        raise ConfigError("nu, rho and B must all be positive")
    return nu / (2.0 * rho * rho * B)
