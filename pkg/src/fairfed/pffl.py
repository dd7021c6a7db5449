"""Fair federated training by alternating FedAvg and exponentiated-gradient ascent.

Each outer epoch fixes the multipliers ``lam`` (from the dual logits),
runs ``T`` FedAvg rounds on ``G(.; lam)`` warm-started from the previous
epoch, then moves the logits along the global constraint vector. The
returned model is the average of all ``E * T`` global iterates, released
only if its worst constraint violation is at most ``(M + 2 nu) / B``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .constraints import ConstraintError, ConstraintSet, default_rho, eval_global
from .dataset import FederatedSplit
from .dual import DualState, ascend, default_eta_theta, lambda_from_theta
from .fed_engine import RoundConfig, lagrangian, make_schedule, run_epoch
from .linear_model import ConfigError, LossSpec, ModelParams, cross_entropy

MAX_TOTAL_ROUNDS = 10**8


@dataclass(frozen=True)
class PfflConfig:
    E: int = 10
    round: RoundConfig = field(default_factory=RoundConfig)
    beta: float = 1.0
    B: float = 1.0
    nu: float = 0.1
    M: float = 1.0
    eta_theta: float | Literal["auto"] = "auto"
    seed: int = 0
    loss: LossSpec = field(default_factory=LossSpec)
    rho: float | None = None
    gate: bool = True
    tail_average: int | None = None   # experimental, not part of the method
    detailed_trace: bool = False

    def __post_init__(self) -> None:
        if self.E < 1:
            raise ConfigError("E must be >= 1")
        if self.E * self.round.T > MAX_TOTAL_ROUNDS:
            raise ConfigError("E * T exceeds the supported number of rounds")
        if not self.beta >= 0:
            raise ConfigError("beta must be >= 0")
        if not (self.B > 0 and self.nu > 0 and self.M > 0):
            raise ConfigError("B, nu and M must be positive")
        if self.eta_theta != "auto" and not float(self.eta_theta) > 0:
            raise ConfigError("eta_theta must be > 0 or 'auto'")
        if self.tail_average is not None and self.tail_average < 1:
            raise ConfigError("tail_average must be >= 1")


def minmax_config(E: int, T: int = 1, eta_w: float = 0.1, eta_theta: float | str = "auto",
                  **kwargs) -> PfflConfig:
    """Preset with ``beta = 0, B = 1`` (pair with a ``minmax`` constraint set)."""
    kwargs.setdefault("gate", False)
    rnd = kwargs.pop("round", None) or RoundConfig(J=1, T=T, eta_w=eta_w)
    return PfflConfig(E=E, round=rnd, beta=0.0, B=1.0, eta_theta=eta_theta, **kwargs)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    theta: np.ndarray
    lam: np.ndarray
    r: np.ndarray          # r at the end of the epoch (drives the dual step)
    G: float               # G(w^T; lam)


@dataclass(frozen=True)
class GateResult:
    verdict: str
    max_violation: float
    threshold: float

    @property
    def feasible(self) -> bool:
        return self.verdict == "feasible"


@dataclass(eq=False)
class RunResult:
    model: ModelParams | None
    w_bar: ModelParams
    verdict: str                 # feasible | infeasible | skipped (gate off)
    max_violation: float
    threshold: float
    r_bar: np.ndarray
    trace: list[EpochRecord]
    iterates: np.ndarray         # (E*T, p)
    rho: float
    eta_theta: float
    rounds: list[dict] = field(default_factory=list)

    @property
    def theta_history(self) -> np.ndarray:
        return np.array([rec.theta for rec in self.trace])

    def lambda_bar(self) -> np.ndarray:
        """Mean multiplier over epochs (constant within an epoch)."""
        if not self.trace:
            return np.zeros(0)
        return np.mean([rec.lam for rec in self.trace], axis=0)

    def summary(self) -> dict:
        return {
            "model": None if self.model is None else self.model.w.tolist(),
            "w_bar": self.w_bar.w.tolist(),
            "bias": self.w_bar.bias,
            "verdict": self.verdict,
            "threshold": self.threshold,
            "max_violation": self.max_violation,
            "r_bar": self.r_bar.tolist(),
            "rho": self.rho,
            "eta_theta": self.eta_theta,
        }


def check_gate(r_bar: np.ndarray, M: float, nu: float, B: float) -> GateResult:
    """Compare ``max_z r_z(w_bar)_+`` with ``(M + 2 nu) / B``."""
    threshold = (M + 2.0 * nu) / B
    r_bar = np.asarray(r_bar, dtype=np.float64)
    worst = max(float(r_bar.max()), 0.0) if r_bar.size else 0.0
    return GateResult("feasible" if worst <= threshold else "infeasible", worst, threshold)


def suggest_M(split: FederatedSplit, spec: LossSpec, w0: np.ndarray | None = None) -> float:
    """Largest per-group mean cross-entropy at ``w0`` (a data-driven bound for ``M``)."""
    p = split.num_features + int(spec.bias)
    w0 = np.zeros(p) if w0 is None else np.asarray(w0)
    sums = np.zeros(split.num_groups)
    for shard in split.shards:
        ce = cross_entropy(w0, shard.design(spec.bias), shard.y)
        sums += np.bincount(shard.a, weights=ce, minlength=split.num_groups)
    return float(np.max(sums / split.group_counts))


def run(split: FederatedSplit, cs: ConstraintSet, cfg: PfflConfig,
        w0: np.ndarray | None = None,
        weights: list[np.ndarray] | None = None) -> RunResult:
    """Train on ``split`` under the constraints ``cs``.

    ``weights`` optionally reweights each client's per-example losses in
    ``f_k`` (used by the group-weighted baseline).
    """
    if cs.K != split.K:
        raise ConstraintError("constraint set was built for a different split")
    spec = cfg.loss
    p = split.num_features + int(spec.bias)
    w = np.zeros(p) if w0 is None else np.array(w0, dtype=np.float64)
    if w.shape != (p,):
        raise ValueError(f"w0 must have length {p}")

    rho = cs.rho if cs.rho is not None else (cfg.rho or default_rho(cs, split, w, spec))
    if cfg.eta_theta == "auto":
        eta_theta = default_eta_theta(cfg.nu, rho, cfg.B)
    else:
        eta_theta = float(cfg.eta_theta)
    dual = DualState.initial(cs.Z, cfg.B, eta_theta)
    sched = make_schedule(cfg.round, split, spec, cfg.beta, cfg.B)
    rng = np.random.default_rng(cfg.round.batch_seed)

    T = cfg.round.T
    iterates = np.empty((cfg.E * T, p))
    w_sum = np.zeros(p)
    trace: list[EpochRecord] = []
    rounds: list[dict] = []
    for i in range(cfg.E):
        lam = lambda_from_theta(dual)
        ep = run_epoch(split, w, lam, cfg.round, sched, cs, spec, cfg.beta, rng,
                       weights, epoch=i, detailed=cfg.detailed_trace)
        iterates[i * T:(i + 1) * T] = ep.iterates
        for wt in ep.iterates:
            w_sum += wt
        rounds.extend(ep.rows)
        w = ep.iterates[-1]
        trace.append(EpochRecord(i, dual.theta, lam, ep.r_epoch,
                                 lagrangian(w, lam, split, cs, spec, cfg.beta)))
        if cs.Z:
            dual = ascend(dual, ep.r_epoch)

    if cfg.tail_average is not None:
        tail = iterates[-min(cfg.tail_average * T, len(iterates)):]
        w_bar_vec = tail.mean(axis=0)
    else:
        w_bar_vec = w_sum / (cfg.E * T)
    w_bar = ModelParams(w_bar_vec, spec.bias, spec.ridge_mu)
    r_bar = eval_global(cs, split, w_bar_vec, spec)
    gate = check_gate(r_bar, cfg.M, cfg.nu, cfg.B)
    if not cfg.gate:
        verdict, model = "skipped", w_bar
    else:
        verdict = gate.verdict
        model = w_bar if gate.feasible else None
    return RunResult(model, w_bar, verdict, gate.max_violation, gate.threshold, r_bar,
                     trace, iterates, rho, eta_theta, rounds)


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class RoundPlan:
    T_min: float
    eta_theta: float
    C_hat: float
    heuristic: bool = True   # C_hat is a guess, not a measured constant


def plan_rounds(nu: float, rho: float, B: float, E: int, kappa: float, gamma: float,
                Z: int, C_hat: float = 1.0) -> RoundPlan:
    """Rounds per epoch sufficient for a ``nu``-approximate saddle point.

    ``T >= (4 rho^2 B^2 log(Z+1) (gamma+1) / (nu E) + 2 kappa C (gamma-1))
             / (nu (gamma+1) - 2 kappa C)``

    ``C_hat`` stands in for the unobservable FedAvg constant, so the result
    is a planning heuristic.
    """
    eta_theta = default_eta_theta(nu, rho, B)
    denom = nu * (gamma + 1.0) - 2.0 * kappa * C_hat
    if not denom > 0:
        raise PlanningError(
            f"nu (gamma + 1) = {nu * (gamma + 1):.4g} does not exceed "
            f"2 kappa C = {2 * kappa * C_hat:.4g}; increase nu or lower C_hat")
    num = (4.0 * rho**2 * B**2 * math.log(Z + 1) * (gamma + 1.0) / (nu * E)
           + 2.0 * kappa * C_hat * (gamma - 1.0))
    return RoundPlan(num / denom, eta_theta, C_hat)


def with_round(cfg: PfflConfig, **round_changes) -> PfflConfig:
    return replace(cfg, round=replace(cfg.round, **round_changes))
