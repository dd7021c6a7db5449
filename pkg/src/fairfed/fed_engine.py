"""Simulated FedAvg rounds for the Lagrangian ``G(w; lam) = beta F(w) + lam . r(w)``.

Client ``k`` descends ``beta f_k(w) + K lam . r_{., k}(w)``. The factor ``K``
compensates for the server's uniform ``1/K`` average, so the aggregated
direction is exactly ``grad G``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSet, eval_client, eval_global, grad_client
from .dataset import ClientShard, FederatedSplit
from .linear_model import (
    ConfigError,
    LossSpec,
    Smoothness,
    client_gradient,
    empirical_risk,
    empirical_risk_grad,
    residual,
)

SCHEDULES = ("constant", "theory")


class DivergedClientError(FloatingPointError):
    def __init__(self, client_id: int, step: int):
        self.client_id = client_id
        self.step = step
        super().__init__(f"client {client_id} produced a non-finite update at local step {step}")


@dataclass(frozen=True)
class RoundConfig:
    J: int = 1
    T: int = 1
    schedule: str = "constant"
    eta_w: float = 0.1
    batch_size: int | None = None
    batch_seed: int = 0

    def __post_init__(self) -> None:
        if self.J < 1 or self.T < 1:
            raise ConfigError("J and T must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")
        if self.schedule == "constant" and not self.eta_w > 0:
            raise ConfigError("eta_w must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class ScheduleState:
    """Step-size state; ``t`` counts server rounds across all epochs."""

    gamma: float = 0.0
    kappa: float = 0.0
    mu: float = 0.0
    beta: float = 1.0
    B: float = 0.0
    t: int = 0

    @classmethod
    def theory(cls, sm: Smoothness, J: int, beta: float, B: float) -> ScheduleState:
        return cls(max(8.0 * sm.kappa, float(J)), sm.kappa, sm.mu, beta, B, 0)


def step_size(s: ScheduleState, cfg: RoundConfig) -> float:
    """``eta_w`` for the constant schedule, else ``2 / ((beta + B) mu (gamma + t))``."""
    if cfg.schedule == "constant":
        return cfg.eta_w
    if not s.mu > 0:
        raise ConfigError("theory schedule needs mu > 0")
    return 2.0 / ((s.beta + s.B) * s.mu * (s.gamma + s.t))


def make_schedule(cfg: RoundConfig, split: FederatedSplit, spec: LossSpec,
                  beta: float, B: float) -> ScheduleState:
    from .linear_model import smoothness_constants

    if cfg.schedule == "theory":
        return ScheduleState.theory(smoothness_constants(split.shards, spec), cfg.J, beta, B)
    return ScheduleState(beta=beta, B=B)


# ---------------------------------------------------------------------------
# client side
# ---------------------------------------------------------------------------

def local_direction(shard: ClientShard, w: np.ndarray, lam: np.ndarray, beta: float,
                    K: float, cs: ConstraintSet, spec: LossSpec,
                    weights: np.ndarray | None = None,
                    batch: np.ndarray | None = None) -> np.ndarray:
    """Gradient of ``beta f_k + K lam . r_{., k}`` (optionally on a minibatch)."""
    if batch is None:
        g = beta * client_gradient(w, shard, spec, weights)
        if cs.Z:
            g = g + K * grad_client(cs, shard, w, lam, spec)
        return g
    Xd = shard.design(spec.bias)[batch]
    y, a = shard.y[batch], shard.a[batch]
    res = residual(w, Xd, y)
    coef = beta / batch.size * (weights[batch] if weights is not None else 1.0)
    if cs.Z:
        per_cell = np.append(np.asarray(lam) / cs.counts, 0.0)
        coef = coef + K * per_cell[cs.cell_index(a, y)] * (len(shard) / batch.size)
    return Xd.T @ (res * coef) + beta * spec.ridge_mu * w


def local_steps(shard: ClientShard, w: np.ndarray, lam: np.ndarray, J: int, eta: float,
                beta: float, K: float, cs: ConstraintSet, spec: LossSpec,
                weights: np.ndarray | None = None,
                rng: np.random.Generator | None = None,
                batch_size: int | None = None,
                client_id: int = 0) -> np.ndarray:
    """Client weights after ``J`` steps from the broadcast ``w``."""
    wk = np.array(w, dtype=np.float64)
    for j in range(J):
        batch = None
        if batch_size is not None and batch_size < len(shard):
            batch = (rng or np.random.default_rng()).choice(len(shard), batch_size,
                                                            replace=False)
        with np.errstate(over="ignore", invalid="ignore"):
            g = local_direction(shard, wk, lam, beta, K, cs, spec, weights, batch)
            wk = wk - eta * g
        if not np.all(np.isfinite(wk)):
            raise DivergedClientError(client_id, j)
    return wk


def local_update(shard: ClientShard, w: np.ndarray, lam: np.ndarray, J: int, eta: float,
                 beta: float, K: float, cs: ConstraintSet, spec: LossSpec,
                 weights: np.ndarray | None = None,
                 rng: np.random.Generator | None = None,
                 batch_size: int | None = None,
                 client_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Run ``J`` local steps from the broadcast ``w``.

    Returns the weight delta and the client's constraint share evaluated at
    its final local weights.
    """
    wk = local_steps(shard, w, lam, J, eta, beta, K, cs, spec, weights, rng,
                     batch_size, client_id)
    r_k = eval_client(cs, shard, wk, spec)
    if not np.all(np.isfinite(r_k)):
        raise DivergedClientError(client_id, J)
    return wk - w, r_k


# ---------------------------------------------------------------------------
# server side
# ---------------------------------------------------------------------------

def aggregate(w: np.ndarray, deltas: list[np.ndarray]) -> np.ndarray:
    """``w + (1/K) sum_k delta_k`` with the sum taken in client order."""
    if not deltas:
        raise ValueError("no client deltas")
    total = np.zeros_like(np.asarray(w, dtype=np.float64))
    for d in deltas:
        if not np.all(np.isfinite(d)):
            raise ValueError("non-finite client delta")
        total += d
    return w + total / len(deltas)


def lagrangian(w: np.ndarray, lam: np.ndarray, split: FederatedSplit, cs: ConstraintSet,
               spec: LossSpec, beta: float) -> float:
    val = beta * empirical_risk(w, split, spec)
    if cs.Z:
        val += float(np.dot(lam, eval_global(cs, split, w, spec)))
    return val


def lagrangian_grad(w: np.ndarray, lam: np.ndarray, split: FederatedSplit,
                    cs: ConstraintSet, spec: LossSpec, beta: float) -> np.ndarray:
    g = beta * empirical_risk_grad(w, split, spec)
    for shard in split.shards:
        g = g + grad_client(cs, shard, w, lam, spec)
    return g


@dataclass
class EpochResult:
    iterates: np.ndarray          # (T, p) post-aggregation weights w^1..w^T
    etas: np.ndarray              # (T,)
    r_epoch: np.ndarray           # r(w^T), length Z
    rows: list[dict] = field(default_factory=list)


def run_epoch(split: FederatedSplit, w0: np.ndarray, lam: np.ndarray, cfg: RoundConfig,
              sched: ScheduleState, cs: ConstraintSet, spec: LossSpec, beta: float,
              rng: np.random.Generator | None = None,
              weights: list[np.ndarray] | None = None,
              epoch: int = 0, detailed: bool = False) -> EpochResult:
    """``T`` rounds of broadcast / local update / aggregate with fixed ``lam``.

    ``sched.t`` advances by ``T``. ``r_epoch`` is the sum of every client's
    share evaluated at the last aggregated model on its full shard.
    """
    K = split.K
    w = np.array(w0, dtype=np.float64)
    iterates = np.empty((cfg.T, w.size))
    etas = np.empty(cfg.T)
    rows = []
    for t in range(cfg.T):
        eta = step_size(sched, cfg)
        deltas = []
        for k, shard in enumerate(split.shards):
            wk = local_steps(shard, w, lam, cfg.J, eta, beta, K, cs, spec,
                             weights[k] if weights is not None else None,
                             rng, cfg.batch_size, client_id=k)
            deltas.append(wk - w)
        w = aggregate(w, deltas)
        iterates[t] = w
        etas[t] = eta
        if detailed:
            r = eval_global(cs, split, w, spec)
            rows.append({
                "epoch": epoch, "round": t, "global_step": sched.t, "eta": eta,
                "G_value": lagrangian(w, lam, split, cs, spec, beta),
                "grad_norm": float(np.linalg.norm(
                    lagrangian_grad(w, lam, split, cs, spec, beta))),
                **{f"r_{lab}": float(v) for lab, v in zip(cs.labels(), r)},
            })
        sched.t += 1
    return EpochResult(iterates, etas, eval_global(cs, split, w, spec), rows)


