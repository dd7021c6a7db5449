"""Comparison methods sharing the federated engine.

* ``fedavg``         -- no constraints, ``beta = 1``.
* ``group-weighted`` -- FedAvg on losses reweighted by ``weight_a * N / m_a``.
* ``local-bgl``      -- every client runs its own bounded-group-loss dual on
  its local groups and local counts; only weights are averaged.
* ``fedminmax``      -- the ``beta = 0, B = 1, zeta = 0`` preset, gate off.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from . import pffl
from .constraints import ConstraintSet, build_constraints, eval_global
from .dataset import NUM_LABELS, ClientShard, FederatedSplit
from .dual import DualState, ascend, default_eta_theta, lambda_from_theta
from .fed_engine import aggregate, local_steps, make_schedule, step_size
from .linear_model import ConfigError, ModelParams
from .pffl import EpochRecord, PfflConfig, RunResult, check_gate

METHODS = ("pffl", "fedavg", "group-weighted", "local-bgl", "fedminmax")


def run_fedavg(split: FederatedSplit, cfg: PfflConfig) -> RunResult:
    cs = build_constraints(split, "none")
    return pffl.run(split, cs, replace(cfg, beta=1.0, gate=False))


def group_example_weights(split: FederatedSplit,
                          group_weights: Sequence[float] | None = None) -> list[np.ndarray]:
    """Per-example multipliers ``group_weights[a] * N / m_a`` for every shard.

    ``None`` means uniform weights ``1 / |A|``.
    """
    A = split.num_groups
    gw = np.full(A, 1.0 / A) if group_weights is None else np.asarray(group_weights, float)
    if gw.shape != (A,) or np.any(gw < 0) or not np.isclose(gw.sum(), 1.0):
        raise ConfigError("group weights must be nonnegative and sum to 1")
    mult = gw * split.num_examples / split.group_counts
    return [mult[s.a] for s in split.shards]


def run_group_weighted(split: FederatedSplit, cfg: PfflConfig,
                       group_weights: Sequence[float] | None = None) -> RunResult:
    cs = build_constraints(split, "none")
    weights = group_example_weights(split, group_weights)
    return pffl.run(split, cs, replace(cfg, beta=1.0, gate=False), weights=weights)


def local_view(shard: ClientShard, num_groups: int) -> FederatedSplit:
    """Single-client split whose counts are the shard's own ``m_{a,k}``."""
    gc = np.bincount(shard.a, minlength=num_groups)
    cc = np.bincount(shard.a * NUM_LABELS + shard.y,
                     minlength=NUM_LABELS * num_groups).reshape(num_groups, NUM_LABELS)
    return FederatedSplit((shard,), num_groups, gc, cc)


def local_constraint_sets(split: FederatedSplit,
                          zeta: float) -> list[tuple[FederatedSplit, ConstraintSet]]:
    """Per client: its local view and a BGL set over its locally present groups."""
    out = []
    for shard in split.shards:
        local = local_view(shard, split.num_groups)
        out.append((local, build_constraints(local, "bgl", zeta=zeta,
                                             drop_empty_cells=True)))
    return out


def run_local_bgl(split: FederatedSplit, cfg: PfflConfig, zeta: float) -> RunResult:
    """Each client enforces bounded group loss on its own data only.

    Client ``k`` descends ``beta f_k + lam_k . r^(k)`` with
    ``r^(k)_a = mean_{local a} CE - zeta``; its logits are updated from its
    own constraint values at the end of every epoch and never leave it.
    """
    spec = cfg.loss
    p = split.num_features + int(spec.bias)
    locals_ = local_constraint_sets(split, zeta)
    w0 = np.zeros(p)
    duals = []
    for local, cs in locals_:
        rho = cfg.rho or _local_rho(cs, local, w0, spec)
        eta = (default_eta_theta(cfg.nu, rho, cfg.B) if cfg.eta_theta == "auto"
               else float(cfg.eta_theta))
        duals.append(DualState.initial(cs.Z, cfg.B, eta))
    sched = make_schedule(cfg.round, split, spec, cfg.beta, cfg.B)
    rng = np.random.default_rng(cfg.round.batch_seed)

    T = cfg.round.T
    w = w0
    iterates = np.empty((cfg.E * T, p))
    trace = []
    for i in range(cfg.E):
        lams = [lambda_from_theta(d) for d in duals]
        for t in range(T):
            eta = step_size(sched, cfg.round)
            deltas = []
            for k, shard in enumerate(split.shards):
                cs = locals_[k][1]
                wk = local_steps(shard, w, lams[k], cfg.round.J, eta, cfg.beta, 1.0,
                                 cs, spec, None, rng, cfg.round.batch_size, client_id=k)
                deltas.append(wk - w)
            w = aggregate(w, deltas)
            iterates[i * T + t] = w
            sched.t += 1
        new_duals = []
        for k, (local, cs) in enumerate(locals_):
            r_k = eval_global(cs, local, w, spec)
            new_duals.append(ascend(duals[k], r_k) if cs.Z else duals[k])
        trace.append(EpochRecord(i, np.concatenate([d.theta for d in duals]),
                                 np.concatenate(lams), np.zeros(0), float("nan")))
        duals = new_duals

    w_bar_vec = iterates.mean(axis=0)
    w_bar = ModelParams(w_bar_vec, spec.bias, spec.ridge_mu)
    global_cs = build_constraints(split, "bgl", zeta=zeta)
    r_bar = eval_global(global_cs, split, w_bar_vec, spec)
    gate = check_gate(r_bar, cfg.M, cfg.nu, cfg.B)
    if cfg.gate:
        verdict, model = gate.verdict, (w_bar if gate.feasible else None)
    else:
        verdict, model = "skipped", w_bar
    return RunResult(model, w_bar, verdict, gate.max_violation, gate.threshold, r_bar,
                     trace, iterates, float("nan"), duals[0].eta_theta if duals else 0.0)


def _local_rho(cs: ConstraintSet, local: FederatedSplit, w0, spec) -> float:
    if cs.Z == 0:
        return 1.0
    return max(1.5 * float(np.max(np.abs(eval_global(cs, local, w0, spec)))), 1e-6)


def run_fedminmax(split: FederatedSplit, cfg: PfflConfig) -> RunResult:
    cs = build_constraints(split, "minmax")
    preset = replace(cfg, beta=0.0, B=1.0, gate=False)
    return pffl.run(split, cs, preset)


def effective_config(method: str, cfg: PfflConfig) -> PfflConfig:
    """The configuration a method actually trains with (presets override fields)."""
    method = method.lower().replace("_", "-")
    if method in ("fedavg", "group-weighted"):
        return replace(cfg, beta=1.0, gate=False)
    if method == "fedminmax":
        return replace(cfg, beta=0.0, B=1.0, gate=False)
    if method in ("pffl", "local-bgl"):
        return cfg
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


def run_baseline(kind: str, split: FederatedSplit, cfg: PfflConfig, *,
                 zeta: float | None = None,
                 group_weights: Sequence[float] | None = None) -> RunResult:
    kind = kind.lower().replace("_", "-")
    if kind == "fedavg":
        return run_fedavg(split, cfg)
    if kind == "group-weighted":
        return run_group_weighted(split, cfg, group_weights)
    if kind == "local-bgl":
        if zeta is None:
            raise ConfigError("local-bgl needs zeta")
        return run_local_bgl(split, cfg, zeta)
    if kind == "fedminmax":
        return run_fedminmax(split, cfg)
    raise ConfigError(f"unknown baseline {kind!r}")
