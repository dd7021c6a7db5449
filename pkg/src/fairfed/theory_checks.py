"""Re-check the method's guarantees on a finished run.

Every check recomputes its quantity from ``w_bar``, the data and the
configuration. The trace is only consulted for ``lambda_bar`` (the mean of
the per-epoch multipliers rebuilt from the logged logits), which the gap
check needs. A check that cannot be computed records its error message in
``errors`` instead of raising.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .constraints import ConstraintSet, build_constraints, eval_global, implied_bgl_zeta
from .dataset import FederatedSplit
from .dual import softmax_with_slack
from .fed_engine import (
    RoundConfig,
    ScheduleState,
    lagrangian_grad,
    make_schedule,
    run_epoch,
)
from .linear_model import smoothness_constants
from .metrics import gap, lagrangian_lipschitz
from .pffl import PfflConfig, RunResult, check_gate

MARGIN_TOL = 1e-9
IDENTITY_TOL = 1e-12
GD_STEPS = 50


@dataclass(frozen=True)
class GateCheck:
    holds: bool            # max r(w_bar)_+ <= threshold, up to MARGIN_TOL
    margin: float          # threshold - max r(w_bar)_+
    max_violation: float
    threshold: float
    applies: bool          # the run released a model (verdict feasible)
    verdict_consistent: bool


@dataclass(frozen=True)
class GapCheck:
    gap: float
    nu: float
    passed: bool
    upper: float
    lower: float
    oracle_tol: float


@dataclass(frozen=True)
class ImpliedBglCheck:
    holds: bool
    applies: bool          # every conditional constraint is satisfied at w_bar
    max_conditional: float
    max_implied: float


@dataclass(frozen=True)
class ScheduleCheck:
    holds: bool
    nonincreasing: bool
    max_eta_times_L: float  # largest eta_t * (beta + B) L; the FedAvg analysis needs <= 1/4


@dataclass
class GuaranteeReport:
    gate_bound: GateCheck | None = None
    gap_vs_nu: GapCheck | None = None
    cbgl_implies_bgl: ImpliedBglCheck | None = None
    schedule_descent: ScheduleCheck | None = None
    gd_equivalence_maxerr: float | None = None
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        checks = [self.gate_bound, self.gap_vs_nu, self.cbgl_implies_bgl, self.schedule_descent]
        if any(c is not None and not (c.passed if isinstance(c, GapCheck) else c.holds)
               for c in checks):
            return False
        if self.gd_equivalence_maxerr is not None and self.gd_equivalence_maxerr > IDENTITY_TOL:
            return False
        return not self.errors

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(type(x))


def lambda_bar_from_thetas(theta_history: np.ndarray, B: float) -> np.ndarray:
    """Mean over epochs of the multipliers induced by each epoch's logits."""
    theta_history = np.asarray(theta_history, dtype=np.float64)
    if theta_history.size == 0:
        return np.zeros(theta_history.shape[-1] if theta_history.ndim == 2 else 0)
    return np.mean([softmax_with_slack(th, B) for th in theta_history], axis=0)


def check_gate_bound(w_bar: np.ndarray, verdict: str, split: FederatedSplit, cs: ConstraintSet,
                 cfg: PfflConfig) -> GateCheck:
    r = eval_global(cs, split, w_bar, cfg.loss)
    g = check_gate(r, cfg.M, cfg.nu, cfg.B)
    margin = g.threshold - g.max_violation
    consistent = verdict == "skipped" or verdict == g.verdict
    return GateCheck(bool(margin >= -MARGIN_TOL), float(margin), g.max_violation, g.threshold,
                     verdict == "feasible", bool(consistent))


def check_implied_bgl(w_bar: np.ndarray, split: FederatedSplit, cs: ConstraintSet,
                      cfg: PfflConfig) -> ImpliedBglCheck:
    """If every conditional constraint holds, the implied group-level one must too."""
    r_c = eval_global(cs, split, w_bar, cfg.loss)
    level = implied_bgl_zeta(cs)
    bgl = build_constraints(split, "bgl", zeta=0.0).with_zeta(level)
    r_g = eval_global(bgl, split, w_bar, cfg.loss)
    applies = bool(np.all(r_c <= 0))
    holds = (not applies) or bool(np.max(r_g) <= IDENTITY_TOL)
    return ImpliedBglCheck(holds, applies, float(np.max(r_c)), float(np.max(r_g)))


def check_schedule(split: FederatedSplit, cfg: PfflConfig) -> ScheduleCheck:
    """Step sizes over the whole run are non-increasing and small enough to descend."""
    sched = make_schedule(cfg.round, split, cfg.loss, cfg.beta, cfg.B)
    n = cfg.E * cfg.round.T
    if cfg.round.schedule == "theory":
        etas = 2.0 / ((sched.beta + sched.B) * sched.mu * (sched.gamma + np.arange(n)))
    else:
        etas = np.full(n, cfg.round.eta_w)
    if cfg.loss.ridge_mu > 0:
        L = smoothness_constants(split.shards, cfg.loss).L
    else:
        L = lagrangian_lipschitz(split, cfg.loss, 1.0, np.zeros(0))
    scaled = float(np.max(etas) * (cfg.beta + cfg.B) * L)
    mono = bool(np.all(np.diff(etas) <= 0))
    return ScheduleCheck(mono and scaled <= 0.25 * (1 + 1e-12), mono, scaled)


def gd_equivalence_error(split: FederatedSplit, cs: ConstraintSet, cfg: PfflConfig,
                         lam: np.ndarray, steps: int = GD_STEPS) -> float:
    """Largest gap between one-client federated rounds and plain gradient descent.

    All data goes to a single client that takes one full-batch step per
    round; those iterates must coincide with gradient descent on the pooled
    Lagrangian ``G(.; lam)``.
    """
    merged = split.merged()
    cs1 = ConstraintSet(cs.kind, cs.cells, cs.zeta, cs.counts, 1, cs.num_groups,
                        cs.cell_of, cs.rho)
    spec = cfg.loss
    eta = 1.0 / lagrangian_lipschitz(merged, spec, cfg.beta, lam)
    rc = RoundConfig(J=1, T=steps, schedule="constant", eta_w=eta)
    p = split.num_features + int(spec.bias)
    ep = run_epoch(merged, np.zeros(p), lam, rc, ScheduleState(), cs1, spec, cfg.beta)
    w = np.zeros(p)
    err = 0.0
    for t in range(steps):
        w = w - eta * lagrangian_grad(w, lam, merged, cs1, spec, cfg.beta)
        err = max(err, float(np.max(np.abs(ep.iterates[t] - w))))
    return err


def verify_run(result: RunResult, split: FederatedSplit, cs: ConstraintSet, cfg: PfflConfig,
               check_gap: bool = False, gap_tol: float = 1e-6) -> GuaranteeReport:
    """Recompute the guarantees for ``result`` trained on ``split`` under ``cs``.

    ``cfg`` must be the configuration the run actually used (for presets see
    ``baselines.effective_config``). The gap oracle is expensive and only
    runs with ``check_gap``.
    """
    rep = GuaranteeReport()
    w_bar = np.asarray(result.w_bar.w, dtype=np.float64)
    lam_bar, lam_err = None, None
    try:
        lam_bar = lambda_bar_from_thetas(result.theta_history, cfg.B)
        if lam_bar.shape != (cs.Z,):
            raise ValueError(f"logged logits have {lam_bar.size} entries, constraint set has {cs.Z}")
    except Exception as e:  # noqa: BLE001 - reported per field
        lam_bar, lam_err = None, str(e)

    def attempt(name, fn):
        try:
            setattr(rep, name, fn())
        except Exception as e:  # noqa: BLE001 - reported per field
            rep.errors[name] = f"{type(e).__name__}: {e}"

    attempt("gate_bound", lambda: check_gate_bound(w_bar, result.verdict, split, cs, cfg))
    if cs.conditional:
        attempt("cbgl_implies_bgl", lambda: check_implied_bgl(w_bar, split, cs, cfg))
    attempt("schedule_descent", lambda: check_schedule(split, cfg))
    lam_eq = lam_bar if lam_bar is not None else np.zeros(cs.Z)
    attempt("gd_equivalence_maxerr", lambda: gd_equivalence_error(split, cs, cfg, lam_eq))
    if check_gap:
        def _gap():
            if lam_bar is None:
                raise ValueError(f"no usable multiplier history: {lam_err}")
            est = gap(w_bar, lam_bar, split, cs, cfg.beta, cfg.B, cfg.loss, tol=gap_tol)
            return GapCheck(est.gap, cfg.nu, bool(est.gap <= cfg.nu), est.upper, est.lower,
                            est.oracle_tol)
        attempt("gap_vs_nu", _gap)
    return rep


__all__ = [
    "GuaranteeReport", "GateCheck", "GapCheck", "ImpliedBglCheck", "ScheduleCheck",
    "verify_run", "lambda_bar_from_thetas", "check_gate_bound", "check_implied_bgl",
    "check_schedule", "gd_equivalence_error",
]
