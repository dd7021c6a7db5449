"""Utility and fairness metrics plus the duality-gap oracle."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .constraints import ConstraintSet, eval_global
from .dataset import NUM_LABELS, Dataset, FederatedSplit
from .fed_engine import lagrangian, lagrangian_grad
from .linear_model import ModelParams, LossSpec, cross_entropy, design, empirical_risk

log = logging.getLogger(__name__)

THRESHOLD = 0.5


class OracleFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalReport:
    error_rate: float
    group_losses: np.ndarray           # (|A|,)
    max_group_loss: float
    group_label_losses: np.ndarray     # (|A|, 2), nan where a cell is empty
    delta_dp: float
    delta_eo: float
    mean_loss: float

    def as_dict(self) -> dict:
        return {
            "error_rate": self.error_rate,
            "max_group_loss": self.max_group_loss,
            "group_losses": self.group_losses.tolist(),
            "group_label_losses": self.group_label_losses.tolist(),
            "delta_dp": self.delta_dp,
            "delta_eo": self.delta_eo,
            "mean_loss": self.mean_loss,
        }


def _max_pairwise_gap(rates: list[float]) -> float:
    rates = [r for r in rates if not np.isnan(r)]
    if len(rates) < 2:
        return 0.0
    return float(max(rates) - min(rates))


def evaluate(m: ModelParams, data: Dataset, num_groups: int | None = None) -> EvalReport:
    """Error rate, per-group cross-entropy and parity gaps of ``m`` on ``data``.

    Losses are unregularised. Predictions threshold the probability at 0.5.
    With more than two groups the parity gaps are the largest pairwise
    difference.
    """
    A = num_groups or data.num_groups
    Xd = design(data.X, m.bias)
    ce = cross_entropy(m.w, Xd, data.y)
    pred = (expit(Xd @ m.w) >= THRESHOLD).astype(np.int64)

    group_losses = np.full(A, np.nan)
    cell_losses = np.full((A, NUM_LABELS), np.nan)
    pos_rate, tpr = [], []
    for a in range(A):
        ga = data.a == a
        if not ga.any():
            log.warning("group %d absent from evaluation data", a)
            pos_rate.append(np.nan)
            tpr.append(np.nan)
            continue
        group_losses[a] = ce[ga].mean()
        pos_rate.append(pred[ga].mean())
        for y in range(NUM_LABELS):
            cell = ga & (data.y == y)
            if cell.any():
                cell_losses[a, y] = ce[cell].mean()
        pos = ga & (data.y == 1)
        tpr.append(pred[pos].mean() if pos.any() else np.nan)

    return EvalReport(
        error_rate=float(np.mean(pred != data.y)),
        group_losses=group_losses,
        max_group_loss=float(np.nanmax(group_losses)),
        group_label_losses=cell_losses,
        delta_dp=_max_pairwise_gap(pos_rate),
        delta_eo=_max_pairwise_gap(tpr),
        mean_loss=float(ce.mean()),
    )


# ---------------------------------------------------------------------------
# duality gap
# ---------------------------------------------------------------------------

def max_over_lambda(w_bar: np.ndarray, cs: ConstraintSet, split: FederatedSplit,
                    beta: float, B: float, spec: LossSpec) -> float:
    """``max_{lam >= 0, |lam|_1 <= B} G(w_bar; lam) = beta F + B max(max_z r_z, 0)``."""
    w_bar = getattr(w_bar, "w", w_bar)
    val = beta * empirical_risk(w_bar, split, spec)
    if cs.Z:
        val += B * max(float(eval_global(cs, split, w_bar, spec).max()), 0.0)
    return val


@dataclass(frozen=True)
class MinResult:
    value: float          # objective at the returned point
    w: np.ndarray
    grad_norm: float
    iterations: int
    lower_bound: float    # certified lower bound on the minimum


def minimize_smooth(fun: Callable[[np.ndarray], float],
                    grad: Callable[[np.ndarray], np.ndarray],
                    x0: np.ndarray, lipschitz: float, strong_convexity: float = 0.0,
                    tol: float = 1e-6, max_iter: int = 200_000) -> MinResult:
    """Gradient descent with step ``1 / lipschitz`` until ``||grad|| <= tol``.

    With ``strong_convexity > 0`` the minimum is certified from below by
    ``f(x) - ||grad f(x)||^2 / (2 strong_convexity)``.
    """
    x = np.array(x0, dtype=np.float64)
    step = 1.0 / lipschitz
    for it in range(max_iter + 1):
        g = grad(x)
        gn = float(np.linalg.norm(g))
        if not np.isfinite(gn):
            raise OracleFailure("non-finite gradient in the minimisation oracle")
        if gn <= tol:
            f = fun(x)
            lb = f - gn * gn / (2 * strong_convexity) if strong_convexity > 0 else f
            return MinResult(f, x, gn, it, lb)
        x = x - step * g
    raise OracleFailure(f"gradient norm {gn:.3g} > tol {tol:g} after {max_iter} iterations")


def lagrangian_lipschitz(split: FederatedSplit, spec: LossSpec, beta: float,
                         lam: np.ndarray) -> float:
    sq = max(float(np.max(np.einsum("ij,ij->i", s.design(spec.bias), s.design(spec.bias))))
             for s in split.shards)
    lam_sum = float(np.sum(lam)) if np.size(lam) else 0.0
    return beta * (spec.ridge_mu + sq / 4.0) + lam_sum * sq / 4.0


def min_over_w(lam_bar: np.ndarray, split: FederatedSplit, beta: float, cs: ConstraintSet,
               spec: LossSpec, tol: float = 1e-6, w0: np.ndarray | None = None,
               max_iter: int = 200_000) -> MinResult:
    """Centralised full-batch minimisation of ``G(.; lam_bar)`` (verification oracle)."""
    lam_bar = np.asarray(lam_bar, dtype=np.float64)
    p = split.num_features + int(spec.bias)
    x0 = np.zeros(p) if w0 is None else w0
    L = lagrangian_lipschitz(split, spec, beta, lam_bar)
    return minimize_smooth(
        lambda w: lagrangian(w, lam_bar, split, cs, spec, beta),
        lambda w: lagrangian_grad(w, lam_bar, split, cs, spec, beta),
        x0, L, beta * spec.ridge_mu, tol, max_iter)


@dataclass(frozen=True)
class GapEstimate:
    upper: float
    lower: float
    gap: float
    oracle_tol: float


def gap(w_bar, lam_bar: np.ndarray, split: FederatedSplit, cs: ConstraintSet,
        beta: float, B: float, spec: LossSpec, tol: float = 1e-6) -> GapEstimate:
    """``max_lam G(w_bar; lam) - min_w G(w; lam_bar)``.

    The inner minimum is replaced by its certified lower bound, so the
    reported gap over-estimates the true one by at most ``oracle_tol``.
    """
    w_bar = getattr(w_bar, "w", w_bar)
    upper = max_over_lambda(w_bar, cs, split, beta, B, spec)
    res = min_over_w(lam_bar, split, beta, cs, spec, tol, w0=w_bar)
    return GapEstimate(upper, res.lower_bound, upper - res.lower_bound,
                       max(res.value - res.lower_bound, 0.0) + tol)
