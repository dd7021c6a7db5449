"""Group-loss constraint vectors and their per-client decomposition.

For bounded group loss the ``a``-th constraint is

    r_a(w) = sum_k r_{a,k}(w),   r_{a,k}(w) = (1/m_a) sum_{i in k, a_i = a} CE_i(w) - zeta / K

where ``m_a`` is the *global* size of group ``a``. The conditional variant
uses one constraint per (group, label) cell with ``m_{a,y}`` and ``zeta_y``.
The minmax kind is bounded group loss with ``zeta = 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import NUM_LABELS, ClientShard, FederatedSplit
from .linear_model import LossSpec, cross_entropy, residual

log = logging.getLogger(__name__)

KINDS = ("none", "bgl", "cbgl", "minmax")


class ConstraintError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """``Z`` constraints over cells of the data.

    ``cells[z]`` is ``(a,)`` for group constraints or ``(a, y)`` for
    conditional ones; ``zeta[z]`` and ``counts[z]`` are the threshold and the
    global number of examples in that cell. ``cell_of`` maps a flat cell id
    (``a`` or ``a * 2 + y``) to its constraint index, or -1 when dropped.
    """

    kind: str
    cells: tuple[tuple[int, ...], ...]
    zeta: np.ndarray
    counts: np.ndarray
    K: int
    num_groups: int
    cell_of: np.ndarray
    rho: float | None = None

    @property
    def Z(self) -> int:
        return len(self.cells)

    @property
    def conditional(self) -> bool:
        return self.kind == "cbgl"

    def with_rho(self, rho: float) -> ConstraintSet:
        if not rho > 0:
            raise ConstraintError("rho must be > 0")
        return ConstraintSet(self.kind, self.cells, self.zeta, self.counts, self.K,
                             self.num_groups, self.cell_of, float(rho))

    def with_zeta(self, zeta: np.ndarray) -> ConstraintSet:
        zeta = np.asarray(zeta, dtype=np.float64)
        if zeta.shape != self.zeta.shape:
            raise ConstraintError("zeta shape mismatch")
        return ConstraintSet(self.kind, self.cells, zeta, self.counts, self.K,
                             self.num_groups, self.cell_of, self.rho)

    def cell_index(self, a: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Constraint index of each example (-1 if it belongs to no constraint)."""
        if self.Z == 0:
            return np.full(a.shape, -1, dtype=np.int64)
        flat = a * NUM_LABELS + y if self.conditional else a
        return self.cell_of[flat]

    def labels(self) -> list[str]:
        if self.conditional:
            return [f"a{a}_y{y}" for a, y in self.cells]
        return [f"a{c[0]}" for c in self.cells]


def build_constraints(
    split: FederatedSplit,
    kind: str = "bgl",
    zeta: float | None = None,
    zeta_y: Sequence[float] | None = None,
    drop_empty_cells: bool = False,
    rho: float | None = None,
) -> ConstraintSet:
    """Constraint set for ``split`` using its global counts.

    ``kind`` is one of ``bgl`` (needs ``zeta``), ``cbgl`` (needs ``zeta_y``,
    indexed by label), ``minmax`` (``zeta`` fixed to 0) or ``none`` (Z = 0).
    """
    kind = kind.lower()
    A = split.num_groups
    if kind == "none":
        return ConstraintSet("none", (), np.zeros(0), np.zeros(0, dtype=np.int64),
                             split.K, A, np.full(A, -1, dtype=np.int64), rho)
    if kind in ("bgl", "minmax"):
        if kind == "minmax":
            if zeta not in (None, 0, 0.0):
                raise ConstraintError("minmax fixes zeta = 0")
            zeta = 0.0
        if zeta is None or not zeta >= 0:
            raise ConstraintError("bgl needs zeta >= 0")
        raw_cells = [(a,) for a in range(A)]
        raw_counts = np.asarray(split.group_counts, dtype=np.int64)
        raw_zeta = [float(zeta)] * A
        n_flat = A
    elif kind == "cbgl":
        if zeta_y is None or len(zeta_y) != NUM_LABELS:
            raise ConstraintError("cbgl needs one zeta per label")
        if any(not z >= 0 for z in zeta_y):
            raise ConstraintError("cbgl thresholds must be >= 0")
        raw_cells = [(a, y) for a in range(A) for y in range(NUM_LABELS)]
        raw_counts = np.asarray(split.cell_counts, dtype=np.int64).reshape(-1)
        raw_zeta = [float(zeta_y[y]) for _a in range(A) for y in range(NUM_LABELS)]
        n_flat = A * NUM_LABELS
    else:
        raise ConstraintError(f"unknown constraint kind {kind!r}; expected one of {KINDS}")

    cells, counts, zetas = [], [], []
    cell_of = np.full(n_flat, -1, dtype=np.int64)
    for flat, (cell, cnt, z) in enumerate(zip(raw_cells, raw_counts, raw_zeta)):
        if cnt == 0:
            if not drop_empty_cells:
                raise ConstraintError(f"constraint cell {cell} has no examples")
            log.warning("dropping empty constraint cell %s", cell)
            continue
        cell_of[flat] = len(cells)
        cells.append(cell)
        counts.append(int(cnt))
        zetas.append(z)
    cs = ConstraintSet(kind, tuple(cells), np.asarray(zetas, dtype=np.float64),
                       np.asarray(counts, dtype=np.int64), split.K, A, cell_of)
    for arr in (cs.zeta, cs.counts, cs.cell_of):
        arr.setflags(write=False)
    return cs.with_rho(rho) if rho is not None else cs


def _sum_by_cell(cs: ConstraintSet, idx: np.ndarray, values: np.ndarray) -> np.ndarray:
    keep = idx >= 0
    return np.bincount(idx[keep], weights=values[keep], minlength=cs.Z)


def eval_client(cs: ConstraintSet, shard: ClientShard, w: np.ndarray,
                spec: LossSpec) -> np.ndarray:
    """Client ``k``'s additive share ``r_{., k}(w)``, length ``Z``."""
    if cs.Z == 0:
        return np.zeros(0)
    ce = cross_entropy(w, shard.design(spec.bias), shard.y)
    sums = _sum_by_cell(cs, cs.cell_index(shard.a, shard.y), ce)
    return sums / cs.counts - cs.zeta / cs.K


def eval_global(cs: ConstraintSet, split: FederatedSplit, w: np.ndarray,
                spec: LossSpec) -> np.ndarray:
    """``r(w) = sum_k r_{., k}(w)``, reduced in client order."""
    r = np.zeros(cs.Z)
    for shard in split.shards:
        r += eval_client(cs, shard, w, spec)
    return r


def eval_centralized(cs: ConstraintSet, X: np.ndarray, y: np.ndarray, a: np.ndarray,
                     w: np.ndarray, spec: LossSpec) -> np.ndarray:
    """Direct evaluation ``mean_{cell} CE - zeta`` on pooled data.

    Uses the cell counts found in the given data (not the stored global
    counts), so it also serves to evaluate the constraints on a test set.
    """
    if cs.Z == 0:
        return np.zeros(0)
    Xd = np.hstack([X, np.ones((X.shape[0], 1))]) if spec.bias else X
    ce = cross_entropy(w, Xd, y)
    out = np.empty(cs.Z)
    for z, cell in enumerate(cs.cells):
        mask = a == cell[0]
        if cs.conditional:
            mask &= y == cell[1]
        out[z] = ce[mask].mean() - cs.zeta[z] if mask.any() else np.nan
    return out


def grad_client(cs: ConstraintSet, shard: ClientShard, w: np.ndarray,
                lam: np.ndarray, spec: LossSpec) -> np.ndarray:
    """Gradient of ``lam . r_{., k}(w)`` (cross-entropy only, no ridge)."""
    Xd = shard.design(spec.bias)
    if cs.Z == 0:
        return np.zeros(Xd.shape[1])
    idx = cs.cell_index(shard.a, shard.y)
    per_cell = np.append(np.asarray(lam, dtype=np.float64) / cs.counts, 0.0)
    coef = per_cell[idx]  # idx == -1 picks the trailing 0
    return Xd.T @ (residual(w, Xd, shard.y) * coef)


def default_rho(cs: ConstraintSet, split: FederatedSplit, w0: np.ndarray,
                spec: LossSpec, factor: float = 1.5, floor: float = 1e-6) -> float:
    """``factor * max_z |r_z(w0)|`` (floored so the dual step stays finite)."""
    if cs.Z == 0:
        return 1.0
    return max(factor * float(np.max(np.abs(eval_global(cs, split, w0, spec)))), floor)


def implied_bgl_zeta(cs: ConstraintSet) -> np.ndarray:
    """BGL level implied by a CBGL set: ``sum_y (m_{a,y} / m_a) zeta_y`` per group."""
    if not cs.conditional:
        raise ConstraintError("implied BGL level only defined for cbgl")
    num = np.zeros(cs.num_groups)
    den = np.zeros(cs.num_groups)
    for (a, _y), cnt, z in zip(cs.cells, cs.counts, cs.zeta):
        num[a] += cnt * z
        den[a] += cnt
    with np.errstate(invalid="ignore", divide="ignore"):
        return num / den
