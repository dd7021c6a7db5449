"""Hyperparameter sweeps over ``(B, zeta)``, result rows and Pareto frontiers."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .baselines import METHODS, effective_config, run_baseline
from .config import Config
from .constraints import build_constraints
from .dataset import (
    Dataset,
    FederatedSplit,
    HeteroGenerator,
    load_csv,
    partition_by_key,
    partition_dirichlet,
)
from .linear_model import ConfigError
from .metrics import evaluate, gap
from .pffl import PfflConfig, run
from .theory_checks import lambda_bar_from_thetas

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RESULT_COLUMNS = (
    "schema_version", "method", "kind", "B", "zeta", "seed",
    "train_error", "test_error", "train_max_group_loss", "max_group_loss",
    "group_losses", "delta_dp", "delta_eo",
    "verdict", "max_violation", "threshold", "gap", "error", "wall_time",
)
# methods whose result does not depend on B or zeta run once per seed
GRID_FREE = ("fedavg", "group-weighted", "fedminmax")

DataFactory = Callable[[int], tuple[FederatedSplit, "Dataset | None"]]


def threads_from_env(default: int = 1) -> int:
    raw = os.environ.get("FAIRFED_THREADS")
    if raw is None or raw == "":
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FAIRFED_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("FAIRFED_THREADS must be >= 1")
    return n


@dataclass(frozen=True)
class SweepSpec:
    B_grid: Sequence[float]
    zeta_grid: Sequence[float | tuple[float, ...]]   # tuples are per-label thresholds
    template: PfflConfig
    seeds: Sequence[int]
    data: DataFactory = field(repr=False, compare=False)
    kind: str = "bgl"
    methods: Sequence[str] = ("pffl",)
    compute_gap: bool = False
    gap_tol: float = 1e-6
    drop_empty_cells: bool = False
    group_weights: Sequence[float] | None = None

    def __post_init__(self) -> None:
        if not self.B_grid or not self.seeds:
            raise ConfigError("sweep grids must be nonempty")
        if self.kind != "minmax" and not self.zeta_grid and any(
                m in ("pffl", "local-bgl") for m in self.methods):
            raise ConfigError("sweep needs a nonempty zeta grid")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")

    def cells(self) -> list[tuple[str, float | None, object, int]]:
        """``(method, B, zeta, seed)`` in execution order."""
        zetas = [None] if self.kind == "minmax" else list(self.zeta_grid)
        out = []
        for seed in self.seeds:
            for m in self.methods:
                if m in GRID_FREE:
                    out.append((m, None, None, seed))
                    continue
                for B in self.B_grid:
                    for z in zetas:
                        out.append((m, float(B), z, seed))
        return out

    @property
    def total_runs(self) -> int:
        return len(self.cells())


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if isinstance(v, tuple):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def _zeta_kwargs(kind: str, zeta) -> dict:
    if kind == "cbgl":
        if not isinstance(zeta, tuple):
            raise ConfigError("cbgl sweeps need per-label zeta tuples")
        return {"zeta_y": zeta}
    if kind == "minmax":
        return {}
    if isinstance(zeta, tuple):
        raise ConfigError(f"{kind} sweeps need scalar zeta values")
    return {"zeta": zeta}


def run_cell(spec: SweepSpec, method: str, B: float | None, zeta, seed: int,
             split: FederatedSplit, test: Dataset | None) -> dict:
    row = {c: "" for c in RESULT_COLUMNS}
    kind = {"fedavg": "none", "group-weighted": "none", "fedminmax": "minmax"}.get(method,
                                                                                 spec.kind)
    row.update(schema_version=SCHEMA_VERSION, method=method, kind=kind,
               B=_fmt(B), zeta=_fmt(zeta), seed=seed)
    t0 = time.perf_counter()
    try:
        cfg = replace(spec.template, seed=seed,
                      round=replace(spec.template.round, batch_seed=seed))
        if B is not None:
            cfg = replace(cfg, B=B)
        if method == "pffl":
            cs = build_constraints(split, spec.kind, drop_empty_cells=spec.drop_empty_cells,
                                   **_zeta_kwargs(spec.kind, zeta))
            res = run(split, cs, cfg)
        else:
            cs = None
            res = run_baseline(method, split, cfg, zeta=zeta, group_weights=spec.group_weights)
        w = res.w_bar
        tr = evaluate(w, split.as_dataset())
        row.update(train_error=_fmt(tr.error_rate), train_max_group_loss=_fmt(tr.max_group_loss))
        ev = evaluate(w, test, split.num_groups) if test is not None else tr
        row.update(
            test_error=_fmt(ev.error_rate) if test is not None else "",
            max_group_loss=_fmt(ev.max_group_loss),
            group_losses=";".join(_fmt(float(x)) for x in ev.group_losses),
            delta_dp=_fmt(ev.delta_dp), delta_eo=_fmt(ev.delta_eo),
            verdict=res.verdict, max_violation=_fmt(res.max_violation),
            threshold=_fmt(res.threshold),
        )
        if spec.compute_gap and cs is not None:
            used = effective_config(method, cfg)
            lam_bar = lambda_bar_from_thetas(res.theta_history, used.B)
            est = gap(w, lam_bar, split, cs, used.beta, used.B, used.loss, tol=spec.gap_tol)
            row["gap"] = _fmt(est.gap)
    except Exception as e:  # noqa: BLE001 - a failed cell is recorded, never fatal
        log.warning("cell %s B=%s zeta=%s seed=%s failed: %s", method, B, zeta, seed, e)
        row["verdict"] = "error"
        row["error"] = f"{type(e).__name__}: {e}"
    row["wall_time"] = f"{time.perf_counter() - t0:.3f}"
    return row


def run_sweep(spec: SweepSpec, out_csv: str | Path | None = None,
              manifest: dict | None = None, threads: int | None = None) -> list[dict]:
    """Run every cell; rows come back (and are written) in cell order.

    Cells run on up to ``threads`` worker threads (default ``FAIRFED_THREADS``
    or 1). Each cell is deterministic on its own, so the output does not
    depend on the thread count. With ``out_csv`` a JSON manifest is written
    next to it.
    """
    threads = threads or threads_from_env()
    cells = spec.cells()
    log.info("sweep: %d runs", len(cells))
    data_cache: dict[int, tuple[FederatedSplit, Dataset | None]] = {}
    for seed in dict.fromkeys(c[3] for c in cells):
        data_cache[seed] = spec.data(seed)

    def job(cell):
        m, B, z, seed = cell
        return run_cell(spec, m, B, z, seed, *data_cache[seed])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(job, cells))
    else:
        rows = [job(c) for c in cells]

    if out_csv is not None:
        write_results(rows, out_csv)
        man = {
            "schema_version": SCHEMA_VERSION,
            "code_version": __version__,
            "columns": list(RESULT_COLUMNS),
            "total_runs": len(cells),
            "failed_runs": sum(1 for r in rows if r["error"]),
            "kind": spec.kind,
            "methods": list(spec.methods),
            "B_grid": [float(b) for b in spec.B_grid],
            "zeta_grid": [list(z) if isinstance(z, tuple) else z for z in spec.zeta_grid],
            "seeds": [int(s) for s in spec.seeds],
            "template": asdict(spec.template),
        }
        if manifest:
            man.update(manifest)
        Path(out_csv).with_suffix(".manifest.json").write_text(
            json.dumps(man, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return rows


def write_results(rows: Iterable[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in RESULT_COLUMNS})


def read_results(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or tuple(rd.fieldnames) != RESULT_COLUMNS:
            raise ConfigError(f"{path} does not have the results schema v{SCHEMA_VERSION}")
        return list(rd)


def all_infeasible(rows: Sequence[dict]) -> bool:
    """True when every gated run was rejected (no model released)."""
    gated = [r for r in rows if r["verdict"] in ("feasible", "infeasible")]
    return bool(gated) and all(r["verdict"] == "infeasible" for r in gated)


# ---------------------------------------------------------------------------
# Pareto frontier
# ---------------------------------------------------------------------------

def _num(row, key) -> float:
    v = row[key] if isinstance(row, dict) else getattr(row, key)
    return float(v) if v != "" else math.nan


def pareto_frontier(rows: Sequence, x: str = "test_error",
                    y: str = "max_group_loss") -> list:
    """Rows not strictly dominated in ``(min x, min y)``; ties kept, sorted by ``x``.

    A row is dominated when another is no worse in both coordinates and
    strictly better in one. Rows with a missing coordinate are dropped.
    """
    pts = [(r, _num(r, x), _num(r, y)) for r in rows]
    pts = [p for p in pts if not (math.isnan(p[1]) or math.isnan(p[2]))]
    order = sorted(range(len(pts)), key=lambda i: (pts[i][1], pts[i][2]))
    keep = []
    best_y = math.inf
    i = 0
    while i < len(order):
        # group rows sharing the same x; within it only the smallest y survive
        j = i
        while j < len(order) and pts[order[j]][1] == pts[order[i]][1]:
            j += 1
        block = order[i:j]
        y_min = min(pts[k][2] for k in block)
        if y_min < best_y:
            keep.extend(k for k in block if pts[k][2] == y_min)
            best_y = y_min
        i = j
    return [pts[k][0] for k in keep]


# ---------------------------------------------------------------------------
# data sources from a config
# ---------------------------------------------------------------------------

def build_data(cfg: Config, seed: int | None = None) -> tuple[FederatedSplit, Dataset | None]:
    """Training split and optional test set described by ``cfg``.

    With ``data.path`` the CSV is partitioned by ``data.client_col`` (or by a
    Dirichlet split seeded with ``seed``); otherwise synthetic data is drawn
    with generator seed ``seed``.
    """
    d = cfg["data"]
    if d["path"]:
        ds = load_csv(d["path"], d["label_col"], d["group_col"], d["client_col"],
                      d["include_group"])
        test = None
        if d["test_path"]:
            test = load_csv(d["test_path"], d["label_col"], d["group_col"], d["client_col"],
                            d["include_group"])
        part = cfg["partition"]
        if d["client_col"] and part["kind"] == "key":
            split = partition_by_key(ds)
        elif part["kind"] in ("dirichlet", "key"):
            s = part["seed"] if seed is None else seed
            split = partition_dirichlet(ds, part["K"], part["alpha"], s)
        else:
            raise ConfigError(f"unknown partition kind {part['kind']!r}")
        return split, test
    syn = cfg["synthetic"]
    gen = synthetic_generator(cfg, syn["seed"] if seed is None else seed)
    _ds, split = gen.sample(syn["n_per_client"], stream=0)
    test, _ = gen.sample(syn["n_test_per_client"], stream=1)
    return split, test


def synthetic_generator(cfg: Config, seed: int) -> HeteroGenerator:
    syn = cfg["synthetic"]
    return HeteroGenerator(
        syn["K"], syn["p"], syn["skew"], seed, group_sep=syn["group_sep"],
        client_shift=syn["client_shift"], label_noise=tuple(syn["label_noise"]),
        feature_scale=syn["feature_scale"], rule_angle=syn["rule_angle"],
        minority_share=syn["minority_share"])


def sweep_spec_from_config(cfg: Config, template: PfflConfig) -> SweepSpec:
    f, s = cfg["fairness"], cfg["sweep"]
    zetas = list(s["zeta"])
    if not zetas:
        if f["kind"] == "cbgl" and f["zeta_y"] is not None:
            zetas = [tuple(f["zeta_y"])]
        elif f["zeta"] is not None:
            zetas = [f["zeta"]]
    return SweepSpec(
        B_grid=s["B"], zeta_grid=zetas, template=template, seeds=s["seeds"],
        data=lambda seed: build_data(cfg, seed), kind=f["kind"], methods=tuple(s["methods"]),
        compute_gap=s["gap"], gap_tol=s["gap_tol"], drop_empty_cells=f["drop_empty_cells"],
        group_weights=cfg["train"]["group_weights"])
