"""Command-line entry point: ``fairfed <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 no model released (every
gated run infeasible), 4 verification oracle failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from .baselines import METHODS, effective_config, run_baseline
from .config import Config
from .constraints import ConstraintError, ConstraintSet, build_constraints
from .dataset import DatasetError, FederatedSplit, HeteroGenerator, load_csv, save_csv
from .linear_model import ConfigError, ModelParams
from .metrics import OracleFailure, evaluate
from .pffl import EpochRecord, RunResult, run
from .sweep import (
    RESULT_COLUMNS,
    SCHEMA_VERSION,
    all_infeasible,
    build_data,
    pareto_frontier,
    read_results,
    run_sweep,
    sweep_spec_from_config,
    threads_from_env,
    write_results,
)
from .theory_checks import GuaranteeReport, verify_run

log = logging.getLogger("fairfed")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_ORACLE = 0, 2, 3, 4

# command-line flag -> config key; flags override file values
FLAG_KEYS = {
    "data": "data.path", "test_data": "data.test_path", "label_col": "data.label_col",
    "group_col": "data.group_col", "client_col": "data.client_col",
    "include_group": "data.include_group",
    "partition": "partition.kind", "clients": "partition.K", "alpha": "partition.alpha",
    "kind": "fairness.kind", "zeta": "fairness.zeta", "zeta_y": "fairness.zeta_y",
    "drop_empty_cells": "fairness.drop_empty_cells",
    "method": "train.method", "E": "train.E", "T": "train.T", "J": "train.J",
    "schedule": "train.schedule", "eta_w": "train.eta_w", "batch_size": "train.batch_size",
    "beta": "train.beta", "B": "train.B", "nu": "train.nu", "M": "train.M",
    "eta_theta": "train.eta_theta", "seed": "train.seed", "rho": "train.rho",
    "ridge_mu": "train.ridge_mu", "tail_average": "train.tail_average",
    "detailed_trace": "train.detailed_trace", "no_gate": None,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", help="training CSV (omit for synthetic data)")
    g.add_argument("--test-data", help="test CSV")
    g.add_argument("--label-col")
    g.add_argument("--group-col")
    g.add_argument("--client-col")
    g.add_argument("--include-group", action="store_true", default=None,
                   help="also use the group id as a feature")
    g.add_argument("--partition", choices=["key", "dirichlet"])
    g.add_argument("--clients", type=int, help="K for a Dirichlet partition")
    g.add_argument("--alpha", type=float, help="Dirichlet concentration")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--method", choices=METHODS)
    g.add_argument("--kind", choices=["bgl", "cbgl", "minmax", "none"])
    g.add_argument("--zeta", type=float)
    g.add_argument("--zeta-y", type=float, nargs=2, metavar=("Z0", "Z1"))
    g.add_argument("--drop-empty-cells", action="store_true", default=None)
    g.add_argument("--E", type=int, help="outer epochs")
    g.add_argument("--T", type=int, help="rounds per epoch")
    g.add_argument("--J", type=int, help="local steps per round")
    g.add_argument("--schedule", choices=["constant", "theory"])
    g.add_argument("--eta-w", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--beta", type=float)
    g.add_argument("--B", type=float)
    g.add_argument("--nu", type=float)
    g.add_argument("--M", type=float)
    g.add_argument("--eta-theta", help="positive number or 'auto'")
    g.add_argument("--seed", type=int)
    g.add_argument("--rho", type=float)
    g.add_argument("--ridge-mu", type=float)
    g.add_argument("--tail-average", type=int,
                   help="experimental: average only the last N epochs")
    g.add_argument("--detailed-trace", action="store_true", default=None)
    g.add_argument("--no-gate", action="store_true", help="always release w_bar")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (section.key = value lines)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set train.E=20")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = argparse.ArgumentParser(prog="fairfed", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"fairfed {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", formatter_class=fmt,
                       help="write synthetic heterogeneous train/test CSVs")
    p.add_argument("--kind", choices=["synthetic-hetero"], default="synthetic-hetero")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--K", type=int, default=10, help="clients")
    p.add_argument("--n", type=int, default=200, help="training examples per client")
    p.add_argument("--n-test", type=int, default=1000, help="test examples per client")
    p.add_argument("--p", type=int, default=5, help="features")
    p.add_argument("--skew", type=float, default=0.9, help="0 = same mixture everywhere")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--group-sep", type=float, default=1.0)
    p.add_argument("--client-shift", type=float, default=1.0)
    p.add_argument("--label-noise", type=float, nargs=2, default=[0.3, 1.0])
    p.add_argument("--feature-scale", type=float, default=1.0)
    p.add_argument("--rule-angle", type=float, default=0.0)
    p.add_argument("--minority-share", type=float, default=0.5)
    p.add_argument("--force", action="store_true", help="overwrite existing files")

    p = sub.add_parser("train", help="train one model and write a run directory")
    _common(p)
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("eval", help="evaluate a saved model on a CSV")
    p.add_argument("--model", required=True, help="model JSON (or a run directory)")
    p.add_argument("--data", required=True)
    p.add_argument("--label-col", help="default: from the run config, else 'label'")
    p.add_argument("--group-col", help="default: from the run config, else 'group'")
    p.add_argument("--client-col", help="default: from the run config, else none")
    p.add_argument("--include-group", action="store_true", default=None)
    p.add_argument("--results", help="append a row to this results CSV")
    p.add_argument("--method", default="eval", help="method name for the results row")

    p = sub.add_parser("sweep", help="grid over B and zeta; writes results CSV + manifest")
    _common(p)
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--threads", type=int, help="parallel cells (default FAIRFED_THREADS or 1)")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("pareto", help="non-dominated rows of a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--x", default="test_error")
    p.add_argument("--y", default="max_group_loss")
    p.add_argument("--all-verdicts", action="store_true",
                   help="keep infeasible rows (default drops them)")
    p.add_argument("--out", help="write frontier CSV here instead of stdout")

    for name, desc in (("gap", "duality gap of a trained run vs its nu"),
                       ("verify", "recheck every guarantee on a trained run")):
        p = sub.add_parser(name, help=desc)
        p.add_argument("run_dir")
        p.add_argument("--tol", type=float, default=1e-6, help="gap oracle tolerance")
        if name == "verify":
            p.add_argument("--gap", action="store_true", help="also run the gap oracle")
    return ap


def resolve_config(args: argparse.Namespace) -> Config:
    cfg = config_mod.load(args.config) if getattr(args, "config", None) else config_mod.defaults()
    config_mod.apply_overrides(cfg, getattr(args, "set", []) or [])
    for dest, key in FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if key is not None and v is not None:
            cfg.set(key, v)
    if getattr(args, "no_gate", False):
        cfg.set("train.gate", False)
    for key in ("data.path", "data.test_path"):
        if cfg.get(key):
            cfg.set(key, str(Path(cfg.get(key)).resolve()))
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    paths = [out / "train.csv", out / "test.csv"]
    existing = [str(p) for p in paths if p.exists()]
    if existing and not args.force:
        raise ConfigError(f"refusing to overwrite {', '.join(existing)} (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    gen = HeteroGenerator(args.K, args.p, args.skew, args.seed, group_sep=args.group_sep,
                          client_shift=args.client_shift, label_noise=tuple(args.label_noise),
                          feature_scale=args.feature_scale, rule_angle=args.rule_angle,
                          minority_share=args.minority_share)
    for path, n, stream in ((paths[0], args.n, 0), (paths[1], args.n_test, 1)):
        ds, _ = gen.sample(n, stream=stream)
        save_csv(ds, path, client_column="client")
        print(f"wrote {path} ({len(ds)} rows)")
    return EXIT_OK


def constraints_for(method: str, split: FederatedSplit, cfg: Config) -> ConstraintSet:
    """The constraint set a method's guarantees are checked against."""
    f = cfg["fairness"]
    if method in ("fedavg", "group-weighted"):
        return build_constraints(split, "none")
    if method == "fedminmax":
        return build_constraints(split, "minmax", drop_empty_cells=f["drop_empty_cells"])
    if method == "local-bgl":
        return build_constraints(split, "bgl", zeta=f["zeta"])
    return build_constraints(split, f["kind"], zeta=f["zeta"], zeta_y=f["zeta_y"],
                             drop_empty_cells=f["drop_empty_cells"])


def _write_trace(res: RunResult, cs: ConstraintSet, path: Path) -> None:
    labels = cs.labels()
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "G"] + [f"theta_{x}" for x in labels]
                   + [f"lambda_{x}" for x in labels] + [f"r_{x}" for x in labels])
        for rec in res.trace:
            w.writerow([rec.epoch, repr(rec.G)] + [repr(float(v)) for v in rec.theta]
                       + [repr(float(v)) for v in rec.lam] + [repr(float(v)) for v in rec.r])


def _read_trace(path: Path, Z: int) -> list[EpochRecord]:
    recs = []
    with path.open(newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        next(rd)
        for row in rd:
            vals = [float(x) for x in row[2:]]
            recs.append(EpochRecord(int(row[0]), np.array(vals[:Z]), np.array(vals[Z:2 * Z]),
                                    np.array(vals[2 * Z:]), float(row[1])))
    return recs


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    if (out / "result.json").exists() and not args.force:
        raise ConfigError(f"{out} already holds a run (use --force)")
    split, test = build_data(cfg)
    pcfg = config_mod.pffl_config(cfg)
    method = cfg.get("train.method")
    cs = constraints_for(method, split, cfg)
    if method == "pffl":
        res = run(split, cs, pcfg)
    else:
        res = run_baseline(method, split, pcfg, zeta=cfg.get("fairness.zeta"),
                           group_weights=cfg.get("train.group_weights"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.dumps(), encoding="utf-8")
    res.w_bar.save(out / "w_bar.json")
    if res.model is not None:
        res.model.save(out / "model.json")
    summary = {"method": method, **res.summary()}
    summary["train_metrics"] = evaluate(res.w_bar, split.as_dataset()).as_dict()
    if test is not None:
        summary["test_metrics"] = evaluate(res.w_bar, test, split.num_groups).as_dict()
    (out / "result.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    if method != "local-bgl":
        _write_trace(res, cs, out / "trace.csv")
    if res.rounds:
        with (out / "rounds.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(res.rounds[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(res.rounds)
    print(json.dumps({"verdict": res.verdict, "threshold": res.threshold,
                      "max_violation": res.max_violation, "out": str(out)}))
    return EXIT_INFEASIBLE if res.verdict == "infeasible" else EXIT_OK


def _load_model(path: str) -> ModelParams:
    p = Path(path)
    if p.is_dir():
        p = p / "model.json" if (p / "model.json").exists() else p / "w_bar.json"
    return ModelParams.load(p)


def cmd_eval(args) -> int:
    m = _load_model(args.model)
    run_cfg = Path(args.model) / "config.cfg"
    schema = (config_mod.load(run_cfg) if run_cfg.exists() else config_mod.defaults())["data"]
    pick = lambda flag, key: flag if flag is not None else schema[key]  # noqa: E731
    ds = load_csv(args.data, pick(args.label_col, "label_col"), pick(args.group_col, "group_col"),
                  pick(args.client_col, "client_col"), pick(args.include_group, "include_group"))
    if ds.num_features != m.num_features:
        raise ConfigError(f"model expects {m.num_features} features, {args.data} has "
                          f"{ds.num_features} (check --client-col / --include-group)")
    rep = evaluate(m, ds)
    print(json.dumps(rep.as_dict(), indent=2))
    if args.results:
        path = Path(args.results)
        row = {c: "" for c in RESULT_COLUMNS}
        row.update(schema_version=SCHEMA_VERSION, method=args.method,
                   test_error=repr(rep.error_rate), max_group_loss=repr(rep.max_group_loss),
                   group_losses=";".join(repr(float(x)) for x in rep.group_losses),
                   delta_dp=repr(rep.delta_dp), delta_eo=repr(rep.delta_eo))
        rows = read_results(path) if path.exists() else []
        write_results(rows + [row], path)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    if out.exists() and not args.force:
        raise ConfigError(f"refusing to overwrite {out} (use --force)")
    spec = sweep_spec_from_config(cfg, config_mod.pffl_config(cfg))
    out.parent.mkdir(parents=True, exist_ok=True)
    print(f"sweep: {spec.total_runs} runs", file=sys.stderr)
    threads = args.threads or threads_from_env()
    rows = run_sweep(spec, out, manifest={"config": cfg.dumps()}, threads=threads)
    failed = sum(1 for r in rows if r["error"])
    print(f"wrote {out} ({len(rows)} rows, {failed} failed)", file=sys.stderr)
    return EXIT_INFEASIBLE if all_infeasible(rows) else EXIT_OK


def cmd_pareto(args) -> int:
    rows = read_results(args.results)
    rows = [r for r in rows if not r["error"]]
    if not args.all_verdicts:
        rows = [r for r in rows if r["verdict"] != "infeasible"]
    for key in (args.x, args.y):
        if key not in RESULT_COLUMNS:
            raise ConfigError(f"unknown column {key!r}")
    front = pareto_frontier(rows, args.x, args.y)
    if args.out:
        write_results(front, args.out)
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(front)
    return EXIT_OK


def load_run(run_dir: str | Path):
    """Config, split, constraint set, training config and result of a run directory."""
    d = Path(run_dir)
    if not (d / "result.json").exists():
        raise ConfigError(f"{d} is not a run directory")
    cfg = config_mod.load(d / "config.cfg")
    split, _ = build_data(cfg)
    method = cfg.get("train.method")
    cs = constraints_for(method, split, cfg)
    pcfg = effective_config(method, config_mod.pffl_config(cfg))
    summ = json.loads((d / "result.json").read_text(encoding="utf-8"))
    w_bar = ModelParams.load(d / "w_bar.json")
    trace = _read_trace(d / "trace.csv", cs.Z) if (d / "trace.csv").exists() else []
    res = RunResult(None if summ["model"] is None else w_bar, w_bar, summ["verdict"],
                    summ["max_violation"], summ["threshold"], np.asarray(summ["r_bar"]),
                    trace, np.zeros((0, w_bar.w.size)), summ["rho"], summ["eta_theta"])
    return cfg, split, cs, pcfg, res


def _report_exit(rep: GuaranteeReport) -> int:
    print(rep.to_json())
    oracle_errors = [k for k in rep.errors if k == "gap_vs_nu" or "Oracle" in rep.errors[k]]
    return EXIT_ORACLE if oracle_errors else EXIT_OK


def cmd_gap(args) -> int:
    _cfg, split, cs, pcfg, res = load_run(args.run_dir)
    full = verify_run(res, split, cs, pcfg, check_gap=True, gap_tol=args.tol)
    rep = GuaranteeReport(gap_vs_nu=full.gap_vs_nu,
                          errors={k: v for k, v in full.errors.items() if k == "gap_vs_nu"})
    return _report_exit(rep)


def cmd_verify(args) -> int:
    _cfg, split, cs, pcfg, res = load_run(args.run_dir)
    return _report_exit(verify_run(res, split, cs, pcfg, check_gap=args.gap, gap_tol=args.tol))


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
    "pareto": cmd_pareto, "gap": cmd_gap, "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ConstraintError, DatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleFailure as e:
        print(f"oracle failure: {e}", file=sys.stderr)
        return EXIT_ORACLE
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
