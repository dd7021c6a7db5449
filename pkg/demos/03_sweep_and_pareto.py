# %% [markdown]
# # Sweeping `(B, zeta)` and reading off the frontier
#
# A sweep writes one row per run to a CSV with a JSON manifest beside it.
# The Pareto frontier keeps the rows nobody beats on both test error and
# worst group loss.

# %%
import tempfile
from pathlib import Path

from fairfed import LossSpec, PfflConfig, RoundConfig
from fairfed.dataset import HeteroGenerator
from fairfed.sweep import SweepSpec, pareto_frontier, read_results, run_sweep


def data(seed):
    gen = HeteroGenerator(K=8, p=5, skew=0.9, seed=seed, rule_angle=1.0, minority_share=0.3)
    _, split = gen.sample(150)
    test, _ = gen.sample(500, stream=1)
    return split, test


spec = SweepSpec(
    B_grid=[1.0, 5.0, 20.0], zeta_grid=[0.1, 0.3, 0.5],
    template=PfflConfig(E=40, round=RoundConfig(T=5, eta_w=0.1), nu=0.05,
                        loss=LossSpec(ridge_mu=1e-3)),
    seeds=[0], data=data, methods=("pffl", "fedavg", "local-bgl", "fedminmax"))
print("runs:", spec.total_runs)

# %%
out = Path(tempfile.mkdtemp()) / "results.csv"
rows = run_sweep(spec, out)
for r in read_results(out):
    print(f"{r['method']:>10} B={r['B']:>5} zeta={r['zeta']:>4} {r['verdict']:>10} "
          f"err={float(r['test_error']):.3f} max_loss={float(r['max_group_loss']):.3f}")

# %% [markdown]
# Rejected runs released no model, so they are left out of the frontier.

# %%
released = [r for r in rows if r["verdict"] in ("feasible", "skipped")]
for r in pareto_frontier(released):
    print(f"frontier: {r['method']:>10} B={r['B']:>5} zeta={r['zeta']:>4} "
          f"err={float(r['test_error']):.3f} max_loss={float(r['max_group_loss']):.3f}")
