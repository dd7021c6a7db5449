# %% [markdown]
# # Global versus local fairness constraints
#
# When clients are heterogeneous, each one enforcing bounded group loss on its
# own data is not the same as enforcing it on the pooled population. Here we
# train both over a small `(B, zeta)` grid and compare their trade-offs.

# %%
import itertools

from fairfed import LossSpec, PfflConfig, RoundConfig, build_constraints, evaluate, run
from fairfed.baselines import run_fedavg, run_local_bgl
from fairfed.dataset import HeteroGenerator

gen = HeteroGenerator(K=10, p=5, skew=0.9, seed=3, rule_angle=1.0, minority_share=0.3,
                      label_noise=(0.3, 0.3))
_, split = gen.sample(200)
test, _ = gen.sample(1000, stream=1)
spec = LossSpec(ridge_mu=1e-3)

# %%
points = []
for B, zeta in itertools.product((1.0, 5.0, 20.0), (0.1, 0.3)):
    cfg = PfflConfig(E=60, round=RoundConfig(T=5, eta_w=0.6 / (1 + B)), B=B, nu=0.05,
                     loss=spec, gate=False)
    g = evaluate(run(split, build_constraints(split, "bgl", zeta=zeta), cfg).w_bar, test)
    l = evaluate(run_local_bgl(split, cfg, zeta).w_bar, test)
    points.append((B, zeta, g, l))
    print(f"B={B:5.1f} zeta={zeta:.1f}  global: err {g.error_rate:.3f} max loss "
          f"{g.max_group_loss:.3f}   local: err {l.error_rate:.3f} max loss {l.max_group_loss:.3f}")

# %%
base = evaluate(run_fedavg(split, PfflConfig(E=60, round=RoundConfig(T=5, eta_w=0.3),
                                             loss=spec)).w_bar, test)
print(f"FedAvg: err {base.error_rate:.3f} max loss {base.max_group_loss:.3f}")

# %% [markdown]
# Take the local method's fairest point and compare it with the global
# points that are at most one point of accuracy worse.

# %%
l_best = min((p[3] for p in points), key=lambda r: r.max_group_loss)
matched = [p[2] for p in points if p[2].error_rate <= l_best.error_rate + 0.01]
g_best = min(matched, key=lambda r: r.max_group_loss)
print(f"local best : err {l_best.error_rate:.3f}, max group loss {l_best.max_group_loss:.3f}")
print(f"global best: err {g_best.error_rate:.3f}, max group loss {g_best.max_group_loss:.3f}")
