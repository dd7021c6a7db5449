# %% [markdown]
# # Checking the guarantees of a trained run
#
# With a strongly convex loss and the decaying step schedule, the averaged
# model and averaged multipliers form an approximate saddle point of the
# Lagrangian. The gap oracle measures how far from exact it is, and
# `verify_run` rechecks the release bound and the other identities.

# %%
import numpy as np

from fairfed import LossSpec, PfflConfig, RoundConfig, build_constraints, gap, plan_rounds, run
from fairfed.dataset import HeteroGenerator
from fairfed.linear_model import smoothness_constants
from fairfed.theory_checks import verify_run

_, split = HeteroGenerator(K=5, p=10, skew=0.5, seed=0, feature_scale=0.3).sample(400)
spec = LossSpec(ridge_mu=0.1)
cs = build_constraints(split, "bgl", zeta=0.5)

# %% [markdown]
# `plan_rounds` turns the convergence bound into a rounds-per-epoch estimate.
# It needs a guess for an unobservable constant, so treat it as a heuristic.

# %%
sm = smoothness_constants(split.shards, spec)
plan = plan_rounds(nu=0.05, rho=1.0, B=1.0, E=50, kappa=sm.kappa, gamma=8 * sm.kappa,
                   Z=cs.Z, C_hat=0.01)
print(f"kappa={sm.kappa:.2f}, suggested T >= {plan.T_min:.1f}")

# %% [markdown]
# More rounds per epoch tighten the gap.

# %%
for T in (2, 8, 32):
    cfg = PfflConfig(E=50, round=RoundConfig(T=T, schedule="theory"), B=1.0, nu=0.05,
                     loss=spec)
    res = run(split, cs, cfg)
    est = gap(res.w_bar, res.lambda_bar(), split, cs, cfg.beta, cfg.B, spec)
    print(f"T={T:2d}: gap {est.gap:.4f} (upper {est.upper:.4f}, lower {est.lower:.4f})")

# %%
report = verify_run(res, split, cs, cfg, check_gap=True)
print(report.to_json())
print("lambda_bar:", np.round(res.lambda_bar(), 4))
