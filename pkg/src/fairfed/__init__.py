"""Fair federated learning under bounded group loss constraints."""
from .constraints import ConstraintSet, build_constraints, eval_client, eval_global
from .dataset import (
    Dataset,
    FederatedSplit,
    HeteroGenerator,
    load_csv,
    make_synthetic_hetero,
    partition_by_key,
    partition_dirichlet,
)
from .dual import DualState, ascend, default_eta_theta, lambda_from_theta
from .fed_engine import RoundConfig
from .linear_model import LossSpec, ModelParams
from .metrics import evaluate, gap
from .pffl import PfflConfig, RunResult, check_gate, plan_rounds, run

__version__ = "0.1.0"

__all__ = [
    "ConstraintSet", "build_constraints", "eval_client", "eval_global",
    "Dataset", "FederatedSplit", "HeteroGenerator", "load_csv", "make_synthetic_hetero",
    "partition_by_key", "partition_dirichlet",
    "DualState", "ascend", "default_eta_theta", "lambda_from_theta",
    "RoundConfig", "LossSpec", "ModelParams", "evaluate", "gap",
    "PfflConfig", "RunResult", "check_gate", "plan_rounds", "run",
]
