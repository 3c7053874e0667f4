"""Left-tail probabilities and first-branching statistics for supercritical Galton-Watson processes."""
__version__ = "0.1.0"

from .model import (EvalContext, ImmigrationModel, ModelConfig, ModelError, OffspringModel, build_immigration,
                    build_offspring, load_config, parse_config, truncated_geometric)
from .laplace import ConsistencyError, PhiEvaluator
from .scales import ScaleError, ScaleSolution, solve_scales
from .inversion import QuadratureError, TailResult, joint_prob, tail_W, tail_W_imm
from .simulate import RareEventInfeasible, SimConfig, estimate_tail_mc, simulate_batch

__all__ = [
    "EvalContext", "ImmigrationModel", "ModelConfig", "ModelError", "OffspringModel", "build_immigration",
    "build_offspring", "load_config", "parse_config", "truncated_geometric", "ConsistencyError", "PhiEvaluator",
    "ScaleError", "ScaleSolution", "solve_scales", "QuadratureError", "TailResult", "joint_prob", "tail_W",
    "tail_W_imm", "RareEventInfeasible", "SimConfig", "estimate_tail_mc", "simulate_batch",
]
