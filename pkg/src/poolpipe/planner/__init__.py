"""Control plane: pooled-pipeline planning and the NP / DART-r baselines."""

from .candidates import Candidate, StageConfig, enumerate_candidates, prune_dominated
from .config import PlannerConfig
from .lp_export import export_milp
from .plan import ClusterPlan, PartitionSpec, PipelinePlan
from .solve import SOLVERS, InfeasibleError, best_chain, solve, solve_dart_r, solve_np
from .templates import enumerate_templates
from .validate import Violation, validate

__all__ = [
    "Candidate", "ClusterPlan", "InfeasibleError", "PartitionSpec", "PipelinePlan",
    "PlannerConfig", "SOLVERS", "StageConfig", "Violation", "best_chain",
    "enumerate_candidates", "enumerate_templates", "export_milp", "prune_dominated",
    "solve", "solve_dart_r", "solve_np", "validate",
]
