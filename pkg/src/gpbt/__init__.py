"""Genealogical population-based training: adaptive hyperparameter schedules in a single run."""

from .baselines import PbtConfig, run_nonadaptive, run_pbt, run_pooled_ablation
from .genealogy import AgentRecord, GenealogyTree
from .orchestrator import (
    CurvePoint,
    DynamicC,
    DynamicCState,
    EarlyStopConfig,
    FixedC,
    GenerationPlan,
    RunConfig,
    RunResult,
    convergence_gate,
    median_gate,
    plan_generation,
    run,
    satisfaction_gate,
    select_parents,
)
from .searchers import History, Observation, SearcherConfig, suggest
from .space import Dimension, HpVector, SearchSpace
from .trainers import TrainerSpec, brute_force_schedule, make_trainer

__all__ = [
    "AgentRecord",
    "CurvePoint",
    "Dimension",
    "DynamicC",
    "DynamicCState",
    "EarlyStopConfig",
    "FixedC",
    "GenealogyTree",
    "GenerationPlan",
    "History",
    "HpVector",
    "Observation",
    "PbtConfig",
    "RunConfig",
    "RunResult",
    "SearchSpace",
    "SearcherConfig",
    "TrainerSpec",
    "brute_force_schedule",
    "convergence_gate",
    "make_trainer",
    "median_gate",
    "plan_generation",
    "run",
    "run_nonadaptive",
    "run_pbt",
    "run_pooled_ablation",
    "satisfaction_gate",
    "select_parents",
    "suggest",
]

__version__ = "0.1.0"
