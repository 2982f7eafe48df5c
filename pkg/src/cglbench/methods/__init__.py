"""Continual-learning strategies behind a single trainer contract."""

from .config import METHODS, TUNED_PARAMS, MethodConfig, TrainerConfig, tuned_defaults
from .gem import GEMSolverError, gem_project, nnls
from .regularizers import (
    ImportanceMap,
    distillation_loss,
    ewc_importance,
    importance_penalty,
    lwf_loss,
    mas_importance,
    quadratic_penalty,
    twp_importance,
)
from .trainer import (
    DataSource,
    EpisodicMemory,
    EvalResult,
    MethodState,
    evaluate,
    load_state,
    new_state,
    replay_mix,
    save_state,
    train_task,
    training_indices,
)

__all__ = [
    "METHODS", "TUNED_PARAMS", "MethodConfig", "TrainerConfig", "tuned_defaults",
    "GEMSolverError", "gem_project", "nnls",
    "ImportanceMap", "distillation_loss", "ewc_importance", "importance_penalty", "lwf_loss",
    "mas_importance", "quadratic_penalty", "twp_importance",
    "DataSource", "EpisodicMemory", "EvalResult", "MethodState", "evaluate", "load_state",
    "new_state", "replay_mix", "save_state", "train_task", "training_indices",
]
