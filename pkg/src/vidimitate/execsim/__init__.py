"""Closed-loop execution against a kinematic simulator, plus synthetic tasks."""

from .executor import (
    BacktrackLimit,
    BudgetExhausted,
    DeviationPolicy,
    ExecutionFailed,
    ExecutionLog,
    TickRecord,
    deviation,
    execute,
)
from .sim import PERTURBATION_KINDS, KinematicSim, Perturbation, load_perturbations, save_perturbations
from .tasks import TASK_KINDS, SyntheticTask, default_camera, gen_synthetic_task, render_box

__all__ = [
    "BacktrackLimit",
    "BudgetExhausted",
    "DeviationPolicy",
    "ExecutionFailed",
    "ExecutionLog",
    "TickRecord",
    "deviation",
    "execute",
    "PERTURBATION_KINDS",
    "KinematicSim",
    "Perturbation",
    "load_perturbations",
    "save_perturbations",
    "TASK_KINDS",
    "SyntheticTask",
    "default_camera",
    "gen_synthetic_task",
    "render_box",
]
