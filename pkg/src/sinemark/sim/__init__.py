"""Desk-scale distillation simulator.

A calibrated victim over a discrete vocabulary, distillable student
models, negative baselines, end-to-end detection experiments, accuracy
bound verification, and parameter sweeps.
"""

from .bounds import accuracy_bounds_quadrature, make_p_dist, theorem_bound_check
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    run_detection_experiment,
    sweep_parameter,
    sweep_table,
)
from .students import StudentModel, distill_student, new_student, train_negative
from .task import (
    SyntheticTask,
    argmax_soft_accuracy,
    make_task,
    make_task_with_class_mass,
    sampling_hard_accuracy,
    student_accuracy,
    victim_accuracy,
    victim_answer,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "StudentModel",
    "SyntheticTask",
    "accuracy_bounds_quadrature",
    "argmax_soft_accuracy",
    "distill_student",
    "make_p_dist",
    "make_task",
    "make_task_with_class_mass",
    "new_student",
    "run_detection_experiment",
    "sampling_hard_accuracy",
    "student_accuracy",
    "sweep_parameter",
    "sweep_table",
    "theorem_bound_check",
    "train_negative",
    "victim_accuracy",
    "victim_answer",
]
