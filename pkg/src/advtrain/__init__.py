from __future__ import annotations

from .attack import AttackResult, attack_eval  # noqa: F401
from .config import AdvConfig  # noqa: F401
from .inner_max import Perturbation, inner_maximize, inner_maximize_example, project_columns  # noqa: F401
from .losses import LossBreakdown, jsd, jsd_from_logits, losses, per_example_objective, vanilla_loss  # noqa: F401
from .trainer import Trainer, TrainingMode, make_optimizer, train_step  # noqa: F401

__all__ = [
    "AdvConfig",
    "AttackResult",
    "LossBreakdown",
    "Perturbation",
    "Trainer",
    "TrainingMode",
    "attack_eval",
    "inner_maximize",
    "inner_maximize_example",
    "jsd",
    "jsd_from_logits",
    "losses",
    "make_optimizer",
    "per_example_objective",
    "project_columns",
    "train_step",
    "vanilla_loss",
]
