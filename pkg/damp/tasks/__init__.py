"""Tasks package initialization"""
from damp.tasks.sweep import sweep_target_fraction
from damp.tasks.training import build_orchestrator, train

__all__ = [
    "build_orchestrator",
    "sweep_target_fraction",
    "train",
]
