"""Desk-scale mixed-autonomy traffic simulators."""
from ..config import FigureEightScenario, MergeScenario, ScenarioConfig
from .base import ControllerKind, EpisodeFinished, StepResult, TrajectoryWriter, Vehicle
from .figure_eight import FigureEightEnv
from .idm import IdmParams, idm_accel, idm_accel_array
from .merge import MergeEnv


def make_env(cfg: ScenarioConfig):
    """Build the simulator matching a scenario config."""
    if isinstance(cfg, FigureEightScenario):
        return FigureEightEnv(cfg)
    if isinstance(cfg, MergeScenario):
        return MergeEnv(cfg)
    raise TypeError(f"unknown scenario config {type(cfg)!r}")


__all__ = [
    "ControllerKind",
    "EpisodeFinished",
    "FigureEightEnv",
    "IdmParams",
    "MergeEnv",
    "StepResult",
    "TrajectoryWriter",
    "Vehicle",
    "idm_accel",
    "idm_accel_array",
    "make_env",
]
