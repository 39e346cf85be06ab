"""Run configuration schema.

A run is fully described by one JSON document: scenario geometry and
dynamics, training hyperparameters, filter-bank shape, mixer shape,
seeds, and the output directory. Validation is strict (unknown keys are
rejected) so a config snapshot plus a seed reproduces a run exactly.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class IdmSection(StrictModel):
    """Car-following parameters for manned vehicles."""

    v0: float = 20.0
    time_headway: float = 1.0
    a_max: float = 1.0
    b: float = 1.5
    delta: float = 4.0
    s0: float = 2.0

    @field_validator("v0", "time_headway", "a_max", "b", "delta", "s0")
    @classmethod
    def _positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("must be positive")
        return value


class FigureEightScenario(StrictModel):
    """Closed single-lane loop with one crossing conflict zone."""

    kind: Literal["figure_eight"] = "figure_eight"
    n_vehicles: int = 14
    n_agents: int = 7
    track_length: float = 400.0
    dt: float = 0.1
    horizon: int = 1500
    desired_speed: float = 20.0
    speed_limit: float = 30.0
    accel_min: float = -3.0
    accel_max: float = 3.0
    alpha: float = 0.0
    c1: float = 1e-3
    c2: float = 10.0
    vehicle_length: float = 5.0
    collision_gap: float = 0.5
    crossing_width: float = 10.0
    yield_window: float = 30.0
    idm: IdmSection = Field(default_factory=IdmSection)

    @field_validator(
        "n_vehicles", "n_agents", "track_length", "dt", "horizon", "desired_speed",
        "speed_limit", "accel_max", "vehicle_length", "crossing_width", "yield_window",
    )
    @classmethod
    def _positive(cls, value):
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "FigureEightScenario":
        if self.n_agents > self.n_vehicles:
            raise ValueError("n_agents cannot exceed n_vehicles")
        if self.accel_min >= 0:
            raise ValueError("accel_min must be negative")
        if self.n_vehicles * self.vehicle_length >= self.track_length:
            raise ValueError("vehicles do not fit on the track")
        return self


class MergeScenario(StrictModel):
    """Open highway with an on-ramp; vehicles flow in and out."""

    kind: Literal["merge"] = "merge"
    n_agents: int = 13
    main_length: float = 700.0
    merge_position: float = 500.0
    ramp_length: float = 100.0
    dt: float = 1.0
    horizon: int = 750
    desired_speed: float = 20.0
    speed_limit: float = 30.0
    accel_min: float = -1.5
    accel_max: float = 1.5
    alpha: float = 0.1
    c1: float = 1e-3
    c2: float = 10.0
    vehicle_length: float = 5.0
    collision_gap: float = 0.5
    inflow_main: float = 2000.0
    inflow_ramp: float = 100.0
    drl_fraction: float = 0.25
    merge_window: float = 50.0
    merge_zone_width: float = 10.0
    spawn_gap: float = 10.0
    spawn_speed: float = 10.0
    idm: IdmSection = Field(default_factory=IdmSection)

    @field_validator(
        "n_agents", "main_length", "merge_position", "ramp_length", "dt", "horizon",
        "desired_speed", "speed_limit", "accel_max", "vehicle_length", "inflow_main",
        "inflow_ramp", "merge_window", "merge_zone_width", "spawn_gap", "spawn_speed",
    )
    @classmethod
    def _positive(cls, value):
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "MergeScenario":
        if self.inflow_main + self.inflow_ramp > 2100.0:
            raise ValueError("total inflow cannot exceed 2100 vehicles per hour")
        if not (0.0 < self.drl_fraction <= 1.0):
            raise ValueError("drl_fraction must be in (0, 1]")
        if self.accel_min >= 0:
            raise ValueError("accel_min must be negative")
        if self.merge_position >= self.main_length:
            raise ValueError("merge_position must lie inside the main road")
        if self.ramp_length > self.merge_position:
            raise ValueError("ramp_length cannot exceed merge_position")
        return self


ScenarioConfig = Union[FigureEightScenario, MergeScenario]


class SgnnSection(StrictModel):
    """Filter-bank shape and edge-sampling probability."""

    n_filters: int = 32
    order: int = 3
    p: float = 0.7
    variant: Literal["laplacian", "adjacency"] = "laplacian"
    readout_hidden: int = 32

    @model_validator(mode="after")
    def _consistent(self) -> "SgnnSection":
        if self.n_filters < 1:
            raise ValueError("n_filters must be at least 1")
        if self.order < 0:
            raise ValueError("order must be non-negative")
        if not (0.0 < self.p <= 1.0):
            raise ValueError("p must be in (0, 1]")
        if self.readout_hidden < 1:
            raise ValueError("readout_hidden must be at least 1")
        return self


class MixerSection(StrictModel):
    mixing_width: int = 32
    hyper_hidden: int = 64

    @field_validator("mixing_width", "hyper_hidden")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be at least 1")
        return value


class TrainSection(StrictModel):
    n_episodes: int = 300
    n_batch: int = 256
    n_epoch: int = 4
    gamma: float = 0.99
    clip_epsilon: float = 0.2
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    eval_every: int = 10
    eval_episodes: int = 5
    actor_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64, 64)
    sigma_init_scale: float = 0.5
    recompute_advantages: bool = True

    @model_validator(mode="after")
    def _consistent(self) -> "TrainSection":
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if not (0.0 < self.clip_epsilon < 1.0):
            raise ValueError("clip_epsilon must be in (0, 1)")
        for name in ("n_episodes", "n_batch", "n_epoch", "eval_every", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.sigma_init_scale <= 0:
            raise ValueError("sigma_init_scale must be positive")
        if any(w < 1 for w in self.actor_hidden + self.critic_hidden):
            raise ValueError("hidden widths must be positive")
        return self


class RunConfig(StrictModel):
    """Everything one training run needs."""

    scenario: ScenarioConfig = Field(default_factory=FigureEightScenario, discriminator="kind")
    train: TrainSection = Field(default_factory=TrainSection)
    sgnn: SgnnSection = Field(default_factory=SgnnSection)
    mixer: MixerSection = Field(default_factory=MixerSection)
    seeds: list[int] = Field(default_factory=lambda: [0])
    out_dir: str | None = None

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, value: list[int]) -> list[int]:
        if not value:
            raise ValueError("at least one seed is required")
        if any(s < 0 for s in value):
            raise ValueError("seeds must be non-negative")
        return value


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a JSON config file."""
    with open(path, encoding="utf-8") as handle:
        return RunConfig.model_validate(json.load(handle))


def output_root(explicit: str | None = None) -> Path:
    """Output directory root; the SVMIX_OUT environment variable overrides."""
    if explicit:
        return Path(explicit)
    return Path(os.environ.get("SVMIX_OUT", "runs"))


def figure_eight_lite() -> RunConfig:
    """Small loop (8 vehicles, 4 agents) used for quick learning runs."""
    return RunConfig(
        scenario=FigureEightScenario(
            n_vehicles=8, n_agents=4, track_length=250.0, horizon=500
        ),
        train=TrainSection(n_episodes=200),
        sgnn=SgnnSection(n_filters=8, order=2),
        mixer=MixerSection(mixing_width=16, hyper_hidden=32),
    )
