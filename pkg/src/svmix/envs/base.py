"""Shared simulator types and the global reward."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ControllerKind(str, enum.Enum):
    DRL = "drl"
    IDM = "idm"


@dataclass(frozen=True)
class Vehicle:
    """Immutable per-vehicle snapshot (positions are arc-length meters)."""

    id: int
    position: float
    velocity: float
    controller: ControllerKind
    agent_slot: int  # -1 for manned vehicles
    route: str


@dataclass(frozen=True)
class StepResult:
    state: np.ndarray
    observations: np.ndarray  # (n_agents, 6)
    reward: float
    done: bool
    collision: bool


class EpisodeFinished(RuntimeError):
    """Raised when stepping an environment whose episode already ended."""


def speed_tracking_reward(
    velocities: np.ndarray,
    desired_speed: float,
    c1: float,
    alpha: float,
    gap_penalty: float,
) -> float:
    """Shared reward: closeness of all vehicles to the desired speed minus
    a weighted short-headway penalty. Zero when no vehicles are present."""
    velocities = np.asarray(velocities, dtype=float)
    if velocities.size == 0:
        return 0.0
    norm = desired_speed * math.sqrt(velocities.size)
    deviation = float(np.sqrt(np.sum((desired_speed - velocities) ** 2)))
    return (norm - deviation) / (norm + c1) - alpha * gap_penalty


class TrajectoryWriter:
    """Appends one JSONL record per simulator step."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "w", encoding="utf-8")

    def record(self, t: int, positions, velocities, reward: float, collision: bool) -> None:
        self._handle.write(
            json.dumps(
                {
                    "t": t,
                    "positions": [float(z) for z in positions],
                    "velocities": [float(v) for v in velocities],
                    "reward": float(reward),
                    "collision": bool(collision),
                }
            )
            + "\n"
        )

    def close(self) -> None:
        self._handle.close()
