"""Intelligent Driver Model car-following controller for manned vehicles."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IdmParams:
    """Standard IDM constants plus the deceleration used when the gap closes."""

    v0: float = 20.0
    time_headway: float = 1.0
    a_max: float = 1.0
    b: float = 1.5
    delta: float = 4.0
    s0: float = 2.0
    emergency_decel: float = 3.0


def idm_accel(v: float, v_leader: float, gap: float, p: IdmParams) -> float:
    """Acceleration demanded by IDM for one follower.

    gap is the bumper-to-bumper distance to the leader; a non-positive
    gap means contact is imminent and returns full emergency braking.
    """
    if gap <= 0.0:
        return -p.emergency_decel
    dv = v - v_leader
    s_star = p.s0 + max(0.0, v * p.time_headway + v * dv / (2.0 * math.sqrt(p.a_max * p.b)))
    return p.a_max * (1.0 - (v / p.v0) ** p.delta - (s_star / gap) ** 2)


def idm_accel_array(
    v: np.ndarray, v_leader: np.ndarray, gap: np.ndarray, p: IdmParams
) -> np.ndarray:
    """Vectorized IDM over parallel follower/leader arrays."""
    v = np.asarray(v, dtype=float)
    v_leader = np.asarray(v_leader, dtype=float)
    gap = np.asarray(gap, dtype=float)
    safe_gap = np.where(gap > 0.0, gap, 1.0)
    dv = v - v_leader
    s_star = p.s0 + np.maximum(
        0.0, v * p.time_headway + v * dv / (2.0 * math.sqrt(p.a_max * p.b))
    )
    accel = p.a_max * (1.0 - (v / p.v0) ** p.delta - (s_star / safe_gap) ** 2)
    return np.where(gap > 0.0, accel, -p.emergency_decel)
