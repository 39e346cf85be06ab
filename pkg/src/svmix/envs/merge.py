"""Open highway with an on-ramp; vehicles flow in and out.

Both roads are projected onto one corridor coordinate (distance towards
the highway exit), with the ramp joining the main road at the merge
point. Vehicles only interact across branches inside a window around
the merge; a fixed pool of agent slots is assigned to DRL-capable
arrivals in arrival order, excess arrivals drive manned, and actions of
empty slots are ignored.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import MergeScenario
from .base import ControllerKind, EpisodeFinished, StepResult, Vehicle, speed_tracking_reward
from .idm import IdmParams, idm_accel

FREE_ROAD_GAP = 1e9

MAIN = "main"
RAMP = "ramp"


@dataclass
class _Veh:
    id: int
    branch: str
    z: float  # position along the current route
    v: float
    drl_capable: bool
    slot: int = -1


class MergeEnv:
    def __init__(self, cfg: MergeScenario):
        self.cfg = cfg
        self.n_agents = cfg.n_agents
        self.obs_dim = 6
        self.state_dim = 6 * cfg.n_agents
        self._idm = IdmParams(
            v0=cfg.idm.v0,
            time_headway=cfg.idm.time_headway,
            a_max=cfg.idm.a_max,
            b=cfg.idm.b,
            delta=cfg.idm.delta,
            s0=cfg.idm.s0,
            emergency_decel=abs(cfg.accel_min),
        )
        self._drl_period = max(1, round(1.0 / cfg.drl_fraction))
        self.reset()

    # -- lifecycle -----------------------------------------------------------
    def reset(self, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        if rng is None:
            rng = np.random.default_rng(0)
        cfg = self.cfg
        self._vehicles: list[_Veh] = []
        self._next_id = 0
        self._main_arrivals = 0
        self._headway = {
            MAIN: 3600.0 / cfg.inflow_main,
            RAMP: 3600.0 / cfg.inflow_ramp,
        }
        # seed-jittered start offsets for the deterministic arrival clocks
        self._next_arrival = {
            branch: float(rng.uniform(0.0, headway))
            for branch, headway in self._headway.items()
        }
        self._drl_phase = int(rng.integers(0, self._drl_period))
        self._slots: list[int | None] = [None] * cfg.n_agents
        self.t = 0
        self.done = False
        self.collision = False
        self.clamp_count = 0
        return self.global_state(), self.observations()

    # -- geometry ----------------------------------------------------------
    def _corridor(self, veh: _Veh) -> float:
        if veh.branch == MAIN:
            return veh.z
        return self.cfg.merge_position - (self.cfg.ramp_length - veh.z)

    def _near_merge(self, veh: _Veh) -> bool:
        return abs(self._corridor(veh) - self.cfg.merge_position) <= self.cfg.merge_window

    def _visible(self, a: _Veh, b: _Veh) -> bool:
        if a.branch == b.branch:
            return True
        return self._near_merge(a) and self._near_merge(b)

    def _neighbors(self) -> tuple[dict[int, _Veh | None], dict[int, _Veh | None]]:
        """Visible leader and follower (by corridor order) per vehicle id."""
        ordered = sorted(self._vehicles, key=lambda veh: (self._corridor(veh), veh.id))
        leaders: dict[int, _Veh | None] = {}
        followers: dict[int, _Veh | None] = {}
        for rank, veh in enumerate(ordered):
            leaders[veh.id] = next(
                (cand for cand in ordered[rank + 1 :] if self._visible(veh, cand)), None
            )
            followers[veh.id] = next(
                (cand for cand in reversed(ordered[:rank]) if self._visible(veh, cand)), None
            )
        return leaders, followers

    # -- slots --------------------------------------------------------------
    def _assign_slots(self) -> None:
        present = {veh.id for veh in self._vehicles}
        for slot, vid in enumerate(self._slots):
            if vid is not None and vid not in present:
                self._slots[slot] = None
        assigned = {vid for vid in self._slots if vid is not None}
        waiting = sorted(
            veh.id for veh in self._vehicles if veh.drl_capable and veh.id not in assigned
        )
        for vid in waiting:
            try:
                free = self._slots.index(None)
            except ValueError:
                break
            self._slots[free] = vid
        by_id = {veh.id: veh for veh in self._vehicles}
        for veh in self._vehicles:
            veh.slot = -1
        for slot, vid in enumerate(self._slots):
            if vid is not None:
                by_id[vid].slot = slot

    # -- inflow ------------------------------------------------------------------
    def _entry_clear(self, branch: str) -> bool:
        entry = 0.0 if branch == MAIN else self.cfg.merge_position - self.cfg.ramp_length
        needed = self.cfg.spawn_gap + self.cfg.vehicle_length
        return not any(
            veh.branch == branch and 0.0 <= self._corridor(veh) - entry < needed
            for veh in self._vehicles
        )

    def _spawn(self, branch: str, now: float) -> None:
        if self._next_arrival[branch] > now or not self._entry_clear(branch):
            return  # blocked arrivals stay due and retry next step
        capable = False
        if branch == MAIN:
            capable = self._main_arrivals % self._drl_period == self._drl_phase
            self._main_arrivals += 1
        self._vehicles.append(
            _Veh(self._next_id, branch, 0.0, self.cfg.spawn_speed, capable)
        )
        self._next_id += 1
        self._next_arrival[branch] += self._headway[branch]

    # -- dynamics ------------------------------------------------------------
    def step(self, actions: np.ndarray) -> StepResult:
        if self.done:
            raise EpisodeFinished("episode is over; call reset()")
        cfg = self.cfg
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.n_agents,):
            raise ValueError(f"expected {self.n_agents} accelerations, got shape {actions.shape}")

        self._assign_slots()
        leaders, _ = self._neighbors()
        accel: dict[int, float] = {}
        for veh in self._vehicles:
            if veh.slot >= 0:
                raw = float(actions[veh.slot])
                clamped = min(max(raw, cfg.accel_min), cfg.accel_max)
                if clamped != raw:
                    self.clamp_count += 1
                accel[veh.id] = clamped
            else:
                lead = leaders[veh.id]
                if lead is None:
                    accel[veh.id] = idm_accel(veh.v, veh.v, FREE_ROAD_GAP, self._idm)
                else:
                    gap = self._corridor(lead) - self._corridor(veh) - cfg.vehicle_length
                    accel[veh.id] = idm_accel(veh.v, lead.v, gap, self._idm)
                accel[veh.id] = min(max(accel[veh.id], cfg.accel_min), cfg.accel_max)

        # emergency braking on projected contact with the visible leader
        projected = {
            veh.id: self._corridor(veh)
            + min(max(veh.v + accel[veh.id] * cfg.dt, 0.0), cfg.speed_limit) * cfg.dt
            for veh in self._vehicles
        }
        for veh in self._vehicles:
            lead = leaders[veh.id]
            if lead is not None and projected[lead.id] - projected[veh.id] <= cfg.vehicle_length:
                accel[veh.id] = cfg.accel_min

        for veh in self._vehicles:
            veh.v = min(max(veh.v + accel[veh.id] * cfg.dt, 0.0), cfg.speed_limit)
            veh.z += veh.v * cfg.dt
            if veh.branch == RAMP and veh.z >= cfg.ramp_length:
                veh.branch = MAIN
                veh.z = cfg.merge_position + (veh.z - cfg.ramp_length)

        exited = [veh for veh in self._vehicles if veh.branch == MAIN and veh.z > cfg.main_length]
        if exited:
            gone = {veh.id for veh in exited}
            self._vehicles = [veh for veh in self._vehicles if veh.id not in gone]
            self._slots = [None if vid in gone else vid for vid in self._slots]

        self.t += 1
        now = self.t * cfg.dt
        self._spawn(MAIN, now)
        self._spawn(RAMP, now)
        self._assign_slots()

        leaders, _ = self._neighbors()
        collision = False
        for veh in self._vehicles:
            lead = leaders[veh.id]
            if lead is None:
                continue
            if self._corridor(lead) - self._corridor(veh) - cfg.vehicle_length < cfg.collision_gap:
                collision = True
        half_zone = cfg.merge_zone_width / 2.0
        in_zone_main = any(
            abs(self._corridor(veh) - cfg.merge_position) <= half_zone
            for veh in self._vehicles
            if veh.branch == MAIN
        )
        in_zone_ramp = any(
            abs(self._corridor(veh) - cfg.merge_position) <= half_zone
            for veh in self._vehicles
            if veh.branch == RAMP
        )
        collision = collision or (in_zone_main and in_zone_ramp)

        if collision:
            reward = 0.0
        else:
            velocities = np.array([veh.v for veh in self._vehicles])
            penalty = 0.0
            for veh in self._vehicles:
                lead = leaders[veh.id]
                if lead is not None:
                    penalty += max(cfg.c2 - (self._corridor(lead) - self._corridor(veh)), 0.0)
            reward = speed_tracking_reward(
                velocities, cfg.desired_speed, cfg.c1, cfg.alpha, penalty
            )
        self.collision = collision
        self.done = collision or self.t >= cfg.horizon
        return StepResult(self.global_state(), self.observations(), reward, self.done, collision)

    # -- views --------------------------------------------------------------
    def observations(self) -> np.ndarray:
        cfg = self.cfg
        obs = np.zeros((self.n_agents, 6))
        if not self._vehicles:
            return obs
        leaders, followers = self._neighbors()
        by_id = {veh.id: veh for veh in self._vehicles}
        for slot, vid in enumerate(self._slots):
            if vid is None:
                continue
            veh = by_id[vid]
            corr = self._corridor(veh)
            lead, follow = leaders[vid], followers[vid]
            lead_v = lead.v / cfg.speed_limit if lead else 0.0
            lead_d = (self._corridor(lead) - corr) / cfg.main_length if lead else 1.0
            follow_v = follow.v / cfg.speed_limit if follow else 0.0
            follow_d = (corr - self._corridor(follow)) / cfg.main_length if follow else 1.0
            obs[slot] = [
                lead_v,
                lead_d,
                veh.v / cfg.speed_limit,
                corr / cfg.main_length,
                follow_v,
                follow_d,
            ]
        return obs

    def global_state(self) -> np.ndarray:
        return self.observations().reshape(-1)

    def vehicles(self) -> list[Vehicle]:
        out = []
        for veh in sorted(self._vehicles, key=lambda item: item.id):
            kind = ControllerKind.DRL if veh.slot >= 0 else ControllerKind.IDM
            out.append(Vehicle(veh.id, veh.z, veh.v, kind, veh.slot, veh.branch))
        return out

    def drl_slots(self) -> dict[int, int]:
        return {slot: vid for slot, vid in enumerate(self._slots) if vid is not None}

    @property
    def n_present(self) -> int:
        return len(self._vehicles)
