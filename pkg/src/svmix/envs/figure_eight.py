"""Closed single-lane loop with a crossing conflict zone.

The figure-eight track is abstracted to a ring of configurable length
that passes through one physical intersection at two distinct arc
positions (quarter and three-quarter points). Simultaneous occupancy of
the two intervals is a collision. Manned vehicles follow IDM and yield
at the crossing to whichever vehicle clears it first; every vehicle,
learning or manned, performs emergency braking when a projected bumper
gap closes or a projected crossing conflict is lost.
"""
from __future__ import annotations

import math

import numpy as np

from ..config import FigureEightScenario
from .base import ControllerKind, EpisodeFinished, StepResult, Vehicle, speed_tracking_reward
from .idm import IdmParams, idm_accel, idm_accel_array

# a braking vehicle aims to stop this far short of the crossing entry
CROSSING_STANDOFF = 2.0


class FigureEightEnv:
    def __init__(self, cfg: FigureEightScenario):
        self.cfg = cfg
        self.n_agents = cfg.n_agents
        self.obs_dim = 6
        self.state_dim = 3 * cfg.n_vehicles
        length = cfg.track_length
        self._zone_centers = (0.25 * length, 0.75 * length)
        self._half_zone = cfg.crossing_width / 2.0
        self._idm = IdmParams(
            v0=cfg.idm.v0,
            time_headway=cfg.idm.time_headway,
            a_max=cfg.idm.a_max,
            b=cfg.idm.b,
            delta=cfg.idm.delta,
            s0=cfg.idm.s0,
            emergency_decel=abs(cfg.accel_min),
        )
        m, n = cfg.n_vehicles, cfg.n_agents
        slot_vehicles = [int(math.floor(j * m / n)) for j in range(n)]
        self._slot_vehicle = np.array(slot_vehicles, dtype=int)
        self._vehicle_slot = np.full(m, -1, dtype=int)
        for slot, veh in enumerate(slot_vehicles):
            self._vehicle_slot[veh] = slot
        self.clamp_count = 0
        self.reset()

    # -- lifecycle -----------------------------------------------------------
    def reset(self, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Evenly spaced standstill start; the RNG argument is accepted for
        interface parity but this scenario is fully deterministic."""
        del rng
        m = self.cfg.n_vehicles
        length = self.cfg.track_length
        base = np.arange(m) * length / m
        # rotate the ring so nobody starts inside (or hugging) the crossing
        best_offset, best_clearance = 0.0, -np.inf
        for offset in np.linspace(0.0, length / m, 64, endpoint=False):
            z = (base + offset) % length
            clearance = min(
                float(np.min(np.abs(((z - center + length / 2.0) % length) - length / 2.0)))
                for center in self._zone_centers
            )
            if clearance > best_clearance:
                best_offset, best_clearance = float(offset), clearance
        self.z = (base + best_offset) % length
        self.v = np.zeros(m)
        self.t = 0
        self.done = False
        self.collision = False
        return self.global_state(), self.observations()

    # -- geometry ----------------------------------------------------------
    def _fwd(self, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        return (dst - src) % self.cfg.track_length

    def _ring(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Leader and follower vehicle index per vehicle on the ring."""
        m = z.size
        order = np.argsort(z, kind="stable")
        leaders = np.empty(m, dtype=int)
        followers = np.empty(m, dtype=int)
        leaders[order] = order[np.arange(1, m + 1) % m]
        followers[order] = order[np.arange(-1, m - 1)]
        return leaders, followers

    def _zone_geometry(self, z: np.ndarray):
        """Per-zone membership, entry distance, and exit distance arrays."""
        length = self.cfg.track_length
        in_zone, entry, exit_ = [], [], []
        for center in self._zone_centers:
            offset = ((z - center + length / 2.0) % length) - length / 2.0
            inside = np.abs(offset) <= self._half_zone
            entry_d = np.where(inside, 0.0, (center - self._half_zone - z) % length)
            exit_d = (center + self._half_zone - z) % length
            in_zone.append(inside)
            entry.append(entry_d)
            exit_.append(exit_d)
        return np.stack(in_zone), np.stack(entry), np.stack(exit_)

    def _zone_view(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-vehicle (entry_distance, exit_distance, in_zone) for the nearer
        crossing interval, plus which interval that is (returned via entry
        comparison inside callers)."""
        in_zone, entry, exit_ = self._zone_geometry(z)
        nearest = np.where(entry[0] <= entry[1], 0, 1)
        idx = np.arange(z.size)
        return nearest, entry[nearest, idx], exit_[nearest, idx], in_zone[nearest, idx]

    def _crossing_conflicts(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """First-come-first-served right-of-way inside the yield window.

        Returns (conflicted, entry_distance, in_any_zone): ``conflicted[i]``
        means some vehicle heading for the other crossing interval clears
        the intersection first (smaller exit distance, ties by id), so i
        does not have right of way. Drives the polite yielding of manned
        vehicles.
        """
        nearest, my_entry, my_exit, my_in = self._zone_view(z)
        approaching = my_in | (my_entry < self.cfg.yield_window)
        conflicted = np.zeros(z.size, dtype=bool)
        for zone in (0, 1):
            rivals = np.flatnonzero(approaching & (nearest == 1 - zone))
            if rivals.size == 0:
                continue
            best = min((my_exit[j], j) for j in rivals)
            for i in np.flatnonzero(approaching & (nearest == zone)):
                if best < (my_exit[i], i):
                    conflicted[i] = True
        return conflicted, my_entry, my_in

    def _crossing_emergency(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Last-moment braking: a vehicle brakes only when waiting longer
        would make it unable to stop short of a crossing that a vehicle
        from the other branch occupies or can no longer avoid entering."""
        cfg = self.cfg
        nearest, my_entry, my_exit, my_in = self._zone_view(z)
        decel = abs(cfg.accel_min)
        stop_dist = v**2 / (2.0 * decel)
        must_decide = my_entry <= stop_dist + v * cfg.dt + CROSSING_STANDOFF
        committed = my_in | (my_entry <= stop_dist)
        emergency = np.zeros(z.size, dtype=bool)
        for zone in (0, 1):
            rivals = np.flatnonzero((nearest == 1 - zone) & (my_in | must_decide))
            if rivals.size == 0:
                continue
            blocking = [j for j in rivals if committed[j]]
            for i in np.flatnonzero((nearest == zone) & must_decide & ~my_in):
                if blocking:
                    emergency[i] = True
                    continue
                best = min((my_exit[j], j) for j in rivals)
                if best < (my_exit[i], i):
                    emergency[i] = True
        return emergency

    # -- dynamics ------------------------------------------------------------
    def step(self, actions: np.ndarray) -> StepResult:
        if self.done:
            raise EpisodeFinished("episode is over; call reset()")
        cfg = self.cfg
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.n_agents,):
            raise ValueError(f"expected {self.n_agents} accelerations, got shape {actions.shape}")

        leaders, _ = self._ring(self.z)
        center_gap = self._fwd(self.z, self.z[leaders])
        if cfg.n_vehicles == 1:
            center_gap[:] = cfg.track_length
        bumper_gap = center_gap - cfg.vehicle_length

        accel = idm_accel_array(self.v, self.v[leaders], bumper_gap, self._idm)
        conflict_now, entry_dist, in_zone_now = self._crossing_conflicts(self.z)
        for i in np.flatnonzero(conflict_now & ~in_zone_now):
            if self._vehicle_slot[i] >= 0:
                continue  # learning vehicles get no yield assist
            accel[i] = min(accel[i], idm_accel(self.v[i], 0.0, entry_dist[i], self._idm))

        clamped = np.clip(actions, cfg.accel_min, cfg.accel_max)
        self.clamp_count += int(np.sum(clamped != actions))
        accel[self._slot_vehicle] = clamped
        accel = np.clip(accel, cfg.accel_min, cfg.accel_max)

        # emergency braking: projected gap contact or last-moment crossing conflict
        v_next = np.clip(self.v + accel * cfg.dt, 0.0, cfg.speed_limit)
        z_next = (self.z + v_next * cfg.dt) % cfg.track_length
        gap_next = self._fwd(z_next, z_next[leaders]) - cfg.vehicle_length
        emergency = gap_next <= 0.0
        if cfg.n_vehicles == 1:
            emergency[:] = False
        emergency |= self._crossing_emergency(self.z, self.v)
        accel[emergency] = cfg.accel_min

        self.v = np.clip(self.v + accel * cfg.dt, 0.0, cfg.speed_limit)
        self.z = (self.z + self.v * cfg.dt) % cfg.track_length
        self.t += 1

        leaders, _ = self._ring(self.z)
        center_gap = self._fwd(self.z, self.z[leaders])
        if cfg.n_vehicles == 1:
            center_gap[:] = cfg.track_length
        collision = bool(np.any(center_gap - cfg.vehicle_length < cfg.collision_gap)) and cfg.n_vehicles > 1
        in_zone, _, _ = self._zone_geometry(self.z)
        collision = collision or bool(in_zone[0].any() and in_zone[1].any())

        if collision:
            reward = 0.0
        else:
            penalty = float(np.sum(np.maximum(cfg.c2 - center_gap, 0.0)))
            reward = speed_tracking_reward(self.v, cfg.desired_speed, cfg.c1, cfg.alpha, penalty)
        self.collision = collision
        self.done = collision or self.t >= cfg.horizon
        return StepResult(self.global_state(), self.observations(), reward, self.done, collision)

    # -- views --------------------------------------------------------------
    def observations(self) -> np.ndarray:
        cfg = self.cfg
        leaders, followers = self._ring(self.z)
        obs = np.zeros((self.n_agents, 6))
        for slot, i in enumerate(self._slot_vehicle):
            lead, follow = leaders[i], followers[i]
            fwd = self._fwd(self.z[i], self.z[lead]) if lead != i else cfg.track_length
            bwd = self._fwd(self.z[follow], self.z[i]) if follow != i else cfg.track_length
            obs[slot] = [
                self.v[lead] / cfg.speed_limit,
                fwd / cfg.track_length,
                self.v[i] / cfg.speed_limit,
                self.z[i] / cfg.track_length,
                self.v[follow] / cfg.speed_limit,
                bwd / cfg.track_length,
            ]
        return obs

    def global_state(self) -> np.ndarray:
        cfg = self.cfg
        phase = 2.0 * math.pi * self.z / cfg.track_length
        return np.stack(
            [self.v / cfg.speed_limit, np.cos(phase), np.sin(phase)], axis=1
        ).reshape(-1)

    def vehicles(self) -> list[Vehicle]:
        out = []
        for i in range(self.cfg.n_vehicles):
            slot = int(self._vehicle_slot[i])
            kind = ControllerKind.DRL if slot >= 0 else ControllerKind.IDM
            out.append(Vehicle(i, float(self.z[i]), float(self.v[i]), kind, slot, "loop"))
        return out

    def drl_slots(self) -> dict[int, int]:
        """Agent slot -> vehicle id."""
        return {slot: int(veh) for slot, veh in enumerate(self._slot_vehicle)}
