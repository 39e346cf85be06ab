"""Training loop, advantage computation, evaluation, and sweep harness.

Rollouts append time-ordered transitions to a bounded batch; an update
fires whenever the batch fills or the episode ends. Each update round
runs ``n_epoch`` passes, and every pass re-evaluates the total values
with freshly sampled filter graphs, recomputes advantages against the
discounted reward tail (bootstrapped with the total value of the
observation after the batch unless the episode ended), then applies one
policy step and one value-stack step from separate backward passes.
"""
from __future__ import annotations

import csv
import enum
import json
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .config import RunConfig, output_root
from .envs import TrajectoryWriter, make_env
from .model import SvmixModel
from .nn import Adam, AdamConfig
from .rng import substream

METRICS_COLUMNS = [
    "episode",
    "train_return",
    "eval_utility_mean",
    "eval_utility_std",
    "actor_loss",
    "critic_loss",
    "collisions",
    "updates",
]

ProgressCallback = Callable[[int, int], None]


class TrainingAborted(RuntimeError):
    """A non-finite loss or gradient stopped the run."""


class Batch:
    """Time-ordered transition buffer, flushed after every update round."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int, state_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.obs = np.zeros((capacity, n_agents, obs_dim))
        self.actions = np.zeros((capacity, n_agents))
        self.logp_old = np.zeros((capacity, n_agents))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.next_obs = np.zeros((capacity, n_agents, obs_dim))
        self.size = 0

    def append(self, state, obs, actions, logp, reward, next_state, next_obs) -> None:
        if self.size >= self.capacity:
            raise ValueError("batch is full; update and clear it first")
        i = self.size
        self.states[i] = state
        self.obs[i] = obs
        self.actions[i] = actions
        self.logp_old[i] = logp
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.next_obs[i] = next_obs
        self.size += 1

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def clear(self) -> None:
        self.size = 0


def discounted_targets(
    rewards: np.ndarray, bootstrap: float, gamma: float, done: bool
) -> np.ndarray:
    """G_j = sum_{k>=j} gamma^{k-j} r_k, extended past the batch by the
    discounted bootstrap value unless the episode ended."""
    rewards = np.asarray(rewards, dtype=float)
    targets = np.empty_like(rewards)
    running = 0.0 if done else float(bootstrap)
    for j in range(rewards.size - 1, -1, -1):
        running = rewards[j] + gamma * running
        targets[j] = running
    return targets


def compute_advantages(
    rewards: np.ndarray,
    values: np.ndarray,
    bootstrap: float,
    gamma: float,
    done: bool,
) -> np.ndarray:
    """Discounted reward tail (plus bootstrap when not done) minus the value."""
    values = np.asarray(values, dtype=float)
    if not done and not np.isfinite(bootstrap):
        raise ValueError("bootstrap value required when the episode has not ended")
    return discounted_targets(rewards, bootstrap, gamma, done) - values


class OverheadMethod(str, enum.Enum):
    SVMIX = "svmix"
    FIRL = "firl"


def comm_overhead(
    method: OverheadMethod | str,
    n_agents: int,
    n_para: int = 0,
    n_epoch: int = 0,
    n_batch: int = 0,
    tau: float = 0.0,
) -> float:
    """Average values transmitted per update round.

    Gradient-sharing training uploads every agent's parameters once per
    tau updates; value mixing transmits one value per agent per epoch
    pass over the batch.
    """
    method = OverheadMethod(method)
    if n_agents <= 0:
        raise ValueError("n_agents must be positive")
    if method is OverheadMethod.FIRL:
        if n_para <= 0 or tau <= 0:
            raise ValueError("FIRL overhead needs positive n_para and tau")
        return n_agents * n_para / tau
    if n_epoch <= 0 or n_batch <= 0:
        raise ValueError("SVMIX overhead needs positive n_epoch and n_batch")
    return float(n_agents * n_epoch * n_batch)


@dataclass
class EpisodeRow:
    episode: int
    train_return: float
    eval_utility_mean: float | None
    eval_utility_std: float | None
    actor_loss: float
    critic_loss: float
    collisions: int
    updates: int

    def as_csv(self) -> list[str]:
        def fmt(value):
            if value is None:
                return ""
            if isinstance(value, float):
                return repr(value)
            return str(value)

        return [
            fmt(self.episode),
            fmt(self.train_return),
            fmt(self.eval_utility_mean),
            fmt(self.eval_utility_std),
            fmt(self.actor_loss),
            fmt(self.critic_loss),
            fmt(self.collisions),
            fmt(self.updates),
        ]


def _git_describe() -> str | None:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            check=False,
        )
        return out.stdout.strip() or None
    except OSError:
        return None


class Trainer:
    def __init__(
        self,
        cfg: RunConfig,
        seed: int,
        out_dir: str | Path | None = None,
        progress: ProgressCallback | None = None,
    ):
        self.cfg = cfg
        self.seed = seed
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.progress = progress
        self.env = make_env(cfg.scenario)
        self.eval_env = make_env(cfg.scenario)
        scenario = cfg.scenario
        sigma_init = cfg.train.sigma_init_scale * (scenario.accel_max - scenario.accel_min) / 2.0
        self.model = SvmixModel(
            n_agents=self.env.n_agents,
            obs_dim=self.env.obs_dim,
            state_dim=self.env.state_dim,
            sgnn_cfg=cfg.sgnn,
            mixer_cfg=cfg.mixer,
            actor_hidden=tuple(cfg.train.actor_hidden),
            critic_hidden=tuple(cfg.train.critic_hidden),
            sigma_init=sigma_init,
            init_seed=seed,
        )
        self.adam_actor = Adam(self.model.store, ["actor/"], AdamConfig(lr=cfg.train.actor_lr))
        self.adam_value = Adam(
            self.model.store, ["critic/", "sgnn/", "mixer/"], AdamConfig(lr=cfg.train.critic_lr)
        )
        self._rng_policy = substream(seed, "policy")
        self._rng_sgnn = substream(seed, "sgnn")
        self.updates = 0

    # -- one update round --------------------------------------------------
    def update(self, batch: Batch, done: bool) -> tuple[float, float]:
        cfg = self.cfg.train
        size = batch.size
        if size == 0:
            raise ValueError("cannot update from an empty batch")
        obs = batch.obs[:size]
        states = batch.states[:size]
        actions = batch.actions[:size]
        logp_old = batch.logp_old[:size]
        rewards = batch.rewards[:size]
        actor_losses, critic_losses = [], []
        frozen_adv: np.ndarray | None = None
        for _ in range(cfg.n_epoch):
            v_tot, tape = self.model.value_forward(obs, states, rng=self._rng_sgnn)
            if done:
                bootstrap = 0.0
            else:
                boot_v, _ = self.model.value_forward(
                    batch.next_obs[size - 1][None], batch.next_states[size - 1][None],
                    rng=self._rng_sgnn,
                )
                bootstrap = float(boot_v[0])
            advantages = compute_advantages(rewards, v_tot, bootstrap, cfg.gamma, done)
            if frozen_adv is None:
                frozen_adv = advantages.copy()
            actor_adv = advantages if cfg.recompute_advantages else frozen_adv

            result = self.model.agents.surrogate(
                obs, actions, logp_old, actor_adv, cfg.clip_epsilon
            )
            self.adam_actor.step()
            self.model.value_backward(tape, -advantages / size)
            self.adam_value.step()

            critic_loss = float(np.mean(0.5 * advantages**2))
            if not (np.isfinite(result.loss) and np.isfinite(critic_loss)):
                raise TrainingAborted(
                    f"non-finite loss at update {self.updates} "
                    f"(actor={result.loss}, critic={critic_loss})"
                )
            actor_losses.append(result.loss)
            critic_losses.append(critic_loss)
        self.updates += 1
        return float(np.mean(actor_losses)), float(np.mean(critic_losses))

    # -- evaluation ------------------------------------------------------------
    def evaluate(
        self,
        episodes: int,
        scope: tuple = ("eval",),
        dump_path: str | Path | None = None,
    ) -> np.ndarray:
        """Deterministic-policy utilities: reward sum over the episode divided
        by the maximum episode length, even when it terminates early."""
        cfg = self.cfg.scenario
        utilities = []
        writer = TrajectoryWriter(dump_path) if dump_path else None
        for k in range(episodes):
            _, obs = self.eval_env.reset(substream(self.seed, *scope, k))
            total = 0.0
            for _ in range(cfg.horizon):
                actions, _ = self.model.agents.act_joint(obs, deterministic=True)
                result = self.eval_env.step(actions)
                total += result.reward
                if writer is not None and k == 0:
                    velocities = [veh.velocity for veh in self.eval_env.vehicles()]
                    positions = [veh.position for veh in self.eval_env.vehicles()]
                    writer.record(self.eval_env.t, positions, velocities, result.reward, result.collision)
                obs = result.observations
                if result.done:
                    break
            utilities.append(total / cfg.horizon)
        if writer is not None:
            writer.close()
        return np.array(utilities)

    # -- full run ---------------------------------------------------------------
    def train(self) -> dict:
        cfg = self.cfg
        out = self.out_dir
        metrics_path = checkpoint_dir = None
        metrics_handle = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.json").write_text(cfg.model_dump_json(indent=2), encoding="utf-8")
            (out / "run.json").write_text(
                json.dumps(
                    {
                        "seed": self.seed,
                        "version": __version__,
                        "git_describe": _git_describe(),
                        "scenario": cfg.scenario.kind,
                        "params_per_agent": self.model.params_per_agent(),
                    },
                    indent=2,
                ),
                encoding="utf-8",
            )
            checkpoint_dir = out / "checkpoints"
            checkpoint_dir.mkdir(exist_ok=True)
            metrics_path = out / "metrics.csv"
            metrics_handle = open(metrics_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(metrics_handle) if metrics_handle else None
        if writer:
            writer.writerow(METRICS_COLUMNS)

        train_cfg = cfg.train
        batch = Batch(train_cfg.n_batch, self.env.n_agents, self.env.obs_dim, self.env.state_dim)
        rows: list[EpisodeRow] = []
        final_eval: tuple[float, float] | None = None
        try:
            for episode in range(1, train_cfg.n_episodes + 1):
                state, obs = self.env.reset(substream(self.seed, "env", episode))
                ep_return = 0.0
                collided = 0
                ep_actor, ep_critic = [], []
                for _ in range(cfg.scenario.horizon):
                    actions, logp = self.model.agents.act_joint(obs, self._rng_policy)
                    result = self.env.step(actions)
                    batch.append(
                        state, obs, actions, logp, result.reward,
                        result.state, result.observations,
                    )
                    ep_return += result.reward
                    if batch.full or result.done:
                        a_loss, c_loss = self.update(batch, result.done)
                        ep_actor.append(a_loss)
                        ep_critic.append(c_loss)
                        batch.clear()
                    state, obs = result.state, result.observations
                    if result.done:
                        collided = int(result.collision)
                        break

                eval_mean = eval_std = None
                if episode % train_cfg.eval_every == 0:
                    utilities = self.evaluate(train_cfg.eval_episodes, ("eval", episode))
                    eval_mean = float(np.mean(utilities))
                    eval_std = float(np.std(utilities))
                    final_eval = (eval_mean, eval_std)
                    if checkpoint_dir is not None:
                        path = checkpoint_dir / f"ep{episode:04d}.json"
                        path.write_text(json.dumps(self.model.checkpoint()), encoding="utf-8")

                row = EpisodeRow(
                    episode,
                    ep_return,
                    eval_mean,
                    eval_std,
                    float(np.mean(ep_actor)) if ep_actor else 0.0,
                    float(np.mean(ep_critic)) if ep_critic else 0.0,
                    collided,
                    self.updates,
                )
                rows.append(row)
                if writer:
                    writer.writerow(row.as_csv())
                    metrics_handle.flush()
                if self.progress is not None:
                    self.progress(episode, train_cfg.n_episodes)
        finally:
            if metrics_handle:
                metrics_handle.close()

        checkpoint_path = None
        if out is not None:
            checkpoint_path = out / "checkpoint.json"
            checkpoint_path.write_text(json.dumps(self.model.checkpoint()), encoding="utf-8")
        return {
            "episodes": len(rows),
            "updates": self.updates,
            "final_eval_mean": final_eval[0] if final_eval else None,
            "final_eval_std": final_eval[1] if final_eval else None,
            "final_train_return": rows[-1].train_return if rows else None,
            "out_dir": str(out) if out else None,
            "metrics_path": str(metrics_path) if metrics_path else None,
            "checkpoint_path": str(checkpoint_path) if checkpoint_path else None,
            "params_per_agent": self.model.params_per_agent(),
        }


def run_training(
    cfg: RunConfig,
    seed: int,
    out_dir: str | Path | None,
    progress: ProgressCallback | None = None,
) -> dict:
    trainer = Trainer(cfg, seed, out_dir, progress)
    return trainer.train()


def evaluate_checkpoint(
    cfg: RunConfig,
    checkpoint: dict,
    episodes: int,
    seed: int = 0,
    dump_path: str | Path | None = None,
) -> dict:
    """Deterministic evaluation of stored parameters under a config."""
    trainer = Trainer(cfg, seed)
    trainer.model.load_checkpoint(checkpoint)
    utilities = trainer.evaluate(episodes, ("standalone-eval",), dump_path=dump_path)
    return {
        "episodes": episodes,
        "utility_mean": float(np.mean(utilities)),
        "utility_std": float(np.std(utilities)),
        "utilities": [float(u) for u in utilities],
    }


def random_policy_utilities(cfg: RunConfig, episodes: int, seed: int = 0) -> np.ndarray:
    """Utility of uniform-random accelerations; baseline for learning checks."""
    env = make_env(cfg.scenario)
    rng = substream(seed, "random-baseline")
    scenario = cfg.scenario
    utilities = []
    for _ in range(episodes):
        env.reset(rng)
        total = 0.0
        for _ in range(scenario.horizon):
            actions = rng.uniform(scenario.accel_min, scenario.accel_max, env.n_agents)
            result = env.step(actions)
            total += result.reward
            if result.done:
                break
        utilities.append(total / scenario.horizon)
    return np.array(utilities)


SWEEP_PARAMS = {
    "p": ("sgnn", "p", float),
    "K": ("sgnn", "order", int),
    "F": ("sgnn", "n_filters", int),
}


def sweep_config(cfg: RunConfig, param: str, value) -> RunConfig:
    """Copy of cfg with exactly one filter-bank hyperparameter replaced."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"sweep parameter must be one of {sorted(SWEEP_PARAMS)}")
    section, field_name, caster = SWEEP_PARAMS[param]
    data = cfg.model_dump()
    data[section][field_name] = caster(value)
    return RunConfig.model_validate(data)


def run_sweep(
    cfg: RunConfig,
    param: str,
    values: list,
    out_root: str | Path | None,
    progress: ProgressCallback | None = None,
) -> dict:
    """Vary one of {p, K, F} across values x seeds; others stay at the config."""
    root = Path(out_root) if out_root is not None else output_root(cfg.out_dir) / "sweep"
    root.mkdir(parents=True, exist_ok=True)
    runs = []
    total = len(values) * len(cfg.seeds)
    done = 0
    for value in values:
        derived = sweep_config(cfg, param, value)
        for seed in cfg.seeds:
            out_dir = root / f"{param}_{value}" / f"seed_{seed}"
            summary = run_training(derived, seed, out_dir)
            runs.append(
                {
                    "param": param,
                    "value": value,
                    "seed": seed,
                    "out_dir": str(out_dir),
                    "final_eval_mean": summary["final_eval_mean"],
                    "final_eval_std": summary["final_eval_std"],
                }
            )
            done += 1
            if progress is not None:
                progress(done, total)
    manifest = {"param": param, "values": list(values), "seeds": list(cfg.seeds), "runs": runs}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest
