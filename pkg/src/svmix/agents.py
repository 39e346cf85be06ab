"""Per-agent Gaussian-policy actors and state-value critics.

Each agent owns an actor MLP emitting the mean of a normal action
distribution (the log of its standard deviation is a separate learnable
scalar per agent) and a critic MLP emitting its individual state value.
The clipped-surrogate pieces (probability ratio, actor loss, critic
loss) are exposed as scalar operations plus batched gradient paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import AutodiffError, EnsembleMlp, EnsembleTape, Mlp, MlpSpec, ParamStore

LOG_TWO_PI = math.log(2.0 * math.pi)
SIGMA_FLOOR = 1e-3
LOG_RATIO_CLAMP = 30.0


@dataclass(frozen=True)
class PolicyOutput:
    mean: float
    std: float


def gaussian_logp(action: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Log-density of a normal distribution, elementwise."""
    z = (np.asarray(action, dtype=float) - mean) / std
    return -np.log(std) - 0.5 * LOG_TWO_PI - 0.5 * z**2


def joint_ratio(logp_new: np.ndarray, logp_old: np.ndarray) -> float:
    """Product of per-agent probability ratios, computed in log space.

    The summed log-difference is clamped to +/-30 before exponentiation
    to keep the ratio finite under pathological updates.
    """
    logp_new = np.asarray(logp_new, dtype=float)
    logp_old = np.asarray(logp_old, dtype=float)
    if logp_new.shape != logp_old.shape:
        raise AutodiffError("per-agent log-probability vectors must have equal length")
    total = float(np.sum(logp_new - logp_old))
    return math.exp(max(-LOG_RATIO_CLAMP, min(LOG_RATIO_CLAMP, total)))


def actor_loss(rho: float, advantage: float, epsilon: float) -> float:
    """Clipped-surrogate contribution of one sample: -min(rho*A, clip(rho)*A)."""
    if not (0.0 < epsilon < 1.0):
        raise AutodiffError(f"clip constant must be in (0, 1), got {epsilon}")
    clipped = min(max(rho, 1.0 - epsilon), 1.0 + epsilon)
    return -min(rho * advantage, clipped * advantage)


def critic_loss(advantage: float) -> float:
    """Half squared advantage."""
    return 0.5 * float(advantage) ** 2


@dataclass
class SurrogateResult:
    loss: float
    rho: np.ndarray  # (B,)
    tape: EnsembleTape
    # kink margins, for finite-difference probes that must avoid
    # nondifferentiable points
    clip_margin: float
    branch_margin: float
    clamp_margin: float


class AgentEnsemble:
    """All N actors and critics over one parameter store.

    Parameter groups: ``actor/net/<i>`` and ``actor/logstd/<i>`` make up
    each agent's policy parameters; ``critic/net/<i>`` its value
    parameters.
    """

    def __init__(
        self,
        n_agents: int,
        obs_dim: int,
        store: ParamStore,
        actor_hidden: tuple[int, ...] = (64, 64),
        critic_hidden: tuple[int, ...] = (64, 64),
        sigma_init: float = 1.5,
    ):
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.store = store
        self.sigma_init = sigma_init
        self.actor_spec = self._actor_spec(obs_dim, actor_hidden)
        self.critic_spec = self._critic_spec(obs_dim, critic_hidden)
        self._actor_names = [f"actor/net/{i}" for i in range(n_agents)]
        self._logstd_names = [f"actor/logstd/{i}" for i in range(n_agents)]
        self._critic_names = [f"critic/net/{i}" for i in range(n_agents)]
        self.actors = EnsembleMlp(self.actor_spec, store, self._actor_names)
        self.critics = EnsembleMlp(self.critic_spec, store, self._critic_names)

    @staticmethod
    def _actor_spec(obs_dim: int, hidden: tuple[int, ...]) -> MlpSpec:
        widths = (obs_dim, *hidden, 1)
        return MlpSpec(widths, ("relu",) * len(hidden) + ("identity",), output_gain=0.01)

    @staticmethod
    def _critic_spec(obs_dim: int, hidden: tuple[int, ...]) -> MlpSpec:
        widths = (obs_dim, *hidden, 1)
        return MlpSpec(widths, ("relu",) * len(hidden) + ("identity",))

    @staticmethod
    def param_sizes(
        n_agents: int,
        obs_dim: int,
        actor_hidden: tuple[int, ...] = (64, 64),
        critic_hidden: tuple[int, ...] = (64, 64),
    ) -> dict[str, int]:
        actor = AgentEnsemble._actor_spec(obs_dim, actor_hidden)
        critic = AgentEnsemble._critic_spec(obs_dim, critic_hidden)
        sizes: dict[str, int] = {}
        for i in range(n_agents):
            sizes[f"actor/net/{i}"] = actor.n_params
        for i in range(n_agents):
            sizes[f"actor/logstd/{i}"] = 1
        for i in range(n_agents):
            sizes[f"critic/net/{i}"] = critic.n_params
        return sizes

    def init_params(self, rng: np.random.Generator) -> None:
        self.actors.init_params(rng)
        self.critics.init_params(rng)
        raw = math.log(max(self.sigma_init - SIGMA_FLOOR, SIGMA_FLOOR))
        self.store.block(self._logstd_names)[:] = raw

    # -- policy ------------------------------------------------------------
    def sigmas(self) -> np.ndarray:
        """Per-agent action standard deviations (floored positive)."""
        raw = self.store.block(self._logstd_names)[:, 0]
        return SIGMA_FLOOR + np.exp(raw)

    def policy_output(self, agent: int, obs: np.ndarray) -> PolicyOutput:
        net = Mlp(self.actor_spec, self.store, self._actor_names[agent])
        mean, _ = net.forward(np.asarray(obs, dtype=float))
        return PolicyOutput(float(mean[0]), float(self.sigmas()[agent]))

    def act(
        self,
        agent: int,
        obs: np.ndarray,
        rng: np.random.Generator | None = None,
        deterministic: bool = False,
    ) -> tuple[float, float]:
        """Sample (or take the mean) action for one agent; returns (a, logp)."""
        out = self.policy_output(agent, obs)
        if not math.isfinite(out.mean):
            raise FloatingPointError(f"actor {agent} produced non-finite mean {out.mean}")
        if deterministic:
            action = out.mean
        else:
            if rng is None:
                raise AutodiffError("stochastic action sampling needs an RNG")
            action = out.mean + out.std * rng.standard_normal()
        logp = float(gaussian_logp(action, out.mean, out.std))
        return action, logp

    def act_joint(
        self,
        obs: np.ndarray,
        rng: np.random.Generator | None = None,
        deterministic: bool = False,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Actions and log-densities for all agents at once; obs: (N, obs_dim)."""
        obs = np.asarray(obs, dtype=float)
        mean, _ = self.actors.forward(obs[None, :, :])
        mean = mean[0, :, 0]
        if not np.all(np.isfinite(mean)):
            raise FloatingPointError("actor ensemble produced non-finite means")
        std = self.sigmas()
        if deterministic:
            actions = mean.copy()
        else:
            if rng is None:
                raise AutodiffError("stochastic action sampling needs an RNG")
            actions = mean + std * rng.standard_normal(self.n_agents)
        return actions, gaussian_logp(actions, mean, std)

    # -- clipped surrogate ------------------------------------------------------
    def surrogate(
        self,
        obs: np.ndarray,
        actions: np.ndarray,
        logp_old: np.ndarray,
        advantages: np.ndarray,
        epsilon: float,
        accumulate_grads: bool = True,
    ) -> SurrogateResult:
        """Batched clipped surrogate; optionally backpropagates into the policy.

        obs: (B, N, obs_dim); actions/logp_old: (B, N); advantages: (B,).
        Advantages are constants here: value-stack parameters receive no
        gradient from the policy objective.
        """
        obs = np.asarray(obs, dtype=float)
        batch = obs.shape[0]
        mean_raw, tape = self.actors.forward(obs)
        mean = mean_raw[:, :, 0]
        std = self.sigmas()
        logp_new = gaussian_logp(actions, mean, std)
        delta = np.sum(logp_new - logp_old, axis=1)
        clamped = np.clip(delta, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
        rho = np.exp(clamped)
        unclipped = rho * advantages
        clipped_rho = np.clip(rho, 1.0 - epsilon, 1.0 + epsilon)
        clipped = clipped_rho * advantages
        take_unclipped = unclipped <= clipped
        loss = -float(np.mean(np.minimum(unclipped, clipped)))

        clip_margin = float(np.min(np.abs(np.stack([rho - (1 - epsilon), rho - (1 + epsilon)]))))
        branch_margin = float(np.min(np.abs(unclipped - clipped)))
        clamp_margin = float(np.min(LOG_RATIO_CLAMP - np.abs(delta)))

        if accumulate_grads:
            inside = (rho > 1.0 - epsilon) & (rho < 1.0 + epsilon)
            d_rho = np.where(take_unclipped, advantages, advantages * inside)
            d_delta = (-1.0 / batch) * d_rho * rho * (np.abs(delta) < LOG_RATIO_CLAMP)
            d_logp = np.broadcast_to(d_delta[:, None], logp_new.shape)
            z = (actions - mean) / std
            d_mean = d_logp * z / std
            d_sigma = d_logp * (z**2 - 1.0) / std
            self.actors.backward(tape, d_mean[:, :, None])
            raw = self.store.block(self._logstd_names)[:, 0]
            d_raw = np.sum(d_sigma, axis=0) * np.exp(raw)
            self.store.block_grads(self._logstd_names)[:, 0] += d_raw
        return SurrogateResult(loss, rho, tape, clip_margin, branch_margin, clamp_margin)

    # -- critics ----------------------------------------------------------------
    def values_forward(self, obs: np.ndarray) -> tuple[np.ndarray, EnsembleTape]:
        """(B, N, obs_dim) observations -> (B, N) individual state values."""
        values, tape = self.critics.forward(np.asarray(obs, dtype=float))
        return values[:, :, 0], tape

    def values_backward(self, tape: EnsembleTape, upstream: np.ndarray) -> np.ndarray:
        return self.critics.backward(tape, np.asarray(upstream, dtype=float)[:, :, None])

    def value(self, agent: int, obs: np.ndarray) -> float:
        net = Mlp(self.critic_spec, self.store, self._critic_names[agent])
        out, _ = net.forward(np.asarray(obs, dtype=float))
        return float(out[0])

    # -- accounting ----------------------------------------------------------
    def params_per_agent(self) -> int:
        """Learnable parameters owned by one agent (policy + value nets)."""
        return self.actor_spec.n_params + 1 + self.critic_spec.n_params
