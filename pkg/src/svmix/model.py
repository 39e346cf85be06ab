"""The composed learner.

One flat parameter store carries four groups: per-agent policy nets
("actor/"), per-agent value nets ("critic/"), the filter bank and its
readout ("sgnn/"), and the mixer hypernetworks ("mixer/"). The value
stack chains critics -> stochastic graph filtering -> mixer into one
total state value per sample; its backward pass distributes gradients
to exactly those three groups.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agents import AgentEnsemble, SurrogateResult
from .config import MixerSection, SgnnSection
from .graph import ShiftVariant, complete_graph
from .mixer import Mixer, MixerSpec, MixerTape
from .nn import EnsembleTape, MlpSpec, MlpTape, ParamStore
from .rng import substream
from .sgnn import FilterBank, Sgnn, SgnnTape

CHECKPOINT_FORMAT = "svmix-checkpoint"


@dataclass
class StackTape:
    critic: EnsembleTape
    sgnn: SgnnTape
    mixer: MixerTape


@dataclass
class CriticObjective:
    loss: float
    v_tot: np.ndarray
    tape: StackTape
    margins: dict[str, float]


def _kink_margin(spec: MlpSpec, preacts: list[np.ndarray]) -> float:
    """Distance of the nearest ReLU/ELU preactivation to its kink."""
    margins = [
        float(np.min(np.abs(z)))
        for act, z in zip(spec.activations, preacts)
        if act in ("relu", "elu") and z.size
    ]
    return min(margins, default=math.inf)


class SvmixModel:
    def __init__(
        self,
        n_agents: int,
        obs_dim: int,
        state_dim: int,
        sgnn_cfg: SgnnSection,
        mixer_cfg: MixerSection,
        actor_hidden: tuple[int, ...] = (64, 64),
        critic_hidden: tuple[int, ...] = (64, 64),
        sigma_init: float = 1.5,
        init_seed: int = 0,
    ):
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.state_dim = state_dim
        self.graph = complete_graph(n_agents)
        bank = FilterBank(
            sgnn_cfg.n_filters, sgnn_cfg.order, sgnn_cfg.p, ShiftVariant(sgnn_cfg.variant)
        )
        mixer_spec = MixerSpec(n_agents, state_dim, mixer_cfg.mixing_width, mixer_cfg.hyper_hidden)
        sizes: dict[str, int] = {}
        sizes.update(AgentEnsemble.param_sizes(n_agents, obs_dim, actor_hidden, critic_hidden))
        sizes.update(Sgnn.param_sizes(bank, sgnn_cfg.readout_hidden))
        sizes.update(Mixer.param_sizes(mixer_spec))
        self.store = ParamStore(sizes)
        self.agents = AgentEnsemble(
            n_agents, obs_dim, self.store, actor_hidden, critic_hidden, sigma_init
        )
        self.sgnn = Sgnn(bank, self.graph, self.store, readout_hidden=sgnn_cfg.readout_hidden)
        self.mixer = Mixer(mixer_spec, self.store)
        init_rng = substream(init_seed, "init")
        self.agents.init_params(init_rng)
        self.sgnn.init_params(init_rng)
        self.mixer.init_params(init_rng)

    # -- value stack ---------------------------------------------------------
    def value_forward(
        self,
        obs: np.ndarray,
        states: np.ndarray,
        rng: np.random.Generator | None = None,
        shifts: np.ndarray | None = None,
    ) -> tuple[np.ndarray, StackTape]:
        """obs: (B, N, obs_dim), states: (B, state_dim) -> total values (B,)."""
        values, critic_tape = self.agents.values_forward(obs)
        v_agg, sgnn_tape = self.sgnn.forward_batch(values, rng=rng, shifts=shifts)
        v_tot, mixer_tape = self.mixer.forward_batch(v_agg, states)
        return v_tot, StackTape(critic_tape, sgnn_tape, mixer_tape)

    def value_backward(self, tape: StackTape, upstream: np.ndarray) -> None:
        d_vagg = self.mixer.backward_batch(tape.mixer, upstream)
        d_values = self.sgnn.backward_batch(tape.sgnn, d_vagg)
        self.agents.values_backward(tape.critic, d_values)

    # -- differentiable objectives (evaluation-only paths for gradient checks)
    def critic_objective(
        self,
        obs: np.ndarray,
        states: np.ndarray,
        targets: np.ndarray,
        shifts: np.ndarray,
    ) -> CriticObjective:
        """Mean half-squared error of the value stack against fixed targets.

        Shifts are supplied explicitly so repeated evaluations (finite
        differences) see the identical realized filter network.
        """
        v_tot, tape = self.value_forward(obs, states, shifts=shifts)
        loss = float(np.mean(0.5 * (targets - v_tot) ** 2))
        margins = {
            "critic_relu": _kink_margin(self.agents.critic_spec, tape.critic.preacts),
            "filter_relu": float(np.min(np.abs(tape.sgnn.preact))),
            "readout_relu": _kink_margin(self.sgnn.readout.spec, tape.sgnn.readout_tape.preacts),
            "mixer_abs": float(
                min(np.min(np.abs(tape.mixer.raw_w1)), np.min(np.abs(tape.mixer.raw_w2)))
            ),
            "mixer_elu": float(np.min(np.abs(tape.mixer.preact))),
        }
        return CriticObjective(loss, v_tot, tape, margins)

    def actor_objective(
        self,
        obs: np.ndarray,
        actions: np.ndarray,
        logp_old: np.ndarray,
        advantages: np.ndarray,
        epsilon: float,
        accumulate_grads: bool = False,
    ) -> tuple[SurrogateResult, dict[str, float]]:
        result = self.agents.surrogate(
            obs, actions, logp_old, advantages, epsilon, accumulate_grads=accumulate_grads
        )
        margins = {
            "actor_relu": _kink_margin(self.agents.actor_spec, result.tape.preacts),
            "ratio_clip": result.clip_margin,
            "loss_branch": result.branch_margin,
            "ratio_clamp": result.clamp_margin,
        }
        return result, margins

    # -- accounting -----------------------------------------------------------
    def params_per_agent(self) -> int:
        return self.agents.params_per_agent()

    def group_sizes(self) -> dict[str, int]:
        return {
            "actor": self.store.size("actor/"),
            "critic": self.store.size("critic/"),
            "sgnn": self.store.size("sgnn/"),
            "mixer": self.store.size("mixer/"),
        }

    # -- checkpointing ---------------------------------------------------------
    def checkpoint(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "meta": {
                "n_agents": self.n_agents,
                "obs_dim": self.obs_dim,
                "state_dim": self.state_dim,
                "params_per_agent": self.params_per_agent(),
            },
            "params": self.store.checkpoint(),
        }

    def load_checkpoint(self, data: dict) -> None:
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a model checkpoint")
        meta = data.get("meta", {})
        for key, expected in (
            ("n_agents", self.n_agents),
            ("obs_dim", self.obs_dim),
            ("state_dim", self.state_dim),
        ):
            if meta.get(key) != expected:
                raise ValueError(f"checkpoint {key}={meta.get(key)} does not match model {expected}")
        self.store.load_checkpoint(data["params"])
