"""State-conditioned monotone mixing of per-agent values into one total value.

Four hypernetwork heads read the global state and emit the weights and
biases of a tiny two-stage mixing net: ``v_tot = w2 . f(W1 v_agg + b1) + b2``
with f = ELU. The generated W1 and w2 pass through an absolute value, so
the total value is non-decreasing in every agent's aggregated value.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import AutodiffError, Mlp, MlpSpec, MlpTape, ParamStore


def elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, z, np.expm1(z))


def elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))


@dataclass(frozen=True)
class MixerSpec:
    """Shapes of the mixing stage and its hypernetwork heads."""

    n_agents: int
    state_dim: int
    mixing_width: int = 32
    hyper_hidden: int = 64


@dataclass
class MixerTape:
    values: np.ndarray  # (B, N) mixed inputs
    raw_w1: np.ndarray  # (B, C*N) head outputs before the non-negativity map
    raw_w2: np.ndarray  # (B, C)
    weight1: np.ndarray  # (B, C, N) after abs
    weight2: np.ndarray  # (B, C)
    preact: np.ndarray  # (B, C) first-stage preactivation
    hidden: np.ndarray  # (B, C)
    head_tapes: dict[str, MlpTape]
    consumed: bool = False


class Mixer:
    """Hypernetwork-generated monotone mixer over a parameter store."""

    def __init__(self, spec: MixerSpec, store: ParamStore, name: str = "mixer"):
        self.spec = spec
        self.store = store
        self.name = name
        self.heads = {
            key: Mlp(head_spec, store, f"{name}/{key}")
            for key, head_spec in self.head_specs(spec).items()
        }

    @staticmethod
    def head_specs(spec: MixerSpec) -> dict[str, MlpSpec]:
        c, n, s, hidden = spec.mixing_width, spec.n_agents, spec.state_dim, spec.hyper_hidden
        return {
            "w1": MlpSpec((s, hidden, c * n), ("relu", "identity")),
            "b1": MlpSpec((s, c), ("identity",)),
            "w2": MlpSpec((s, hidden, c), ("relu", "identity")),
            "b2": MlpSpec((s, hidden, 1), ("relu", "identity")),
        }

    @staticmethod
    def param_sizes(spec: MixerSpec, name: str = "mixer") -> dict[str, int]:
        return {
            f"{name}/{key}": head_spec.n_params
            for key, head_spec in Mixer.head_specs(spec).items()
        }

    def init_params(self, rng: np.random.Generator) -> None:
        for key in ("w1", "b1", "w2", "b2"):
            self.heads[key].init_params(rng)

    # -- weight generation -------------------------------------------------
    def generate_weights(
        self, state: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        """Hypernetwork heads for one state: (W1, b1, w2, b2), W1/w2 >= 0."""
        state = np.asarray(state, dtype=float)
        if state.shape != (self.spec.state_dim,):
            raise AutodiffError(
                f"expected state width {self.spec.state_dim}, got shape {state.shape}"
            )
        raw_w1, _ = self.heads["w1"].forward(state)
        b1, _ = self.heads["b1"].forward(state)
        raw_w2, _ = self.heads["w2"].forward(state)
        b2, _ = self.heads["b2"].forward(state)
        weight1 = np.abs(raw_w1).reshape(self.spec.mixing_width, self.spec.n_agents)
        return weight1, b1, np.abs(raw_w2), float(b2[0])

    # -- mixing ------------------------------------------------------------------
    def forward_batch(self, values: np.ndarray, states: np.ndarray) -> tuple[np.ndarray, MixerTape]:
        """values: (B, N), states: (B, state_dim) -> total values (B,)."""
        values = np.asarray(values, dtype=float)
        states = np.asarray(states, dtype=float)
        batch = values.shape[0]
        c, n = self.spec.mixing_width, self.spec.n_agents
        if values.shape != (batch, n) or states.shape != (batch, self.spec.state_dim):
            raise AutodiffError(
                f"mixer got values {values.shape} and states {states.shape} for "
                f"N={n}, state_dim={self.spec.state_dim}"
            )
        raw_w1, tape_w1 = self.heads["w1"].forward(states)
        bias1, tape_b1 = self.heads["b1"].forward(states)
        raw_w2, tape_w2 = self.heads["w2"].forward(states)
        bias2, tape_b2 = self.heads["b2"].forward(states)

        weight1 = np.abs(raw_w1).reshape(batch, c, n)
        weight2 = np.abs(raw_w2)
        preact = np.einsum("bcn,bn->bc", weight1, values) + bias1
        hidden = elu(preact)
        v_tot = np.sum(weight2 * hidden, axis=1) + bias2[:, 0]
        tape = MixerTape(
            values,
            raw_w1,
            raw_w2,
            weight1,
            weight2,
            preact,
            hidden,
            {"w1": tape_w1, "b1": tape_b1, "w2": tape_w2, "b2": tape_b2},
        )
        return v_tot, tape

    def backward_batch(self, tape: MixerTape, upstream: np.ndarray) -> np.ndarray:
        """Accumulate hypernetwork gradients; returns gradient w.r.t. values."""
        if tape.consumed:
            raise AutodiffError("mixer tape already consumed")
        tape.consumed = True
        batch = tape.values.shape[0]
        d_vtot = np.asarray(upstream, dtype=float).reshape(batch)

        self.heads["b2"].backward(tape.head_tapes["b2"], d_vtot[:, None])
        d_weight2 = d_vtot[:, None] * tape.hidden
        self.heads["w2"].backward(tape.head_tapes["w2"], d_weight2 * np.sign(tape.raw_w2))

        d_hidden = d_vtot[:, None] * tape.weight2
        d_preact = d_hidden * elu_grad(tape.preact)
        self.heads["b1"].backward(tape.head_tapes["b1"], d_preact)

        d_weight1 = np.einsum("bc,bn->bcn", d_preact, tape.values)
        d_raw_w1 = d_weight1.reshape(batch, -1) * np.sign(tape.raw_w1)
        self.heads["w1"].backward(tape.head_tapes["w1"], d_raw_w1)
        return np.einsum("bcn,bc->bn", tape.weight1, d_preact)

    def mix(self, v_agg: np.ndarray, state: np.ndarray) -> float:
        """Total value for one (values, state) pair."""
        v_tot, _ = self.forward_batch(
            np.asarray(v_agg, dtype=float)[None, :], np.asarray(state, dtype=float)[None, :]
        )
        return float(v_tot[0])

    def value_gradient(self, v_agg: np.ndarray, state: np.ndarray) -> np.ndarray:
        """Analytic d(v_tot)/d(v_agg) for one pair; non-negative by construction."""
        v_tot, tape = self.forward_batch(
            np.asarray(v_agg, dtype=float)[None, :], np.asarray(state, dtype=float)[None, :]
        )
        del v_tot
        return self.backward_batch(tape, np.ones(1))[0]


def mix_given(
    v_agg: np.ndarray,
    weight1: np.ndarray,
    bias1: np.ndarray,
    weight2: np.ndarray,
    bias2: float,
) -> float:
    """Mixing stage with explicitly supplied weights (no hypernetworks)."""
    hidden = elu(weight1 @ np.asarray(v_agg, dtype=float) + bias1)
    return float(weight2 @ hidden + bias2)
