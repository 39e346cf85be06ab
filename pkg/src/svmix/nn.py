"""Minimal dense neural-network substrate with reverse-mode gradients.

Everything trainable in the system (actors, critics, the filter-output
readout, and the mixer hypernetworks) is a small multilayer perceptron
whose parameters live in one flat vector per network inside a shared
:class:`ParamStore`. Forward passes record a tape; backward passes
consume the tape exactly once and accumulate gradients into the store.
Updates are applied by :class:`Adam` instances scoped to named parameter
groups, so e.g. the policy step can never touch value-stack parameters.
"""
from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np


class AutodiffError(RuntimeError):
    """Shape mismatches, tape reuse, and other contract violations."""


class NonFiniteGradientError(FloatingPointError):
    """Raised when an optimizer step sees NaN or infinite gradients."""


# ---------------------------------------------------------------------------
# activations


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _relu_grad(z: np.ndarray) -> np.ndarray:
    return (z > 0.0).astype(float)


def _elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, z, np.expm1(z))


def _elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))


def _tanh_grad(z: np.ndarray) -> np.ndarray:
    return 1.0 - np.tanh(z) ** 2


def _identity(z: np.ndarray) -> np.ndarray:
    return z


def _ones(z: np.ndarray) -> np.ndarray:
    return np.ones_like(z)


ACTIVATIONS = {
    "relu": (_relu, _relu_grad, math.sqrt(2.0)),
    "elu": (_elu, _elu_grad, math.sqrt(2.0)),
    "tanh": (np.tanh, _tanh_grad, 1.0),
    "identity": (_identity, _ones, 1.0),
}


# ---------------------------------------------------------------------------
# parameter storage


class ParamStore:
    """Flat learnable-parameter vector with named, disjoint slices.

    ``values`` and ``grads`` always have equal length; gradient writes
    accumulate. Group queries use name prefixes ("actor/", "critic/",
    "sgnn/", "mixer/").
    """

    def __init__(self, sizes: Mapping[str, int]):
        self._layout: dict[str, slice] = {}
        offset = 0
        for name, size in sizes.items():
            if size <= 0:
                raise AutodiffError(f"parameter slice {name!r} must be non-empty")
            if name in self._layout:
                raise AutodiffError(f"duplicate parameter slice {name!r}")
            self._layout[name] = slice(offset, offset + int(size))
            offset += int(size)
        self.values = np.zeros(offset)
        self.grads = np.zeros(offset)

    # -- layout ------------------------------------------------------------
    @property
    def n_params(self) -> int:
        return self.values.size

    def slice_of(self, name: str) -> slice:
        return self._layout[name]

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._layout if n.startswith(prefix)]

    def size(self, prefix: str = "") -> int:
        return sum(self._layout[n].stop - self._layout[n].start for n in self.names(prefix))

    # -- views ---------------------------------------------------------------
    def view(self, name: str) -> np.ndarray:
        return self.values[self._layout[name]]

    def grad_view(self, name: str) -> np.ndarray:
        return self.grads[self._layout[name]]

    def _block_range(self, names: Sequence[str]) -> tuple[int, int, int]:
        slices = [self._layout[n] for n in names]
        per = slices[0].stop - slices[0].start
        for prev, cur in zip(slices, slices[1:]):
            if cur.start != prev.stop or cur.stop - cur.start != per:
                raise AutodiffError("block view needs contiguous equally-sized slices")
        return slices[0].start, slices[-1].stop, per

    def block(self, names: Sequence[str]) -> np.ndarray:
        """(len(names), size) view over consecutive equally-sized slices."""
        start, stop, per = self._block_range(names)
        return self.values[start:stop].reshape(len(names), per)

    def block_grads(self, names: Sequence[str]) -> np.ndarray:
        start, stop, per = self._block_range(names)
        return self.grads[start:stop].reshape(len(names), per)

    # -- lifecycle -----------------------------------------------------------
    def zero_grads(self, prefix: str = "") -> None:
        for name in self.names(prefix):
            self.grads[self._layout[name]] = 0.0

    def snapshot(self, prefix: str = "") -> np.ndarray:
        idx = self.indices(prefix)
        return self.values[idx].copy()

    def indices(self, prefix: str = "") -> np.ndarray:
        parts = [np.arange(self._layout[n].start, self._layout[n].stop) for n in self.names(prefix)]
        if not parts:
            return np.zeros(0, dtype=int)
        return np.concatenate(parts)

    # -- checkpointing ---------------------------------------------------------
    def checkpoint(self) -> dict:
        return {
            "format": "svmix-params",
            "version": 1,
            "layout": [[n, s.start, s.stop] for n, s in self._layout.items()],
            "values": self.values.tolist(),
        }

    @classmethod
    def from_checkpoint(cls, data: dict) -> "ParamStore":
        if data.get("format") != "svmix-params":
            raise AutodiffError("not a parameter checkpoint")
        sizes = {name: stop - start for name, start, stop in data["layout"]}
        store = cls(sizes)
        values = np.asarray(data["values"], dtype=float)
        if values.size != store.n_params:
            raise AutodiffError("checkpoint length does not match layout")
        store.values[:] = values
        return store

    def load_checkpoint(self, data: dict) -> None:
        other = ParamStore.from_checkpoint(data)
        if other._layout != self._layout:
            raise AutodiffError("checkpoint layout does not match this store")
        self.values[:] = other.values


# ---------------------------------------------------------------------------
# multilayer perceptrons


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths plus one activation name per layer."""

    widths: tuple[int, ...]
    activations: tuple[str, ...]
    output_gain: float = 1.0

    def __post_init__(self) -> None:
        if len(self.widths) < 2:
            raise AutodiffError("an MLP needs at least one layer")
        if any(w <= 0 for w in self.widths):
            raise AutodiffError("layer widths must be positive")
        if len(self.activations) != len(self.widths) - 1:
            raise AutodiffError("need exactly one activation per layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise AutodiffError(f"unknown activation {act!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def n_params(self) -> int:
        return sum(
            o * i + o for i, o in zip(self.widths[:-1], self.widths[1:])
        )

    def layer_offsets(self) -> list[tuple[int, int, int, int]]:
        """Per-layer (weight_offset, bias_offset, fan_in, fan_out) in the flat slice."""
        offsets = []
        pos = 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            offsets.append((pos, pos + fan_out * fan_in, fan_in, fan_out))
            pos += fan_out * fan_in + fan_out
        return offsets

    def init_values(self, rng: np.random.Generator) -> np.ndarray:
        """Scaled-uniform weights (zero biases); the last layer uses output_gain."""
        flat = np.zeros(self.n_params)
        for layer, (woff, boff, fan_in, fan_out) in enumerate(self.layer_offsets()):
            if layer == self.n_layers - 1:
                gain = self.output_gain
            else:
                gain = ACTIVATIONS[self.activations[layer]][2]
            bound = gain * math.sqrt(6.0 / (fan_in + fan_out))
            flat[woff:boff] = rng.uniform(-bound, bound, size=fan_out * fan_in)
        return flat


@dataclass
class MlpTape:
    """Intermediates of one forward pass; consumed by exactly one backward."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    batched: bool
    consumed: bool = False


class Mlp:
    """A single MLP whose parameters occupy one named slice of a store."""

    def __init__(self, spec: MlpSpec, store: ParamStore, name: str):
        self.spec = spec
        self.store = store
        self.name = name
        if store.view(name).size != spec.n_params:
            raise AutodiffError(f"slice {name!r} does not match spec size {spec.n_params}")
        self._offsets = spec.layer_offsets()

    def init_params(self, rng: np.random.Generator) -> None:
        self.store.view(self.name)[:] = self.spec.init_values(rng)

    def _layer(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        woff, boff, fan_in, fan_out = self._offsets[layer]
        flat = self.store.view(self.name)
        return flat[woff:boff].reshape(fan_out, fan_in), flat[boff : boff + fan_out]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, MlpTape]:
        x = np.asarray(x, dtype=float)
        batched = x.ndim == 2
        out = x if batched else x[None, :]
        if out.ndim != 2 or out.shape[1] != self.spec.widths[0]:
            raise AutodiffError(
                f"{self.name}: expected input width {self.spec.widths[0]}, got shape {x.shape}"
            )
        inputs, preacts = [], []
        for layer in range(self.spec.n_layers):
            weight, bias = self._layer(layer)
            inputs.append(out)
            z = out @ weight.T + bias
            preacts.append(z)
            out = ACTIVATIONS[self.spec.activations[layer]][0](z)
        return (out if batched else out[0]), MlpTape(inputs, preacts, batched)

    def backward(self, tape: MlpTape, upstream: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the gradient w.r.t. the input."""
        if tape.consumed:
            raise AutodiffError(f"{self.name}: tape already consumed")
        tape.consumed = True
        d_out = np.asarray(upstream, dtype=float)
        if not tape.batched:
            d_out = d_out[None, :]
        flat_grads = self.store.grad_view(self.name)
        for layer in reversed(range(self.spec.n_layers)):
            woff, boff, fan_in, fan_out = self._offsets[layer]
            weight, _ = self._layer(layer)
            d_z = d_out * ACTIVATIONS[self.spec.activations[layer]][1](tape.preacts[layer])
            flat_grads[woff:boff] += (d_z.T @ tape.inputs[layer]).ravel()
            flat_grads[boff : boff + fan_out] += d_z.sum(axis=0)
            d_out = d_z @ weight
        return d_out if tape.batched else d_out[0]


@dataclass
class EnsembleTape:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    consumed: bool = False


class EnsembleMlp:
    """N structurally identical MLPs (one per agent) evaluated in one einsum.

    Member parameters stay addressable as the individual named slices;
    the ensemble only requires them to be registered consecutively.
    """

    def __init__(self, spec: MlpSpec, store: ParamStore, member_names: Sequence[str]):
        self.spec = spec
        self.store = store
        self.member_names = list(member_names)
        store._block_range(self.member_names)  # validates contiguity
        self._offsets = spec.layer_offsets()

    @property
    def n_members(self) -> int:
        return len(self.member_names)

    def init_params(self, rng: np.random.Generator) -> None:
        for name in self.member_names:
            self.store.view(name)[:] = self.spec.init_values(rng)

    def _layer(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        woff, boff, fan_in, fan_out = self._offsets[layer]
        block = self.store.block(self.member_names)
        weight = block[:, woff:boff].reshape(self.n_members, fan_out, fan_in)
        bias = block[:, boff : boff + fan_out]
        return weight, bias

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, EnsembleTape]:
        """x: (batch, n_members, fan_in) -> (batch, n_members, fan_out)."""
        out = np.asarray(x, dtype=float)
        if out.ndim != 3 or out.shape[1] != self.n_members or out.shape[2] != self.spec.widths[0]:
            raise AutodiffError(
                f"ensemble expected shape (B, {self.n_members}, {self.spec.widths[0]}), got {out.shape}"
            )
        inputs, preacts = [], []
        for layer in range(self.spec.n_layers):
            weight, bias = self._layer(layer)
            inputs.append(out)
            z = np.einsum("bni,noi->bno", out, weight) + bias[None, :, :]
            preacts.append(z)
            out = ACTIVATIONS[self.spec.activations[layer]][0](z)
        return out, EnsembleTape(inputs, preacts)

    def backward(self, tape: EnsembleTape, upstream: np.ndarray) -> np.ndarray:
        if tape.consumed:
            raise AutodiffError("ensemble tape already consumed")
        tape.consumed = True
        d_out = np.asarray(upstream, dtype=float)
        grad_block = self.store.block_grads(self.member_names)
        for layer in reversed(range(self.spec.n_layers)):
            woff, boff, fan_in, fan_out = self._offsets[layer]
            weight, _ = self._layer(layer)
            d_z = d_out * ACTIVATIONS[self.spec.activations[layer]][1](tape.preacts[layer])
            d_weight = np.einsum("bno,bni->noi", d_z, tape.inputs[layer])
            grad_block[:, woff:boff] += d_weight.reshape(self.n_members, -1)
            grad_block[:, boff : boff + fan_out] += d_z.sum(axis=0)
            d_out = np.einsum("bno,noi->bni", d_z, weight)
        return d_out


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adam over the union of the named groups; steps zero the gradients it consumed."""

    def __init__(self, store: ParamStore, prefixes: Iterable[str], cfg: AdamConfig = AdamConfig()):
        self.store = store
        self.cfg = cfg
        idx = [store.indices(prefix) for prefix in prefixes]
        self._idx = np.concatenate(idx) if idx else np.zeros(0, dtype=int)
        if self._idx.size == 0:
            raise AutodiffError("optimizer has no parameters")
        self._m = np.zeros(self._idx.size)
        self._v = np.zeros(self._idx.size)
        self._t = 0

    def step(self, lr: float | None = None) -> None:
        grads = self.store.grads[self._idx]
        if not np.all(np.isfinite(grads)):
            bad = int(np.argmin(np.isfinite(grads)))
            raise NonFiniteGradientError(
                f"non-finite gradient at flat index {self._idx[bad]} (value {grads[bad]!r})"
            )
        cfg = self.cfg
        self._t += 1
        self._m = cfg.beta1 * self._m + (1.0 - cfg.beta1) * grads
        self._v = cfg.beta2 * self._v + (1.0 - cfg.beta2) * grads**2
        m_hat = self._m / (1.0 - cfg.beta1**self._t)
        v_hat = self._v / (1.0 - cfg.beta2**self._t)
        step_lr = cfg.lr if lr is None else lr
        self.store.values[self._idx] -= step_lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        self.store.grads[self._idx] = 0.0
