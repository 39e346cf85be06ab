"""Stochastic graph filtering of per-agent state values.

A bank of F parallel order-K graph filters runs each input signal
through a fresh random sequence of sampled shift operators
(``u = sum_k h_k S_k ... S_1 v``), applies a ReLU, and integrates the F
per-node features into one aggregated value per node through a shared
two-layer readout MLP. The sampled shifts are logged so the backward
pass differentiates the realized network exactly, treating the samples
as constants.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import (
    Graph,
    ShiftSample,
    ShiftVariant,
    assemble_shifts,
    edge_matrices,
    polynomial_in_expected_shift,
)
from .nn import AutodiffError, Mlp, MlpSpec, MlpTape, ParamStore


@dataclass(frozen=True)
class FilterBank:
    """Shape and sampling parameters of the filter bank."""

    n_filters: int
    order: int
    p: float
    variant: ShiftVariant

    def __post_init__(self) -> None:
        if self.n_filters < 1 or self.order < 0:
            raise AutodiffError("filter bank needs n_filters >= 1 and order >= 0")
        if not (0.0 < self.p <= 1.0):
            raise AutodiffError(f"edge-keep probability must be in (0, 1], got {self.p}")

    @property
    def n_coeffs(self) -> int:
        return self.n_filters * (self.order + 1)


def filter_forward(v: np.ndarray, coeffs: np.ndarray, shifts: list[np.ndarray | ShiftSample]) -> np.ndarray:
    """Run one graph filter over an explicit shift sequence.

    ``coeffs`` has length K+1 (tap 0 is the identity term); ``shifts``
    holds the K sampled operators in application order.
    """
    v = np.asarray(v, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    mats = [s.matrix if isinstance(s, ShiftSample) else np.asarray(s, dtype=float) for s in shifts]
    if len(mats) != len(coeffs) - 1:
        raise AutodiffError(f"need {len(coeffs) - 1} shifts for {len(coeffs)} coefficients")
    out = coeffs[0] * v
    signal = v
    for k, mat in enumerate(mats, start=1):
        if mat.shape != (v.size, v.size):
            raise AutodiffError(f"shift {k} has shape {mat.shape}, expected {(v.size, v.size)}")
        signal = mat @ signal
        out = out + coeffs[k] * signal
    return out


@dataclass
class SgnnTape:
    """Forward intermediates: diffused signals, realized shifts, readout tape."""

    signals: np.ndarray  # (K+1, B, F, N) diffused input per tap
    shifts: np.ndarray  # (B, F, K, N, N) realized shift operators
    preact: np.ndarray  # (B, F, N) filter outputs before the ReLU
    readout_tape: MlpTape
    consumed: bool = False


@dataclass
class SgnnOutput:
    """Aggregated per-agent values plus everything needed for exact backward."""

    v_agg: np.ndarray  # (N,)
    per_filter: np.ndarray  # (F, N) post-ReLU filter outputs
    shift_log: np.ndarray  # (F, K, N, N) sampled shifts of this call
    tape: SgnnTape


class Sgnn:
    """Filter bank plus shared per-node readout, parameterized from a store.

    Coefficients live in the ``<name>/coeffs`` slice as an (F, K+1)
    matrix; the readout MLP (F -> hidden -> 1, weights shared across
    nodes) lives in ``<name>/readout``.
    """

    def __init__(
        self,
        bank: FilterBank,
        graph: Graph,
        store: ParamStore,
        name: str = "sgnn",
        readout_hidden: int = 32,
    ):
        self.bank = bank
        self.graph = graph
        self.store = store
        self.name = name
        self.readout = Mlp(
            MlpSpec((bank.n_filters, readout_hidden, 1), ("relu", "identity")),
            store,
            f"{name}/readout",
        )
        self._edge_basis = edge_matrices(graph, bank.variant)

    @staticmethod
    def param_sizes(bank: FilterBank, readout_hidden: int = 32, name: str = "sgnn") -> dict[str, int]:
        readout = MlpSpec((bank.n_filters, readout_hidden, 1), ("relu", "identity"))
        return {f"{name}/coeffs": bank.n_coeffs, f"{name}/readout": readout.n_params}

    # -- parameters ---------------------------------------------------------
    @property
    def coefficients(self) -> np.ndarray:
        """(F, K+1) view of the filter taps."""
        return self.store.view(f"{self.name}/coeffs").reshape(
            self.bank.n_filters, self.bank.order + 1
        )

    def init_params(self, rng: np.random.Generator) -> None:
        # Shift powers grow like the spectral bound of the operator, so
        # higher-order taps start proportionally smaller.
        max_degree = float(self.graph.adjacency.sum(axis=1).max()) if self.graph.n_edges else 1.0
        if self.bank.variant is ShiftVariant.LAPLACIAN:
            spectral_bound = max(1.0, 2.0 * max_degree * self.bank.p)
        else:
            spectral_bound = max(1.0, 1.0 + max_degree * self.bank.p)
        coeffs = self.coefficients
        for k in range(self.bank.order + 1):
            scale = 1.0 / ((self.bank.order + 1) * spectral_bound**k)
            coeffs[:, k] = rng.uniform(-scale, scale, size=self.bank.n_filters)
        self.readout.init_params(rng)

    # -- sampling --------------------------------------------------------------
    def draw_shifts(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        """Fresh (batch, F, K, N, N) shift operators, independent per filter and tap."""
        bank = self.bank
        keeps = rng.random((batch, bank.n_filters, bank.order, self.graph.n_edges)) < bank.p
        shifts = np.tensordot(keeps.astype(float), self._edge_basis, axes=([-1], [0]))
        if bank.variant is ShiftVariant.ADJACENCY_PLUS_IDENTITY:
            shifts = shifts + np.eye(self.graph.n_vertices)
        return shifts

    # -- forward/backward ---------------------------------------------------
    def forward_batch(
        self,
        values: np.ndarray,
        rng: np.random.Generator | None = None,
        shifts: np.ndarray | None = None,
    ) -> tuple[np.ndarray, SgnnTape]:
        """values: (B, N) per-agent inputs -> (B, N) aggregated values."""
        values = np.asarray(values, dtype=float)
        n = self.graph.n_vertices
        if values.ndim != 2 or values.shape[1] != n:
            raise AutodiffError(f"expected (B, {n}) input, got {values.shape}")
        batch = values.shape[0]
        bank = self.bank
        if shifts is None:
            if rng is None:
                raise AutodiffError("forward needs either an RNG or explicit shifts")
            shifts = self.draw_shifts(rng, batch)
        if shifts.shape != (batch, bank.n_filters, bank.order, n, n):
            raise AutodiffError(f"shift pack has shape {shifts.shape}")

        signals = np.empty((bank.order + 1, batch, bank.n_filters, n))
        signals[0] = np.broadcast_to(values[:, None, :], (batch, bank.n_filters, n))
        for k in range(1, bank.order + 1):
            signals[k] = np.einsum("bfij,bfj->bfi", shifts[:, :, k - 1], signals[k - 1])
        preact = np.einsum("kbfn,fk->bfn", signals, self.coefficients)
        features = np.maximum(preact, 0.0).transpose(0, 2, 1)  # (B, N, F)
        flat, readout_tape = self.readout.forward(features.reshape(batch * n, bank.n_filters))
        v_agg = flat.reshape(batch, n)
        return v_agg, SgnnTape(signals, shifts, preact, readout_tape)

    def backward_batch(self, tape: SgnnTape, upstream: np.ndarray) -> np.ndarray:
        """Accumulate tap/readout gradients; returns gradient w.r.t. the inputs."""
        if tape.consumed:
            raise AutodiffError("sgnn tape already consumed")
        tape.consumed = True
        batch, n_filters, n = tape.preact.shape
        d_flat = np.asarray(upstream, dtype=float).reshape(batch * n, 1)
        d_features = self.readout.backward(tape.readout_tape, d_flat)
        d_preact = d_features.reshape(batch, n, n_filters).transpose(0, 2, 1)
        d_preact = d_preact * (tape.preact > 0.0)

        coeffs = self.coefficients
        d_coeffs = np.einsum("bfn,kbfn->fk", d_preact, tape.signals)
        self.store.grad_view(f"{self.name}/coeffs")[:] += d_coeffs.ravel()

        order = self.bank.order
        grad_signal = coeffs[:, order][None, :, None] * d_preact
        for k in range(order - 1, -1, -1):
            grad_signal = np.einsum("bfij,bfi->bfj", tape.shifts[:, :, k], grad_signal)
            grad_signal = grad_signal + coeffs[:, k][None, :, None] * d_preact
        return grad_signal.sum(axis=1)

    # -- single-sample surface ------------------------------------------------
    def forward(
        self,
        v: np.ndarray,
        rng: np.random.Generator | None = None,
        shifts: np.ndarray | None = None,
    ) -> SgnnOutput:
        """Filter one length-N signal; fresh shift sequences per filter."""
        v = np.asarray(v, dtype=float)
        if shifts is not None:
            shifts = np.asarray(shifts, dtype=float)[None]
        v_agg, tape = self.forward_batch(v[None, :], rng=rng, shifts=shifts)
        per_filter = np.maximum(tape.preact[0], 0.0)
        return SgnnOutput(v_agg[0], per_filter, tape.shifts[0], tape)

    def backward(self, output: SgnnOutput, upstream: np.ndarray) -> np.ndarray:
        return self.backward_batch(output.tape, np.asarray(upstream, dtype=float)[None, :])[0]

    # -- analysis ----------------------------------------------------------------
    def expected_filter_response(self) -> np.ndarray:
        """(F, N, N) expected response matrices h0*I + sum h_k * mean_shift^k."""
        coeffs = self.coefficients
        return np.stack(
            [
                polynomial_in_expected_shift(self.graph, coeffs[f], self.bank.p, self.bank.variant)
                for f in range(self.bank.n_filters)
            ]
        )


def enumerate_expected_filter(
    g: Graph, h: np.ndarray, p: float, variant: ShiftVariant
) -> np.ndarray:
    """Exact E[h0*I + sum_k h_k S_k...S_1] by exhaustive edge-subset enumeration.

    Sums over all (2^E)^K keep-mask sequences weighted by their Bernoulli
    probabilities. Exponential in K*E; intended as an independent oracle
    on small graphs.
    """
    h = np.asarray(h, dtype=float)
    n_edges = g.n_edges
    order = len(h) - 1
    masks = [np.array([(s >> e) & 1 for e in range(n_edges)], dtype=bool) for s in range(2**n_edges)]
    mask_shifts = [assemble_shifts(g, m, variant) for m in masks]
    mask_probs = [float(p ** m.sum() * (1 - p) ** (n_edges - m.sum())) for m in masks]

    expected = h[0] * np.eye(g.n_vertices)
    # E[S_k ... S_1] factorizes by independence, but enumerate literally:
    # running_products[i] holds E-weighted products over all k-sequences.
    running: list[tuple[float, np.ndarray]] = [(1.0, np.eye(g.n_vertices))]
    for k in range(1, order + 1):
        nxt: list[tuple[float, np.ndarray]] = []
        for weight, product in running:
            for mask_p, mat in zip(mask_probs, mask_shifts):
                nxt.append((weight * mask_p, mat @ product))
        running = nxt
        term = sum(weight * product for weight, product in running)
        expected = expected + h[k] * term
    return expected
