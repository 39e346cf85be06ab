"""Spectral and sampling diagnostics for the stochastic graph filters.

Backs the ``analyze`` surface: expected-shift spectra, expected filter
response spectra, full-rank witnesses, Monte Carlo unbiasedness
residuals, and the output-variance profile of the filter bank across
edge-keep probabilities and filter orders.
"""
from __future__ import annotations

import numpy as np

from .config import SgnnSection
from .graph import (
    Graph,
    GraphError,
    ShiftVariant,
    complete_graph,
    expected_shift,
    full_rank_witness,
    polynomial_in_expected_shift,
)
from .nn import ParamStore
from .rng import substream
from .sgnn import FilterBank, Sgnn


def realized_filter_matrices(
    g: Graph, h: np.ndarray, p: float, variant: ShiftVariant, draws: int, rng: np.random.Generator
) -> np.ndarray:
    """(draws, n, n) realizations of h0*I + sum_k h_k S_k...S_1."""
    from .graph import edge_matrices

    h = np.asarray(h, dtype=float)
    order = len(h) - 1
    basis = edge_matrices(g, variant)
    keeps = rng.random((draws, order, g.n_edges)) < p
    shifts = np.tensordot(keeps.astype(float), basis, axes=([-1], [0]))
    if variant is ShiftVariant.ADJACENCY_PLUS_IDENTITY:
        shifts = shifts + np.eye(g.n_vertices)
    eye = np.broadcast_to(np.eye(g.n_vertices), (draws, g.n_vertices, g.n_vertices))
    total = h[0] * eye.copy()
    product = eye.copy()
    for k in range(1, order + 1):
        product = np.einsum("mij,mjk->mik", shifts[:, k - 1], product)
        total += h[k] * product
    return total


def monte_carlo_residual(
    g: Graph,
    h: np.ndarray,
    p: float,
    variant: ShiftVariant,
    draws: int = 100_000,
    seed: int = 0,
) -> float:
    """Relative Frobenius distance between the empirical mean of realized
    filters and the closed-form expected response."""
    rng = substream(seed, "mc-residual")
    mean = realized_filter_matrices(g, h, p, variant, draws, rng).mean(axis=0)
    expected = polynomial_in_expected_shift(g, h, p, variant)
    return float(np.linalg.norm(mean - expected) / np.linalg.norm(expected))


def analyze(
    g: Graph,
    coeffs: np.ndarray,
    p: float,
    variant: ShiftVariant | str,
    mc_samples: int = 20_000,
    seed: int = 0,
) -> dict:
    """Full spectral report for one coefficient vector on one graph."""
    variant = ShiftVariant(variant)
    coeffs = np.asarray(coeffs, dtype=float)
    mean_shift = expected_shift(g, p, variant)
    response = polynomial_in_expected_shift(g, coeffs, p, variant)
    report: dict = {
        "graph": {"n": g.n_vertices, "edges": [list(e) for e in g.edges]},
        "p": p,
        "variant": variant.value,
        "coefficients": coeffs.tolist(),
        "expected_shift_eigenvalues": sorted(np.linalg.eigvalsh(mean_shift).tolist(), reverse=True),
        "expected_response_eigenvalues": sorted(np.linalg.eigvalsh(response).tolist(), reverse=True),
    }
    try:
        min_abs, ok = full_rank_witness(g, coeffs, p, variant)
        report["full_rank"] = {"min_abs_eigenvalue": min_abs, "is_full_rank": ok}
    except GraphError as exc:
        report["full_rank"] = {"error": str(exc)}
    if mc_samples > 0:
        report["monte_carlo"] = {
            "samples": mc_samples,
            "seed": seed,
            "relative_residual": monte_carlo_residual(g, coeffs, p, variant, mc_samples, seed),
        }
    return report


def _passthrough_sgnn(
    n_agents: int, n_filters: int, order: int, p: float, variant: ShiftVariant
) -> Sgnn:
    """Filter bank with all taps 1 and a readout that averages the channels.

    With non-negative inputs this makes the aggregated output a plain
    mean of the filter outputs, which isolates the sampling variance.
    """
    graph = complete_graph(n_agents)
    bank = FilterBank(n_filters, order, p, variant)
    store = ParamStore(Sgnn.param_sizes(bank, readout_hidden=n_filters))
    sgnn = Sgnn(bank, graph, store, readout_hidden=n_filters)
    sgnn.coefficients[:] = 1.0
    readout = store.view("sgnn/readout")
    readout[:] = 0.0
    f = n_filters
    readout[: f * f] = np.eye(f).ravel()  # hidden layer passes channels through
    readout[f * f + f : f * f + f + f] = 1.0 / f  # output averages them
    return sgnn


def output_variance(
    n_agents: int = 5,
    n_filters: int = 4,
    order: int = 3,
    p: float = 0.7,
    variant: ShiftVariant | str = ShiftVariant.ADJACENCY_PLUS_IDENTITY,
    draws: int = 10_000,
    seed: int = 0,
) -> float:
    """Across-draw variance of the aggregated output for a fixed input.

    Uses a positive input signal and a pass-through readout so the
    spread reflects only the random edge sampling.
    """
    sgnn = _passthrough_sgnn(n_agents, n_filters, order, p, ShiftVariant(variant))
    v = substream(seed, "variance-input").uniform(0.5, 1.5, n_agents)
    values = np.broadcast_to(v, (draws, n_agents)).copy()
    v_agg, _ = sgnn.forward_batch(values, rng=substream(seed, "variance-draws"))
    return float(np.mean(np.var(v_agg, axis=0)))


def variance_profile(
    p_values: tuple[float, ...] = (0.1, 0.5, 0.9),
    k_values: tuple[int, ...] = (2, 3, 4, 5, 6),
    draws: int = 10_000,
    seed: int = 0,
    sgnn_cfg: SgnnSection | None = None,
) -> dict:
    """Output variance versus edge-keep probability and filter order."""
    base_order = sgnn_cfg.order if sgnn_cfg else 3
    base_p = sgnn_cfg.p if sgnn_cfg else 0.7
    by_p = {p: output_variance(order=base_order, p=p, draws=draws, seed=seed) for p in p_values}
    by_k = {k: output_variance(order=k, p=base_p, draws=draws, seed=seed) for k in k_values}
    return {
        "draws": draws,
        "variance_by_p": {str(k): v for k, v in by_p.items()},
        "variance_by_order": {str(k): v for k, v in by_k.items()},
    }
