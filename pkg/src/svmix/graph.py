"""Undirected communication graphs, random edge sampling, and shift-operator algebra.

The agents form a fixed underlying graph. Each filter tap of the
stochastic graph filters sees a random subgraph in which every edge of
the underlying graph is kept independently with probability ``p``; the
subgraph is turned into a shift operator (its Laplacian, or its
adjacency plus the identity). This module owns the graph construction,
the Bernoulli edge sampler, the closed-form expected shift operators,
and the full-rank witness used by the analysis surface.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

RANK_TOLERANCE = 1e-9


class GraphError(ValueError):
    """Raised for malformed graphs or violated sampler preconditions."""


class ShiftVariant(str, enum.Enum):
    """Which operator a sampled subgraph is turned into."""

    LAPLACIAN = "laplacian"
    ADJACENCY_PLUS_IDENTITY = "adjacency"


@dataclass(frozen=True, eq=False)
class Graph:
    """Fixed undirected graph with cached adjacency and Laplacian.

    Immutable after construction; safe to share between threads.
    """

    n_vertices: int
    edges: tuple[tuple[int, int], ...]
    adjacency: np.ndarray
    laplacian: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def to_json(self) -> str:
        return json.dumps({"n": self.n_vertices, "edges": [list(e) for e in self.edges]})

    @staticmethod
    def from_json(text: str) -> "Graph":
        data = json.loads(text)
        return build_graph(data["n"], [tuple(e) for e in data["edges"]])


def build_graph(n: int, edges: list[tuple[int, int]]) -> Graph:
    """Build a graph from an edge list, validating indices and simplicity."""
    if n < 1:
        raise GraphError(f"graph needs at least one vertex, got n={n}")
    seen: set[tuple[int, int]] = set()
    normalized: list[tuple[int, int]] = []
    for i, j in edges:
        if i == j:
            raise GraphError(f"self-loop ({i},{j}) is not allowed")
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i},{j}) references a vertex outside 0..{n - 1}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"duplicate edge ({i},{j})")
        seen.add(key)
        normalized.append(key)
    adjacency = np.zeros((n, n))
    for i, j in normalized:
        adjacency[i, j] = 1.0
        adjacency[j, i] = 1.0
    laplacian = np.diag(adjacency.sum(axis=1)) - adjacency
    return Graph(n, tuple(normalized), adjacency, laplacian)


def complete_graph(n: int) -> Graph:
    return build_graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def path_graph(n: int) -> Graph:
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


@dataclass(frozen=True)
class SamplerConfig:
    """Edge-keep probability and seed for random edge sampling."""

    p: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.p <= 1.0):
            raise GraphError(f"edge-keep probability must be in (0, 1], got {self.p}")


@dataclass(frozen=True, eq=False)
class ShiftSample:
    """One sampled shift operator and the edge subset that produced it."""

    variant: ShiftVariant
    matrix: np.ndarray
    kept_edges: tuple[tuple[int, int], ...]


def edge_matrices(g: Graph, variant: ShiftVariant) -> np.ndarray:
    """Per-edge contribution matrices, shape (n_edges, n, n).

    A sampled shift is ``sum(keep_e * M_e)`` plus the identity for the
    adjacency variant, which lets whole batches of samples be assembled
    with one tensordot.
    """
    n = g.n_vertices
    mats = np.zeros((g.n_edges, n, n))
    for e, (i, j) in enumerate(g.edges):
        if variant is ShiftVariant.LAPLACIAN:
            mats[e, i, i] = 1.0
            mats[e, j, j] = 1.0
            mats[e, i, j] = -1.0
            mats[e, j, i] = -1.0
        else:
            mats[e, i, j] = 1.0
            mats[e, j, i] = 1.0
    return mats


def assemble_shifts(g: Graph, keeps: np.ndarray, variant: ShiftVariant) -> np.ndarray:
    """Turn boolean keep masks (..., n_edges) into shift matrices (..., n, n)."""
    basis = edge_matrices(g, variant)
    shifts = np.tensordot(keeps.astype(float), basis, axes=([-1], [0]))
    if variant is ShiftVariant.ADJACENCY_PLUS_IDENTITY:
        shifts = shifts + np.eye(g.n_vertices)
    return shifts


def sample_shift(
    g: Graph,
    cfg: SamplerConfig,
    variant: ShiftVariant,
    rng: np.random.Generator | None = None,
) -> ShiftSample:
    """Draw one random subgraph (each edge kept with probability p) as a shift.

    Without an explicit generator the draw is seeded from ``cfg.seed``,
    so identical configs produce identical samples.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    keep = rng.random(g.n_edges) < cfg.p
    matrix = assemble_shifts(g, keep, variant)
    kept = tuple(e for e, k in zip(g.edges, keep) if k)
    return ShiftSample(variant, matrix, kept)


class EdgeSampler:
    """Stream of independent shift samples owned by a single consumer."""

    def __init__(self, g: Graph, cfg: SamplerConfig, variant: ShiftVariant):
        self.graph = g
        self.cfg = cfg
        self.variant = variant
        self._rng = np.random.default_rng(cfg.seed)

    def sample(self) -> ShiftSample:
        return sample_shift(self.graph, self.cfg, self.variant, rng=self._rng)


def expected_shift(g: Graph, p: float, variant: ShiftVariant) -> np.ndarray:
    """Closed-form mean of the sampled shift: p*L, or p*A + I."""
    if not (0.0 < p <= 1.0):
        raise GraphError(f"edge-keep probability must be in (0, 1], got {p}")
    if variant is ShiftVariant.LAPLACIAN:
        return p * g.laplacian
    return p * g.adjacency + np.eye(g.n_vertices)


def polynomial_in_expected_shift(
    g: Graph, h: np.ndarray, p: float, variant: ShiftVariant
) -> np.ndarray:
    """Evaluate h0*I + sum_k h_k * mean_shift^k (the expected filter response)."""
    h = np.asarray(h, dtype=float)
    mean_shift = expected_shift(g, p, variant)
    out = h[0] * np.eye(g.n_vertices)
    power = np.eye(g.n_vertices)
    for k in range(1, len(h)):
        power = power @ mean_shift
        out = out + h[k] * power
    return out


def full_rank_witness(
    g: Graph,
    h: np.ndarray,
    p: float,
    variant: ShiftVariant,
    tolerance: float = RANK_TOLERANCE,
) -> tuple[float, bool]:
    """Minimum-magnitude eigenvalue of the expected filter response.

    Only valid under the sufficient condition h0 > 0 and h_k >= 0, where
    the response is guaranteed invertible; other coefficient signs are
    rejected because nothing is claimed for them.
    """
    h = np.asarray(h, dtype=float)
    if h.size == 0 or h[0] <= 0.0:
        raise GraphError("full-rank witness requires h[0] > 0")
    if np.any(h < 0.0):
        raise GraphError("full-rank witness requires non-negative coefficients")
    response = polynomial_in_expected_shift(g, h, p, variant)
    eigenvalues = np.linalg.eigvalsh(response)
    min_abs = float(np.min(np.abs(eigenvalues)))
    return min_abs, min_abs > tolerance
