"""Request/response schemas for the HTTP service."""
from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config import RunConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GraphModel(StrictModel):
    n: int
    edges: list[tuple[int, int]] = Field(default_factory=list)


class AnalyzeRequest(StrictModel):
    """Spectral report inputs: an explicit graph or a complete graph size."""

    graph: GraphModel | None = None
    complete_n: int | None = None
    coeffs: list[float]
    p: float = 0.7
    variant: Literal["laplacian", "adjacency"] = "laplacian"
    mc_samples: int = 20_000
    seed: int = 0

    @model_validator(mode="after")
    def _one_graph(self) -> "AnalyzeRequest":
        if (self.graph is None) == (self.complete_n is None):
            raise ValueError("provide exactly one of graph or complete_n")
        if not self.coeffs:
            raise ValueError("coeffs must be non-empty")
        return self


class AnalyzeResponse(StrictModel):
    graph: dict
    p: float
    variant: str
    coefficients: list[float]
    expected_shift_eigenvalues: list[float]
    expected_response_eigenvalues: list[float]
    full_rank: dict
    monte_carlo: dict | None = None


class VerifyRequest(StrictModel):
    tol_scale: float = 1.0
    checks: list[str] | None = None


class CheckModel(StrictModel):
    name: str
    passed: bool
    measured: float
    tolerance: float
    statistical: bool
    detail: str


class VerifyResponse(StrictModel):
    passed: bool
    tol_scale: float
    failed: list[str]
    checks: list[CheckModel]


class OverheadRequest(StrictModel):
    method: Literal["svmix", "firl"]
    n_agents: int
    n_para: int = 0
    n_epoch: int = 0
    n_batch: int = 0
    tau: float = 0.0


class OverheadResponse(StrictModel):
    method: str
    overhead: float


class TrainRequest(StrictModel):
    config: RunConfig
    seed: int | None = None
    out_dir: str | None = None


class RunInfo(StrictModel):
    run_id: str
    kind: str
    status: Literal["queued", "running", "succeeded", "failed"]
    progress_done: int = 0
    progress_total: int = 0
    seed: int | None = None
    out_dir: str | None = None
    error: str | None = None
    result: dict | None = None


class EvaluateRequest(StrictModel):
    config: RunConfig
    checkpoint_path: str
    episodes: int = 5
    seed: int = 0
    dump_path: str | None = None


class EvaluateResponse(StrictModel):
    episodes: int
    utility_mean: float
    utility_std: float
    utilities: list[float]


class SweepRequest(StrictModel):
    config: RunConfig
    param: Literal["p", "K", "F"]
    values: list[float]
    out_root: str | None = None
