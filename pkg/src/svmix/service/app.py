"""FastAPI service wrapping training, evaluation, analysis, and verification."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..analysis import analyze
from ..config import RunConfig, output_root
from ..graph import Graph, GraphError, build_graph, complete_graph
from ..training import comm_overhead, evaluate_checkpoint, run_sweep, run_training
from ..verification import run_verification
from .jobs import JobRegistry
from .models import (
    AnalyzeRequest,
    AnalyzeResponse,
    EvaluateRequest,
    EvaluateResponse,
    OverheadRequest,
    OverheadResponse,
    RunInfo,
    SweepRequest,
    TrainRequest,
    VerifyRequest,
    VerifyResponse,
)


def _run_info(job) -> RunInfo:
    return RunInfo(
        run_id=job.id,
        kind=job.kind,
        status=job.status,
        progress_done=job.progress_done,
        progress_total=job.progress_total,
        seed=job.seed,
        out_dir=job.out_dir,
        error=job.error,
        result=job.result,
    )


def create_app(max_workers: int = 2) -> FastAPI:
    app = FastAPI(
        title="svmix",
        version=__version__,
        description=(
            "Stochastic value-mixing MARL service: submit training runs and "
            "sweeps, evaluate checkpoints, inspect filter spectra, and run "
            "the verification oracle suite."
        ),
    )
    jobs = JobRegistry(max_workers=max_workers)
    app.state.jobs = jobs

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.get("/schema/run-config")
    def run_config_schema() -> dict:
        return RunConfig.model_json_schema()

    @app.post("/analyze", response_model=AnalyzeResponse)
    def analyze_endpoint(req: AnalyzeRequest) -> AnalyzeResponse:
        try:
            if req.graph is not None:
                graph: Graph = build_graph(req.graph.n, list(req.graph.edges))
            else:
                graph = complete_graph(req.complete_n)
            report = analyze(
                graph, np.asarray(req.coeffs), req.p, req.variant,
                mc_samples=req.mc_samples, seed=req.seed,
            )
        except GraphError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return AnalyzeResponse(**report)

    @app.post("/verify", response_model=VerifyResponse)
    def verify_endpoint(req: VerifyRequest) -> VerifyResponse:
        try:
            report = run_verification(tol_scale=req.tol_scale, names=req.checks)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return VerifyResponse(**report)

    @app.post("/overhead", response_model=OverheadResponse)
    def overhead_endpoint(req: OverheadRequest) -> OverheadResponse:
        try:
            value = comm_overhead(
                req.method, req.n_agents, req.n_para, req.n_epoch, req.n_batch, req.tau
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return OverheadResponse(method=req.method, overhead=value)

    @app.post("/runs", response_model=RunInfo)
    def submit_run(req: TrainRequest, wait: bool = False) -> RunInfo:
        seed = req.seed if req.seed is not None else req.config.seeds[0]
        out_base = Path(req.out_dir) if req.out_dir else output_root(req.config.out_dir)
        out_dir = out_base / f"seed_{seed}"

        def work(progress):
            return run_training(req.config, seed, out_dir, progress)

        job = jobs.submit("train", work, seed=seed, out_dir=str(out_dir), wait=wait)
        return _run_info(job)

    @app.get("/runs", response_model=list[RunInfo])
    def list_runs() -> list[RunInfo]:
        return [_run_info(job) for job in jobs.list()]

    @app.get("/runs/{run_id}", response_model=RunInfo)
    def get_run(run_id: str) -> RunInfo:
        try:
            return _run_info(jobs.get(run_id))
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=f"no run {run_id}") from exc

    @app.get("/runs/{run_id}/metrics")
    def run_metrics(run_id: str) -> list[dict]:
        try:
            job = jobs.get(run_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=f"no run {run_id}") from exc
        if not job.out_dir:
            raise HTTPException(status_code=404, detail="run has no output directory")
        path = Path(job.out_dir) / "metrics.csv"
        if not path.exists():
            raise HTTPException(status_code=404, detail="metrics not written yet")
        with open(path, newline="", encoding="utf-8") as handle:
            return list(csv.DictReader(handle))

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate_endpoint(req: EvaluateRequest) -> EvaluateResponse:
        path = Path(req.checkpoint_path)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no checkpoint at {path}")
        checkpoint = json.loads(path.read_text(encoding="utf-8"))
        try:
            result = evaluate_checkpoint(
                req.config, checkpoint, req.episodes, req.seed, req.dump_path
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return EvaluateResponse(**result)

    @app.post("/sweeps", response_model=RunInfo)
    def submit_sweep(req: SweepRequest, wait: bool = False) -> RunInfo:
        out_root = Path(req.out_root) if req.out_root else output_root(req.config.out_dir) / "sweep"

        def work(progress):
            return run_sweep(req.config, req.param, list(req.values), out_root, progress)

        job = jobs.submit("sweep", work, out_dir=str(out_root), wait=wait)
        return _run_info(job)

    return app
