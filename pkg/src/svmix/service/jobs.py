"""In-memory registry for long-running training/sweep jobs."""
from __future__ import annotations

import threading
import traceback
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

JobFn = Callable[[Callable[[int, int], None]], dict]


@dataclass
class Job:
    id: str
    kind: str
    status: str = "queued"
    progress_done: int = 0
    progress_total: int = 0
    seed: int | None = None
    out_dir: str | None = None
    error: str | None = None
    result: dict | None = None


class JobRegistry:
    """Thread-pool-backed job runner; jobs report progress through a callback."""

    def __init__(self, max_workers: int = 2):
        self._executor = ThreadPoolExecutor(max_workers=max_workers)
        self._lock = threading.Lock()
        self._jobs: dict[str, Job] = {}

    def submit(
        self,
        kind: str,
        fn: JobFn,
        seed: int | None = None,
        out_dir: str | None = None,
        wait: bool = False,
    ) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], kind=kind, seed=seed, out_dir=out_dir)
        with self._lock:
            self._jobs[job.id] = job
        if wait:
            self._run(job, fn)
        else:
            self._executor.submit(self._run, job, fn)
        return self.get(job.id)

    def _run(self, job: Job, fn: JobFn) -> None:
        def progress(done: int, total: int) -> None:
            with self._lock:
                job.progress_done = done
                job.progress_total = total

        with self._lock:
            job.status = "running"
        try:
            result = fn(progress)
            with self._lock:
                job.result = result
                job.status = "succeeded"
        except Exception as exc:  # surface the failure through the API
            with self._lock:
                job.error = f"{type(exc).__name__}: {exc}"
                job.status = "failed"
            traceback.print_exc()

    def get(self, job_id: str) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise KeyError(job_id)
            return Job(**vars(job))

    def list(self) -> list[Job]:
        with self._lock:
            return [Job(**vars(job)) for job in self._jobs.values()]
