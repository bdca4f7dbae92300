"""In-memory job store running experiments on a bounded worker pool.

Jobs run in daemon threads (the experiment code is numpy-heavy and
releases the GIL in its hot loops). State lives in memory; artifacts are
written under ``run_root/<job_id>`` and survive a service restart.
"""

from __future__ import annotations

import threading
import time
import traceback
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..config import ExperimentConfig, validate_config
from ..errors import EvtrackError
from ..experiments import run


def jsonable(value):
    """Recursively convert numpy scalars/arrays so the dict serializes."""
    if isinstance(value, dict):
        return {k: jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


@dataclass
class Job:
    job_id: str
    cfg: ExperimentConfig
    state: str = "pending"
    created_at: float = field(default_factory=time.time)
    started_at: float | None = None
    finished_at: float | None = None
    error: str | None = None
    report: dict | None = None
    log_lines: list[str] = field(default_factory=list)
    stop_event: threading.Event = field(default_factory=threading.Event)

    def info(self) -> dict:
        return {
            "job_id": self.job_id,
            "mode": self.cfg.mode,
            "policy": self.cfg.policy,
            "preset": self.cfg.preset,
            "state": self.state,
            "created_at": self.created_at,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "error": self.error,
            "out_dir": self.cfg.out_dir,
            "report": self.report,
        }


class JobStore:
    """Submit, inspect, and cancel experiment jobs."""

    def __init__(self, run_root: str = "runs/service", max_concurrent: int = 1):
        if max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        self.run_root = run_root
        self._jobs: dict[str, Job] = {}
        self._order: list[str] = []
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(
            max_workers=max_concurrent, thread_name_prefix="evtrack-job"
        )

    # -- public API ---------------------------------------------------------

    def submit(self, cfg: ExperimentConfig) -> dict:
        job_id = uuid.uuid4().hex[:12]
        cfg.out_dir = f"{self.run_root}/{job_id}"
        validate_config(cfg)
        job = Job(job_id=job_id, cfg=cfg)
        with self._lock:
            self._jobs[job_id] = job
            self._order.append(job_id)
        self._pool.submit(self._execute, job)
        return job.info()

    def get(self, job_id: str) -> dict | None:
        job = self._jobs.get(job_id)
        return job.info() if job else None

    def list(self) -> list[dict]:
        with self._lock:
            return [self._jobs[jid].info() for jid in self._order]

    def logs(self, job_id: str, offset: int = 0) -> dict | None:
        job = self._jobs.get(job_id)
        if job is None:
            return None
        with self._lock:
            lines = job.log_lines[offset:]
            next_offset = len(job.log_lines)
        return {"job_id": job_id, "lines": lines, "next_offset": next_offset}

    def cancel(self, job_id: str) -> dict | None:
        job = self._jobs.get(job_id)
        if job is None:
            return None
        with self._lock:
            if job.state in ("pending", "running"):
                job.stop_event.set()
                if job.state == "pending":
                    job.state = "cancelled"
                    job.finished_at = time.time()
        return job.info()

    def shutdown(self) -> None:
        for job in self._jobs.values():
            job.stop_event.set()
        self._pool.shutdown(wait=False, cancel_futures=True)

    # -- worker -------------------------------------------------------------

    def _log(self, job: Job, message: str) -> None:
        with self._lock:
            job.log_lines.append(message)

    def _execute(self, job: Job) -> None:
        with self._lock:
            if job.state != "pending":  # cancelled while queued
                return
            job.state = "running"
            job.started_at = time.time()
        try:
            report = run(
                job.cfg,
                should_stop=job.stop_event.is_set,
                log=lambda msg: self._log(job, msg),
            )
            report = jsonable(report)
            with self._lock:
                job.report = report
                if job.stop_event.is_set() or report.get("stopped_early"):
                    job.state = "cancelled"
                else:
                    job.state = "done"
        except EvtrackError as exc:
            with self._lock:
                job.error = str(exc)
                job.state = "failed"
        except Exception as exc:  # noqa: BLE001 - keep the service alive
            with self._lock:
                job.error = f"{type(exc).__name__}: {exc}"
                job.log_lines.append(traceback.format_exc())
                job.state = "failed"
        finally:
            with self._lock:
                job.finished_at = time.time()
