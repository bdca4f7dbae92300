"""FastAPI application factory for the tracking-experiment service."""

from __future__ import annotations

from contextlib import asynccontextmanager

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from ..config import (
    MODES,
    POLICIES,
    PRESETS,
    ExperimentConfig,
    apply_overrides,
    desk_config,
    paper_scale_config,
    parse_config,
    serialize_config,
    validate_config,
)
from ..dynamics import DroneState
from ..env import RelativeState, reward
from ..errors import ConfigError, ContractViolation, EvtrackError, SensorError
from ..sensors import SensorState, generate_events
from ..world import CameraModel, project_point, randomize_scene, render_intensity
from . import schemas
from .jobs import JobStore

_MAX_EVENT_FRAME_SIDE = 128

_PROFILES = {"desk": desk_config, "paper": paper_scale_config}


def resolve_config(
    profile: str = "desk",
    config_text: str | None = None,
    overrides: list[str] | None = None,
) -> ExperimentConfig:
    """Profile -> optional full INI -> optional overrides, then validate."""
    base = _PROFILES[profile]()
    cfg = parse_config(config_text, base=base) if config_text else base
    if overrides:
        cfg = apply_overrides(cfg, list(overrides))
    return validate_config(cfg)


def create_app(run_root: str = "runs/service", max_concurrent: int = 1) -> FastAPI:
    store = JobStore(run_root=run_root, max_concurrent=max_concurrent)

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        store.shutdown()

    app = FastAPI(
        title="evtrack service",
        description="Event-camera target-tracking simulator and trainer.",
        lifespan=lifespan,
    )
    app.state.store = store

    @app.exception_handler(EvtrackError)
    async def _evtrack_error(_request: Request, exc: EvtrackError):
        if isinstance(exc, ConfigError):
            status = 422
        elif isinstance(exc, (ContractViolation, SensorError)):
            status = 400
        else:
            status = 500
        return JSONResponse(
            status_code=status,
            content={"detail": str(exc), "error_type": type(exc).__name__},
        )

    # -- meta ----------------------------------------------------------------

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.get("/catalog", response_model=schemas.CatalogResponse)
    def catalog() -> schemas.CatalogResponse:
        return schemas.CatalogResponse(
            modes=list(MODES), policies=list(POLICIES), presets=list(PRESETS)
        )

    @app.get("/config/{profile}", response_class=PlainTextResponse)
    def config_profile(profile: str) -> str:
        if profile not in _PROFILES:
            raise HTTPException(404, f"unknown profile {profile!r}")
        return serialize_config(_PROFILES[profile]())

    @app.post("/config/validate", response_model=schemas.ConfigCheckResponse)
    def config_validate(req: schemas.ConfigCheckRequest) -> schemas.ConfigCheckResponse:
        try:
            resolve_config(config_text=req.config_text, overrides=req.overrides)
        except ConfigError as exc:
            return schemas.ConfigCheckResponse(ok=False, error=str(exc))
        return schemas.ConfigCheckResponse(ok=True)

    # -- experiment jobs -------------------------------------------------------

    @app.post("/experiments", response_model=schemas.JobInfo, status_code=201)
    def submit(req: schemas.ExperimentRequest) -> dict:
        cfg = resolve_config(req.profile, req.config_text, req.overrides)
        return store.submit(cfg)

    @app.get("/experiments", response_model=list[schemas.JobInfo])
    def list_jobs() -> list[dict]:
        return store.list()

    @app.get("/experiments/{job_id}", response_model=schemas.JobInfo)
    def get_job(job_id: str) -> dict:
        info = store.get(job_id)
        if info is None:
            raise HTTPException(404, f"no job {job_id!r}")
        return info

    @app.get("/experiments/{job_id}/logs", response_model=schemas.JobLogs)
    def job_logs(job_id: str, offset: int = 0) -> dict:
        logs = store.logs(job_id, offset)
        if logs is None:
            raise HTTPException(404, f"no job {job_id!r}")
        return logs

    @app.post("/experiments/{job_id}/cancel", response_model=schemas.JobInfo)
    def cancel_job(job_id: str) -> dict:
        info = store.cancel(job_id)
        if info is None:
            raise HTTPException(404, f"no job {job_id!r}")
        return info

    # -- stateless compute -----------------------------------------------------

    @app.post("/reward", response_model=schemas.RewardResponse)
    def reward_endpoint(req: schemas.RewardRequest) -> schemas.RewardResponse:
        cfg = desk_config().reward
        for name in ("d_star", "alpha", "k_c", "d_min"):
            value = getattr(req, name)
            if value is not None:
                setattr(cfg, name, value)
        rel = RelativeState(
            position=np.asarray(req.position, dtype=np.float64),
            velocity=np.asarray(req.velocity, dtype=np.float64),
            acceleration=np.asarray(req.acceleration, dtype=np.float64),
        )
        r, bd = reward(rel, req.tracker_speed, cfg)
        return schemas.RewardResponse(
            reward=r,
            r_x=bd.r_x,
            r_y=bd.r_y,
            r_z=bd.r_z,
            r_e=bd.r_e,
            r_v=bd.r_v,
            collision=bd.collision,
        )

    @app.post("/render", response_model=schemas.RenderResponse)
    def render_endpoint(req: schemas.RenderRequest) -> schemas.RenderResponse:
        camera = CameraModel(width=req.width, height=req.height)
        state = DroneState(
            position=np.zeros(3), velocity=np.zeros(3), rotation=np.eye(3), t=0.0
        )
        scene = randomize_scene(np.random.default_rng(req.seed), req.preset)
        img = render_intensity(scene, camera, state, np.asarray(req.target_position))
        u, v, depth = project_point(camera, state, np.asarray(req.target_position))
        visible = depth > 0
        return schemas.RenderResponse(
            width=req.width,
            height=req.height,
            pixels=[[float(p) for p in row] for row in img],
            target_u=float(u) if visible else None,
            target_v=float(v) if visible else None,
            target_depth=float(depth) if visible else None,
        )

    @app.post("/events", response_model=schemas.EventsResponse)
    def events_endpoint(req: schemas.EventsRequest) -> schemas.EventsResponse:
        prev = np.asarray(req.prev, dtype=np.float64)
        nxt = np.asarray(req.next, dtype=np.float64)
        if prev.ndim != 2 or max(prev.shape) > _MAX_EVENT_FRAME_SIDE:
            raise HTTPException(
                422, f"frames must be 2-D, at most {_MAX_EVENT_FRAME_SIDE} per side"
            )
        from ..config import SensorConfig

        cfg = SensorConfig(
            contrast_threshold=req.contrast_threshold,
            refractory_s=req.refractory_s,
            log_eps=req.log_eps,
        )
        stream = generate_events(
            prev, nxt, req.t0, req.t1, SensorState.from_image(prev, cfg), cfg
        )
        return schemas.EventsResponse(
            events=[
                schemas.EventRecord(t=float(t), x=int(x), y=int(y), p=int(p))
                for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p)
            ],
            count=len(stream),
            positive=int(np.sum(stream.p > 0)),
            negative=int(np.sum(stream.p < 0)),
        )

    return app


app = create_app()
