"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

JobState = Literal["pending", "running", "done", "failed", "cancelled"]


class ExperimentRequest(BaseModel):
    """Submission payload for a long-running experiment job.

    The configuration is resolved in three stages: start from ``profile``,
    replace with ``config_text`` (full INI, as produced by the CLI's
    ``--print-config``) when given, then apply ``overrides`` on top.
    The server assigns the output directory; any out_dir in the config
    is replaced with a per-job directory under the service run root.
    """

    model_config = ConfigDict(extra="forbid")

    profile: Literal["desk", "paper"] = "desk"
    config_text: Optional[str] = None
    overrides: list[str] = Field(default_factory=list)


class JobInfo(BaseModel):
    job_id: str
    mode: str
    policy: str
    preset: str
    state: JobState
    created_at: float
    started_at: Optional[float] = None
    finished_at: Optional[float] = None
    error: Optional[str] = None
    out_dir: str
    report: Optional[dict] = None


class JobLogs(BaseModel):
    job_id: str
    lines: list[str]
    next_offset: int


class RewardRequest(BaseModel):
    """Shaped-reward query for one relative state."""

    model_config = ConfigDict(extra="forbid")

    position: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    acceleration: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tracker_speed: float = 0.0
    d_star: Optional[float] = None
    alpha: Optional[float] = None
    k_c: Optional[float] = None
    d_min: Optional[float] = None


class RewardResponse(BaseModel):
    reward: float
    r_x: float
    r_y: float
    r_z: float
    r_e: float
    r_v: float
    collision: bool


class RenderRequest(BaseModel):
    """Render one intensity frame from a level camera at the origin."""

    model_config = ConfigDict(extra="forbid")

    preset: str = "box-normal"
    seed: int = 0
    width: int = Field(default=64, ge=16, le=256)
    height: int = Field(default=64, ge=16, le=256)
    target_position: tuple[float, float, float] = (0.2, 0.0, 0.0)


class RenderResponse(BaseModel):
    width: int
    height: int
    pixels: list[list[float]]   # row-major intensities in [0, 1]
    target_u: Optional[float] = None
    target_v: Optional[float] = None
    target_depth: Optional[float] = None


class EventsRequest(BaseModel):
    """Synthesize events between two small intensity frames."""

    model_config = ConfigDict(extra="forbid")

    prev: list[list[float]]
    next: list[list[float]]
    t0: float = 0.0
    t1: float = 0.005
    contrast_threshold: float = Field(default=0.2, gt=0)
    refractory_s: float = Field(default=0.0, ge=0)
    log_eps: float = Field(default=1e-3, gt=0)


class EventRecord(BaseModel):
    t: float
    x: int
    y: int
    p: int


class EventsResponse(BaseModel):
    events: list[EventRecord]
    count: int
    positive: int
    negative: int


class ConfigCheckRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config_text: str
    overrides: list[str] = Field(default_factory=list)


class ConfigCheckResponse(BaseModel):
    ok: bool
    error: Optional[str] = None


class CatalogResponse(BaseModel):
    modes: list[str]
    policies: list[str]
    presets: list[str]
