"""Target trajectories, procedural scenes, and intensity rendering.

The world consists of a textured far-field background and a single spherical
target that follows a per-axis sinusoid with optional motion pauses. Pauses
re-parameterize the trajectory clock (the sinusoid freezes and resumes), so
the target position is continuous -- it never teleports.

Rendering is a pinhole camera model: the background is multi-octave value
noise indexed by world-space ray direction (so it is consistent under camera
rotation), and the target is drawn as a shaded disc at its projected center,
occluding the background. Intensities are in [0, 1].
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .config import CameraConfig, TrajectoryConfig, WorldConfig
from .dynamics import DroneState
from .errors import ContractViolation

# ---------------------------------------------------------------------------
# target trajectory
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TargetTrajectory:
    """Per-axis sinusoid with clock-freezing pauses.

    position(t) = base + amplitude * sin(omega * tau(t) + phase), where
    tau(t) is t minus the time spent paused before t (frozen inside pauses).
    """

    amplitude: np.ndarray        # (3,)
    omega: np.ndarray            # (3,) rad/s
    phase: np.ndarray            # (3,)
    base: np.ndarray             # (3,)
    pauses: tuple                # ((start_s, duration_s), ...), sorted, disjoint
    episode_length_s: float

    def __post_init__(self):
        for name in ("amplitude", "omega", "phase", "base"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            if arr.shape != (3,):
                raise ContractViolation(f"{name} must be a 3-vector")
            object.__setattr__(self, name, arr)
        prev_end = 0.0
        for start, dur in self.pauses:
            if start < prev_end or dur <= 0:
                raise ContractViolation("pauses must be sorted and disjoint")
            prev_end = start + dur
        if prev_end > self.episode_length_s + 1e-9:
            raise ContractViolation("pauses must fit inside the episode")

    def clock(self, t: float) -> tuple[float, bool]:
        """Motion time tau(t) and whether the target is moving at t."""
        paused_before = 0.0
        for start, dur in self.pauses:
            if t < start:
                break
            if t < start + dur:
                return start - paused_before, False
            paused_before += dur
        return t - paused_before, True


def target_state(traj: TargetTrajectory, t: float):
    """Position, velocity, and acceleration of the target at time t."""
    tau, moving = traj.clock(t)
    arg = traj.omega * tau + traj.phase
    pos = traj.base + traj.amplitude * np.sin(arg)
    if moving:
        vel = traj.amplitude * traj.omega * np.cos(arg)
        acc = -traj.amplitude * traj.omega**2 * np.sin(arg)
    else:
        vel = np.zeros(3)
        acc = np.zeros(3)
    return pos, vel, acc


def fast_trajectory_bounds(
    cfg: TrajectoryConfig, factor: float | None = None
) -> TrajectoryConfig:
    """Trajectory bounds for the fast-target preset variants.

    The sampling interval for the angular rates is multiplied by ``factor``
    (default ``cfg.fast_factor``); amplitudes are untouched, so the per-axis
    peak speed amplitude*omega scales linearly with the factor.
    """
    f = float(cfg.fast_factor if factor is None else factor)
    if f <= 0:
        raise ContractViolation("fast trajectory factor must be positive")
    return dataclasses.replace(
        cfg, freq_min_rad=cfg.freq_min_rad * f, freq_max_rad=cfg.freq_max_rad * f
    )


def sample_trajectory(
    rng: np.random.Generator,
    cfg: TrajectoryConfig,
    episode_length_s: float,
) -> TargetTrajectory:
    """Draw a trajectory uniformly from the configured bounds."""
    amp = rng.uniform(cfg.amp_min_m, cfg.amp_max_m, size=3)
    omega = rng.uniform(cfg.freq_min_rad, cfg.freq_max_rad, size=3) * cfg.speed_factor
    phase = rng.uniform(0.0, 2.0 * math.pi, size=3)
    base = np.array(
        [
            rng.uniform(-cfg.base_xy_m, cfg.base_xy_m),
            rng.uniform(-cfg.base_xy_m, cfg.base_xy_m),
            rng.uniform(cfg.base_z_min_m, cfg.base_z_max_m),
        ]
    )
    n_pauses = int(rng.integers(0, cfg.pause_count_max + 1))
    starts = np.sort(rng.uniform(0.0, episode_length_s, size=n_pauses))
    pauses = []
    cursor = 0.0
    for start in starts:
        if start < cursor:
            continue  # would overlap the previous pause; drop it
        dur = float(rng.uniform(cfg.pause_min_s, cfg.pause_max_s))
        dur = min(dur, episode_length_s - start)
        if dur <= 0:
            continue
        pauses.append((float(start), dur))
        cursor = start + dur
    return TargetTrajectory(
        amplitude=amp,
        omega=omega,
        phase=phase,
        base=base,
        pauses=tuple(pauses),
        episode_length_s=episode_length_s,
    )


def write_trajectory_csv(traj: TargetTrajectory, path: str, dt: float) -> None:
    """Dump sampled target positions as t,x,y,z rows."""
    n = int(round(traj.episode_length_s / dt)) + 1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,x,y,z\n")
        for i in range(n):
            t = i * dt
            pos, _, _ = target_state(traj, t)
            fh.write(f"{t:.6f},{pos[0]:.6f},{pos[1]:.6f},{pos[2]:.6f}\n")


# ---------------------------------------------------------------------------
# camera model and projection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera rigidly mounted on the tracker body.

    Camera frame equals the body frame by default: x forward (optical axis),
    y left, z up. Pixel u grows to the right of the view, v grows downward:
    u = cx - f * y/x, v = cy - f * z/x, with f = (W/2) / tan(hfov/2).
    """

    width: int = 64
    height: int = 64
    hfov_rad: float = math.pi / 2
    offset_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    offset_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ContractViolation("camera resolution must be at least 16x16")
        if not 0.0 < self.hfov_rad < math.pi:
            raise ContractViolation("hfov_rad must lie in (0, pi)")
        rot = np.asarray(self.offset_rotation, dtype=np.float64).copy()
        trans = np.asarray(self.offset_translation, dtype=np.float64).copy()
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ContractViolation("bad mount offset shapes")
        object.__setattr__(self, "offset_rotation", rot)
        object.__setattr__(self, "offset_translation", trans)

    @classmethod
    def from_config(cls, cfg: CameraConfig) -> "CameraModel":
        return cls(width=cfg.width, height=cfg.height, hfov_rad=cfg.hfov_rad)

    @property
    def focal_px(self) -> float:
        return (self.width / 2.0) / math.tan(self.hfov_rad / 2.0)

    @property
    def cx(self) -> float:
        return (self.width - 1) / 2.0

    @property
    def cy(self) -> float:
        return (self.height - 1) / 2.0


def camera_pose(camera: CameraModel, state: DroneState):
    """World-frame camera rotation (camera-to-world) and origin."""
    r_wc = state.rotation @ camera.offset_rotation
    origin = state.position + state.rotation @ camera.offset_translation
    return r_wc, origin


def project_point(camera: CameraModel, state: DroneState, point_w):
    """Project a world point to pixel coordinates.

    Returns (u, v, depth) where depth is the distance along the optical
    axis; depth <= 0 means the point is behind the camera (u, v are then
    meaningless and set to nan).
    """
    r_wc, origin = camera_pose(camera, state)
    rel = r_wc.T @ (np.asarray(point_w, dtype=np.float64) - origin)
    x, y, z = rel
    if x <= 1e-9:
        return float("nan"), float("nan"), float(x)
    f = camera.focal_px
    u = camera.cx - f * (y / x)
    v = camera.cy - f * (z / x)
    return float(u), float(v), float(x)


def in_frustum(camera: CameraModel, state: DroneState, point_w) -> bool:
    u, v, depth = project_point(camera, state, point_w)
    if depth <= 0 or not np.isfinite(u):
        return False
    return 0.0 <= u <= camera.width - 1 and 0.0 <= v <= camera.height - 1


_DIR_CACHE: dict = {}


def _pixel_dirs(camera: CameraModel) -> np.ndarray:
    """Unit ray directions in the camera frame, shape (H*W, 3)."""
    key = (camera.width, camera.height, round(camera.hfov_rad, 12))
    cached = _DIR_CACHE.get(key)
    if cached is not None:
        return cached
    f = camera.focal_px
    u = np.arange(camera.width, dtype=np.float64)
    v = np.arange(camera.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)  # (H, W)
    y = (camera.cx - uu) / f
    z = (camera.cy - vv) / f
    dirs = np.stack([np.ones_like(y), y, z], axis=-1).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    _DIR_CACHE[key] = dirs
    return dirs


# ---------------------------------------------------------------------------
# procedural value noise
# ---------------------------------------------------------------------------


def _hash01(ix, iy, iz, seed: int):
    """Deterministic lattice hash to [0, 1); wraps on uint32 overflow."""
    h = ix.astype(np.uint32) * np.uint32(0x9E3779B1)
    h ^= iy.astype(np.uint32) * np.uint32(0x85EBCA77)
    h ^= iz.astype(np.uint32) * np.uint32(0xC2B2AE3D)
    h ^= np.uint32((seed * 0x27D4EB2F) & 0xFFFFFFFF)
    h = (h ^ (h >> np.uint32(15))) * np.uint32(0x2C1B3C6D)
    h = (h ^ (h >> np.uint32(12))) * np.uint32(0x297A2D39)
    h ^= h >> np.uint32(15)
    return h.astype(np.float64) * (1.0 / 4294967296.0)


def value_noise(points, seed: int, octaves: int):
    """Fractal trilinear value noise in [0, 1] at 3-D sample points."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ContractViolation("points must have shape (N, 3)")
    if octaves <= 0:
        return np.full(p.shape[0], 0.5)
    total = np.zeros(p.shape[0])
    norm = 0.0
    amp = 1.0
    for octave in range(octaves):
        q = p * float(2**octave)
        i0 = np.floor(q).astype(np.int64)
        frac = q - i0
        w = frac * frac * (3.0 - 2.0 * frac)  # smoothstep weights
        oseed = (seed * 1000003 + octave * 101) & 0x7FFFFFFF
        acc = np.zeros(p.shape[0])
        for dx in (0, 1):
            wx = w[:, 0] if dx else 1.0 - w[:, 0]
            for dy in (0, 1):
                wy = w[:, 1] if dy else 1.0 - w[:, 1]
                for dz in (0, 1):
                    wz = w[:, 2] if dz else 1.0 - w[:, 2]
                    corner = _hash01(
                        i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz, oseed
                    )
                    acc += corner * (wx * wy * wz)
        total += amp * acc
        norm += amp
        amp *= 0.5
    return total / norm


# ---------------------------------------------------------------------------
# scenes and rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneConfig:
    """One draw of the domain-randomized scene."""

    octaves: int = 3
    contrast: float = 0.6
    light_intensity: float = 0.8
    texture_seed: int = 0
    target_radius_m: float = 0.15
    target_albedo: float = 0.9
    noise_scale: float = 3.0

    def __post_init__(self):
        if self.octaves < 0:
            raise ContractViolation("octaves must be >= 0")
        if not 0.0 <= self.contrast <= 1.0:
            raise ContractViolation("contrast must lie in [0, 1]")
        if not 0.0 < self.light_intensity <= 1.0:
            raise ContractViolation("light_intensity must lie in (0, 1]")
        if self.target_radius_m <= 0:
            raise ContractViolation("target_radius_m must be positive")
        if not 0.0 < self.target_albedo <= 1.0:
            raise ContractViolation("target_albedo must lie in (0, 1]")


# preset name -> (octave range incl., contrast range, light range)
_SCENE_BANDS = {
    "box": {"octaves": (1, 4), "contrast": (0.3, 0.9)},
    "darpa": {"octaves": (4, 6), "contrast": (0.7, 1.0)},
}
_LIGHT_BANDS = {
    "normal": (0.4, 1.0),
    "fast": (0.4, 1.0),
    "lowlight": (0.05, 0.2),
}
_ALBEDO_BAND = (0.5, 1.0)


def split_preset(preset: str) -> tuple[str, str]:
    try:
        family, variant = preset.split("-", 1)
        _SCENE_BANDS[family]
        _LIGHT_BANDS[variant]
    except (ValueError, KeyError) as exc:
        raise ContractViolation(f"unknown preset {preset!r}") from exc
    return family, variant


def randomize_scene(
    rng: np.random.Generator, preset: str, world_cfg: WorldConfig | None = None
) -> SceneConfig:
    """Draw a scene uniformly from the preset's randomization bands."""
    world_cfg = world_cfg or WorldConfig()
    family, variant = split_preset(preset)
    bands = _SCENE_BANDS[family]
    lo, hi = bands["octaves"]
    octaves = int(rng.integers(lo, hi + 1))
    contrast = float(rng.uniform(*bands["contrast"]))
    light = float(rng.uniform(*_LIGHT_BANDS[variant]))
    albedo = float(rng.uniform(*_ALBEDO_BAND))
    texture_seed = int(rng.integers(0, 2**31))
    return SceneConfig(
        octaves=octaves,
        contrast=contrast,
        light_intensity=light,
        texture_seed=texture_seed,
        target_radius_m=world_cfg.target_radius_m,
        target_albedo=albedo,
        noise_scale=world_cfg.noise_scale,
    )


def render_intensity(
    scene: SceneConfig,
    camera: CameraModel,
    state: DroneState,
    target_position,
) -> np.ndarray:
    """Render the (H, W) float32 intensity image seen from the tracker.

    The background is value noise indexed by world ray direction; the target
    is a shaded disc at its pinhole projection, occluding the background. A
    target behind the camera or outside the frustum leaves pure background.
    """
    h, w = camera.height, camera.width
    r_wc, origin = camera_pose(camera, state)
    dirs_world = _pixel_dirs(camera) @ r_wc.T
    noise = value_noise(
        dirs_world * scene.noise_scale, scene.texture_seed, scene.octaves
    )
    img = scene.light_intensity * (0.5 + scene.contrast * (noise - 0.5))
    img = np.clip(img, 0.0, 1.0).reshape(h, w)

    rel = r_wc.T @ (np.asarray(target_position, dtype=np.float64) - origin)
    x = rel[0]
    if x > 1e-6:
        f = camera.focal_px
        u0 = camera.cx - f * (rel[1] / x)
        v0 = camera.cy - f * (rel[2] / x)
        r_px = f * scene.target_radius_m / x
        lo_u = max(int(math.floor(u0 - r_px)), 0)
        hi_u = min(int(math.ceil(u0 + r_px)), w - 1)
        lo_v = max(int(math.floor(v0 - r_px)), 0)
        hi_v = min(int(math.ceil(v0 + r_px)), h - 1)
        if lo_u <= hi_u and lo_v <= hi_v and r_px > 1e-6:
            uu = np.arange(lo_u, hi_u + 1, dtype=np.float64)
            vv = np.arange(lo_v, hi_v + 1, dtype=np.float64)
            du, dv = np.meshgrid(uu - u0, vv - v0)
            rho2 = (du * du + dv * dv) / (r_px * r_px)
            mask = rho2 <= 1.0
            if mask.any():
                shade = 0.55 + 0.45 * np.sqrt(np.clip(1.0 - rho2, 0.0, 1.0))
                disc = np.clip(
                    scene.target_albedo * scene.light_intensity * shade, 0.0, 1.0
                )
                region = img[lo_v : hi_v + 1, lo_u : hi_u + 1]
                region[mask] = disc[mask]
    return img.astype(np.float32)
