"""The active-tracking POMDP: shaped reward, termination, observation modes.

One control step covers ``control_dt_s`` seconds of physics, integrated in
event-window sub-steps of ``delta_t_s``. In event mode every sub-step renders
an intensity frame, synthesizes events against the per-pixel reference
memory, stacks them into a count frame, and pushes it onto the observation
queue; RGB mode renders a single frame per control step; detection mode
skips rendering entirely and feeds the policy ground-truth (optionally
noise-perturbed) detections.

The shaped reward combines a geometric centering term with a speed penalty:

    r_x = max(0, 1 - |x - d*|)
    r_y = max(0, 1 - atan(|y| / x) / (pi/2))   (0 if x <= 0; same for r_z)
    r_e = (r_x * r_y * r_z) ** (1/3)
    r_v = v / (1 + v)
    r   = r_e - alpha * r_v     if |P| > d_min, else -k_c (collision)

where P = (x, y, z) is the target position in the tracker body frame (x
forward along the camera axis) and v the tracker's speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import baseline as det_mod
from .config import ExperimentConfig, RewardConfig, validate_config
from .dynamics import ControlInput, DroneParams, DroneState, clamp_input, step
from .errors import ContractViolation
from .sensors import (
    FrameQueue,
    IntensityFrame,
    SensorState,
    generate_events,
    stack_events,
)
from .world import (
    CameraModel,
    fast_trajectory_bounds,
    in_frustum,
    randomize_scene,
    render_intensity,
    sample_trajectory,
    split_preset,
    target_state,
)

DONE_REASONS = ("none", "collision", "lost_sight", "timeout")


@dataclass(frozen=True)
class RelativeState:
    """Target kinematics expressed in the tracker body frame."""

    position: np.ndarray      # (3,) x forward along the camera axis
    velocity: np.ndarray      # (3,)
    acceleration: np.ndarray  # (3,)

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.position, self.velocity, self.acceleration]
        ).astype(np.float32)


def relative_state(
    tracker: DroneState,
    target_pos,
    target_vel,
    target_acc,
    commanded_accel,
) -> RelativeState:
    """Rotate world-frame relative kinematics into the body frame."""
    r_t = tracker.rotation.T
    return RelativeState(
        position=r_t @ (np.asarray(target_pos) - tracker.position),
        velocity=r_t @ (np.asarray(target_vel) - tracker.velocity),
        acceleration=r_t @ (np.asarray(target_acc) - np.asarray(commanded_accel)),
    )


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-term diagnostics for one reward evaluation."""

    r_e: float
    r_x: float
    r_y: float
    r_z: float
    r_v: float
    collision: bool


def reward(
    rel: RelativeState, tracker_speed: float, cfg: RewardConfig
) -> tuple[float, RewardBreakdown]:
    """Shaped tracking reward; collision overrides everything with -k_c."""
    p = rel.position
    if np.linalg.norm(p) <= cfg.d_min:
        return -cfg.k_c, RewardBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, True)
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    r_x = max(0.0, 1.0 - abs(x - cfg.d_star))
    if x <= 0.0:
        r_y = 0.0
        r_z = 0.0
    else:
        half_pi = math.pi / 2.0
        r_y = max(0.0, 1.0 - math.atan(abs(y) / x) / half_pi)
        r_z = max(0.0, 1.0 - math.atan(abs(z) / x) / half_pi)
    r_e = (r_x * r_y * r_z) ** (1.0 / 3.0)
    v = max(float(tracker_speed), 0.0)
    r_v = v / (1.0 + v)
    return r_e - cfg.alpha * r_v, RewardBreakdown(r_e, r_x, r_y, r_z, r_v, False)


@dataclass
class StepResult:
    """Everything one environment transition exposes."""

    obs_array: np.ndarray            # policy observation, storage layout
    privileged: np.ndarray           # (9,) body-frame P, V, A
    reward: float
    done: bool
    done_reason: str                 # one of DONE_REASONS
    breakdown: RewardBreakdown
    t: float
    observation: object = None       # rich Observation for event/rgb modes

    def __post_init__(self):
        if self.done_reason not in DONE_REASONS:
            raise ContractViolation(f"bad done_reason {self.done_reason!r}")


class TrackingEnv:
    """The full tracking environment; see the module docstring."""

    def __init__(
        self,
        cfg: ExperimentConfig,
        policy_mode: str | None = None,
        noise: det_mod.NoiseConfig | None = None,
        seed: int | None = None,
    ):
        validate_config(cfg)
        self.cfg = cfg
        self.mode = policy_mode or cfg.policy
        if self.mode not in ("event", "rgb", "detection"):
            raise ContractViolation(f"unknown policy mode {self.mode!r}")
        self.camera = CameraModel.from_config(cfg.camera)
        self.params = DroneParams.from_config(cfg.dynamics)
        self.noise = noise or det_mod.NoiseConfig()
        self.n_sub = int(round(cfg.reward.control_dt_s / cfg.sensors.delta_t_s))
        self.max_steps = int(round(cfg.reward.episode_length_s / cfg.reward.control_dt_s))
        self._rng = np.random.default_rng(seed)
        self._queue = None
        self._det_hist = None
        self._state = None
        self._done = True

    # -- observation plumbing ------------------------------------------------

    @property
    def action_dim(self) -> int:
        return 4

    @property
    def obs_kind(self) -> str:
        return "vector" if self.mode == "detection" else "image"

    @property
    def obs_shape(self) -> tuple:
        if self.mode == "detection":
            return (self.cfg.env.frames_per_obs * det_mod.DETECTION_DIM,)
        return (
            self.cfg.env.frames_per_obs,
            2,
            self.cfg.camera.height,
            self.cfg.camera.width,
        )

    def _current_obs(self):
        if self.mode == "detection":
            return self._det_hist.vector(), None
        obs = self._queue.observation()
        return obs.to_array(), obs

    @property
    def drone_state(self) -> DroneState:
        """Current vehicle state (diagnostics; not policy-visible)."""
        if self._state is None:
            raise ContractViolation("reset() the environment first")
        return self._state

    @property
    def time_s(self) -> float:
        if self._state is None:
            raise ContractViolation("reset() the environment first")
        return self._step_count * self.cfg.reward.control_dt_s

    # -- episode control ------------------------------------------------------

    def reset(self, seed: int | None = None) -> StepResult:
        """Sample a fresh scene/trajectory and place the tracker on station."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        rng = self._rng
        cfg = self.cfg

        self.scene = randomize_scene(rng, cfg.preset, cfg.world)
        traj_cfg = cfg.trajectory
        if split_preset(cfg.preset)[1] == "fast":
            traj_cfg = fast_trajectory_bounds(traj_cfg)
        self.traj = sample_trajectory(rng, traj_cfg, cfg.reward.episode_length_s)

        target0, tvel0, tacc0 = target_state(self.traj, 0.0)
        j = cfg.env.reset_jitter_m
        jitter = rng.uniform(-j, j, size=3) if j > 0 else np.zeros(3)
        offset = np.array([cfg.reward.d_star, 0.0, 0.0]) + jitter
        self._state = DroneState(
            position=target0 - offset,
            velocity=np.zeros(3),
            rotation=np.eye(3),
            t=0.0,
        )
        self._step_count = 0
        self._lost_steps = 0
        self._done = False
        self._cmd_accel = np.zeros(3)

        h, w = cfg.camera.height, cfg.camera.width
        if self.mode == "detection":
            self._det_hist = det_mod.DetectionHistory(cfg.env.frames_per_obs, self.camera)
        else:
            self._queue = FrameQueue(
                cfg.env.frames_per_obs, h, w,
                mode="event" if self.mode == "event" else "rgb",
            )
            if self.mode == "event":
                self._prev_img = render_intensity(
                    self.scene, self.camera, self._state, target0
                )
                self._sensor = SensorState.from_image(self._prev_img, cfg.sensors)

        rel = relative_state(self._state, target0, tvel0, tacc0, self._cmd_accel)
        _, bd = reward(rel, 0.0, cfg.reward)
        obs_array, obs = self._current_obs()
        return StepResult(
            obs_array=obs_array,
            privileged=rel.as_vector(),
            reward=0.0,
            done=False,
            done_reason="none",
            breakdown=bd,
            t=0.0,
            observation=obs,
        )

    def _target_in_view(self, state: DroneState, target_pos: np.ndarray) -> bool:
        """Frustum test plus an optional resolvability floor: a target whose
        projected disc falls below ``min_target_px`` cannot be seen by any
        pixel sensor or detector, so it does not count as in view."""
        if not in_frustum(self.camera, state, target_pos):
            return False
        min_px = self.cfg.env.min_target_px
        if min_px <= 0:
            return True
        depth = float(
            state.rotation[:, 0] @ (np.asarray(target_pos) - state.position)
        )
        if depth <= 0:
            return False
        radius_px = self.camera.focal_px * self.cfg.world.target_radius_m / depth
        return radius_px >= min_px

    def _rescale_action(self, action: np.ndarray) -> ControlInput:
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        if a.shape != (4,):
            raise ContractViolation(f"action must have shape (4,), got {a.shape}")
        if not np.isfinite(a).all():
            raise ContractViolation("action contains non-finite values")
        p = self.params
        thrust = p.f_min + 0.5 * (a[0] + 1.0) * (p.f_max - p.f_min)
        omega = a[1:] * p.omega_max
        return clamp_input(thrust, omega, p)

    def step(self, action) -> StepResult:
        """Advance one control period (``n_sub`` event windows of physics)."""
        if self._done:
            raise ContractViolation("step() called on a finished episode")
        cfg = self.cfg
        u = self._rescale_action(action)
        dt = cfg.sensors.delta_t_s
        base = self._step_count * self.n_sub

        state = self._state
        for jsub in range(self.n_sub):
            t0 = (base + jsub) * dt
            # t1 must be t0 + dt (not (base+jsub+1)*dt): stack_events checks
            # timestamps against window_start + delta_t_s, and the two float
            # expressions differ by 1 ulp at some steps
            t1 = t0 + dt
            state = step(state, u, self.params, dt)
            if self.mode == "event":
                tpos, _, _ = target_state(self.traj, t1)
                img = render_intensity(self.scene, self.camera, state, tpos)
                events = generate_events(
                    self._prev_img, img, t0, t1, self._sensor, cfg.sensors,
                    rng=self._rng if cfg.sensors.noise_rate_hz > 0 else None,
                )
                self._queue.push(stack_events(events, t0, cfg.sensors))
                self._prev_img = img
        self._state = state
        self._step_count += 1
        t_now = (base + self.n_sub) * dt

        tpos, tvel, tacc = target_state(self.traj, t_now)
        visible = self._target_in_view(state, tpos)
        if self.mode == "rgb":
            img = render_intensity(self.scene, self.camera, state, tpos)
            self._queue.push(IntensityFrame(image=img, t=t_now))
        elif self.mode == "detection":
            det = det_mod.ground_truth_detection(self.camera, state, tpos)
            if det.valid and not visible:
                det = det_mod.Detection.invalid()
            det = det_mod.perturb(det, self.noise, self.camera, self._rng)
            self._det_hist.push(det)

        self._cmd_accel = (
            state.rotation[:, 2] * (u.thrust / self.params.mass_kg)
            + self.params.gravity
        )
        rel = relative_state(state, tpos, tvel, tacc, self._cmd_accel)
        speed = float(np.linalg.norm(state.velocity))
        r, bd = reward(rel, speed, cfg.reward)

        done_reason = "none"
        if bd.collision:
            done_reason = "collision"
        else:
            if visible:
                self._lost_steps = 0
            else:
                self._lost_steps += 1
            lost_for = self._lost_steps * cfg.reward.control_dt_s
            if lost_for >= cfg.env.lost_patience_s - 1e-9:
                done_reason = "lost_sight"
            elif self._step_count >= self.max_steps:
                done_reason = "timeout"
        self._done = done_reason != "none"

        obs_array, obs = self._current_obs()
        return StepResult(
            obs_array=obs_array,
            privileged=rel.as_vector(),
            reward=float(r),
            done=self._done,
            done_reason=done_reason,
            breakdown=bd,
            t=t_now,
            observation=obs,
        )


# ---------------------------------------------------------------------------
# episode statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReturnSummary:
    """Aggregate statistics over a batch of episode returns."""

    mean: float
    std: float                  # population standard deviation
    normalized_mean: float      # mean of per-step returns
    episodes: int


def summarize_returns(returns, steps) -> ReturnSummary:
    returns = np.asarray(returns, dtype=np.float64)
    steps = np.asarray(steps, dtype=np.float64)
    if returns.size == 0 or returns.shape != steps.shape:
        raise ContractViolation("need matching non-empty returns and steps")
    if np.any(steps <= 0):
        raise ContractViolation("step counts must be positive")
    return ReturnSummary(
        mean=float(returns.mean()),
        std=float(returns.std()),
        normalized_mean=float((returns / steps).mean()),
        episodes=int(returns.size),
    )
