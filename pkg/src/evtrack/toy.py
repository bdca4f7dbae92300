"""A fast privileged-state tracking environment for training sanity checks.

The tracker is a 3-D point mass whose acceleration is commanded directly;
the target follows a slow per-axis sinusoid. Observations are the exact
relative state (P, V, A), so no rendering or event synthesis is involved
and the environment steps in microseconds. It shares the shaped reward
with the full environment, which keeps the reward-side semantics covered
by the same code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RewardConfig
from .env import RelativeState, RewardBreakdown, StepResult, reward
from .errors import ContractViolation


@dataclass
class ToyConfig:
    dt_s: float = 0.05
    episode_length_s: float = 10.0
    accel_max: float = 4.0        # commanded acceleration bound, m/s^2
    drag: float = 0.8             # velocity damping per second
    lost_radius_m: float = 4.0    # episode ends if the target drifts this far
    omega_min: float = 0.3
    omega_max: float = 0.8
    amplitude_m: float = 1.0


class ToyTrackingEnv:
    """Point-mass pursuit with privileged observations."""

    def __init__(
        self,
        reward_cfg: RewardConfig | None = None,
        toy_cfg: ToyConfig | None = None,
        seed: int | None = None,
    ):
        self.reward_cfg = reward_cfg or RewardConfig()
        self.toy = toy_cfg or ToyConfig()
        self._rng = np.random.default_rng(seed)
        self.max_steps = int(round(self.toy.episode_length_s / self.toy.dt_s))
        self._done = True

    @property
    def action_dim(self) -> int:
        return 3

    @property
    def obs_kind(self) -> str:
        return "vector"

    @property
    def obs_shape(self) -> tuple:
        return (9,)

    def _target(self, t: float):
        arg = self._omega * t + self._phase
        pos = self._amp * np.sin(arg)
        vel = self._amp * self._omega * np.cos(arg)
        acc = -self._amp * self._omega**2 * np.sin(arg)
        return pos, vel, acc

    def _relative(self, t: float) -> RelativeState:
        pos, vel, acc = self._target(t)
        return RelativeState(
            position=pos - self._p,
            velocity=vel - self._v,
            acceleration=acc - self._a_cmd,
        )

    def reset(self, seed: int | None = None) -> StepResult:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        rng = self._rng
        toy = self.toy
        self._omega = rng.uniform(toy.omega_min, toy.omega_max, size=3)
        self._phase = rng.uniform(0.0, 2 * np.pi, size=3)
        self._amp = np.full(3, toy.amplitude_m)
        self._t = 0.0
        self._steps = 0
        self._done = False
        self._a_cmd = np.zeros(3)
        target0, tvel0, _ = self._target(0.0)
        offset = np.array([self.reward_cfg.d_star, 0.0, 0.0])
        offset += rng.uniform(-0.02, 0.02, size=3)
        self._p = target0 - offset
        self._v = tvel0.copy()  # start station-keeping, not lagging
        rel = self._relative(0.0)
        _, bd = reward(rel, float(np.linalg.norm(self._v)), self.reward_cfg)
        return StepResult(
            obs_array=rel.as_vector(),
            privileged=rel.as_vector(),
            reward=0.0,
            done=False,
            done_reason="none",
            breakdown=bd,
            t=0.0,
        )

    def step(self, action) -> StepResult:
        if self._done:
            raise ContractViolation("step() called on a finished episode")
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        if a.shape != (3,):
            raise ContractViolation(f"action must have shape (3,), got {a.shape}")
        toy = self.toy
        dt = toy.dt_s
        self._a_cmd = a * toy.accel_max
        self._v += (self._a_cmd - toy.drag * self._v) * dt
        self._p += self._v * dt
        self._steps += 1
        self._t = self._steps * dt

        rel = self._relative(self._t)
        speed = float(np.linalg.norm(self._v))
        r, bd = reward(rel, speed, self.reward_cfg)

        done_reason = "none"
        if bd.collision:
            done_reason = "collision"
        elif np.linalg.norm(rel.position) > toy.lost_radius_m:
            done_reason = "lost_sight"
        elif self._steps >= self.max_steps:
            done_reason = "timeout"
        self._done = done_reason != "none"

        return StepResult(
            obs_array=rel.as_vector(),
            privileged=rel.as_vector(),
            reward=float(r),
            done=self._done,
            done_reason=done_reason,
            breakdown=bd,
            t=self._t,
        )
