"""Quadrotor rigid-body dynamics with a fixed-step RK4 integrator.

The tracker is modeled as a rigid body driven by collective thrust along its
body z-axis and commanded body rates:

    p' = v
    v' = R e3 * (f / m) + g - (c / m) * v
    R' = R [omega]x

with g the world-frame gravity vector and [omega]x the skew-symmetric matrix
of the body rates. States are integrated with classical RK4 and the rotation
matrix is re-orthonormalized (Gram-Schmidt) after every step, keeping
det(R) = 1 to float precision over arbitrarily long episodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import DynamicsConfig
from .errors import ContractViolation, IntegrationError

MAX_STEP_DT = 0.05


@dataclass(frozen=True)
class DroneParams:
    """Physical parameters of the tracker."""

    mass_kg: float = 1.0
    gravity: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, -9.8])
    )
    f_min: float = 0.0
    f_max: float = 18.0
    omega_max: float = 3.5
    drag_coeff: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "gravity", np.asarray(self.gravity, dtype=np.float64).copy()
        )
        if self.mass_kg <= 0:
            raise ContractViolation("mass_kg must be positive")
        if self.f_min > self.f_max:
            raise ContractViolation("f_min must not exceed f_max")
        if self.omega_max <= 0:
            raise ContractViolation("omega_max must be positive")
        if self.drag_coeff < 0:
            raise ContractViolation("drag_coeff must be non-negative")
        if self.gravity.shape != (3,):
            raise ContractViolation("gravity must be a 3-vector")

    @classmethod
    def from_config(cls, cfg: DynamicsConfig) -> "DroneParams":
        return cls(
            mass_kg=cfg.mass_kg,
            gravity=np.array([0.0, 0.0, cfg.gravity_z]),
            f_min=cfg.f_min,
            f_max=cfg.f_max,
            omega_max=cfg.omega_max,
            drag_coeff=cfg.drag_coeff,
        )


@dataclass(frozen=True)
class DroneState:
    """World-frame kinematic state at time ``t``."""

    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray  # body-to-world, columns are body axes
    t: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).copy()
        v = np.asarray(self.velocity, dtype=np.float64).copy()
        r = np.asarray(self.rotation, dtype=np.float64).copy()
        if p.shape != (3,) or v.shape != (3,):
            raise ContractViolation("position and velocity must be 3-vectors")
        if r.shape != (3, 3):
            raise ContractViolation("rotation must be a 3x3 matrix")
        if not (np.isfinite(p).all() and np.isfinite(v).all() and np.isfinite(r).all()):
            raise ContractViolation("state contains non-finite values")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ContractViolation("rotation determinant must be 1 within 1e-6")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "velocity", v)
        object.__setattr__(self, "rotation", r)

    @classmethod
    def hover(cls, position=(0.0, 0.0, 0.0), t: float = 0.0) -> "DroneState":
        return cls(
            position=np.asarray(position, dtype=np.float64),
            velocity=np.zeros(3),
            rotation=np.eye(3),
            t=t,
        )


@dataclass(frozen=True)
class ControlInput:
    """Collective thrust (N) and body rates (rad/s).

    Use :func:`clamp_input` (or :meth:`clamped`) to build inputs from raw
    commands; bounds are enforced by clamping at construction time there.
    """

    thrust: float
    omega: np.ndarray

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=np.float64).copy()
        if om.shape != (3,):
            raise ContractViolation("omega must be a 3-vector")
        if not (np.isfinite(om).all() and np.isfinite(self.thrust)):
            raise ContractViolation("control input contains non-finite values")
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "thrust", float(self.thrust))

    @classmethod
    def clamped(cls, thrust: float, omega, params: DroneParams) -> "ControlInput":
        om = np.clip(np.asarray(omega, dtype=np.float64), -params.omega_max, params.omega_max)
        f = float(np.clip(thrust, params.f_min, params.f_max))
        return cls(thrust=f, omega=om)


def clamp_input(thrust: float, omega, params: DroneParams) -> ControlInput:
    """Clamp a raw command into the feasible control set (idempotent)."""
    return ControlInput.clamped(thrust, omega, params)


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the columns; third column from the cross product."""
    c0 = r[:, 0] / np.linalg.norm(r[:, 0])
    c1 = r[:, 1] - np.dot(c0, r[:, 1]) * c0
    c1 = c1 / np.linalg.norm(c1)
    c2 = np.cross(c0, c1)
    return np.column_stack([c0, c1, c2])


def step(
    state: DroneState, u: ControlInput, params: DroneParams, dt: float
) -> DroneState:
    """Advance the state by ``dt`` seconds with classical RK4.

    ``dt`` must lie in (0, 0.05]; callers needing a longer horizon take
    multiple steps. The input is assumed clamped already (see
    :func:`clamp_input`); values outside the feasible set raise.
    """
    if not 0.0 < dt <= MAX_STEP_DT:
        raise ContractViolation(f"dt must lie in (0, {MAX_STEP_DT}], got {dt}")
    if not (params.f_min - 1e-12 <= u.thrust <= params.f_max + 1e-12):
        raise ContractViolation("thrust outside clamped bounds")
    if np.any(np.abs(u.omega) > params.omega_max + 1e-12):
        raise ContractViolation("body rates outside clamped bounds")

    omega_x = _skew(u.omega)
    inv_m = 1.0 / params.mass_kg
    g = params.gravity
    c = params.drag_coeff

    def deriv(p, v, r):
        dp = v
        dv = r[:, 2] * (u.thrust * inv_m) + g - (c * inv_m) * v
        dr = r @ omega_x
        return dp, dv, dr

    p0, v0, r0 = state.position, state.velocity, state.rotation
    k1 = deriv(p0, v0, r0)
    k2 = deriv(p0 + 0.5 * dt * k1[0], v0 + 0.5 * dt * k1[1], r0 + 0.5 * dt * k1[2])
    k3 = deriv(p0 + 0.5 * dt * k2[0], v0 + 0.5 * dt * k2[1], r0 + 0.5 * dt * k2[2])
    k4 = deriv(p0 + dt * k3[0], v0 + dt * k3[1], r0 + dt * k3[2])

    sixth = dt / 6.0
    p1 = p0 + sixth * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    v1 = v0 + sixth * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    r1 = r0 + sixth * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])

    if not (np.isfinite(p1).all() and np.isfinite(v1).all() and np.isfinite(r1).all()):
        raise IntegrationError(f"non-finite state after step at t={state.t}")
    return DroneState(
        position=p1,
        velocity=v1,
        rotation=_orthonormalize(r1),
        t=state.t + dt,
    )
