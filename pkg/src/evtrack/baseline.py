"""Detection-vector baseline: ground-truth detections plus noise injection.

The baseline replaces the event stream with an idealized object detector:
the target's projected pixel center, its range, and a validity flag. The
policy then conditions on the last three detections. Detector imperfection
is modeled by :func:`perturb`, which jitters the pixel center by
``eta * min(W, H)`` standard deviations and the range multiplicatively by
``eta``; training uses clean detections, evaluation sweeps eta upward.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .dynamics import DroneState
from .errors import ContractViolation
from .world import CameraModel, project_point

DETECTION_DIM = 4  # u, v, distance, valid


@dataclass(frozen=True)
class Detection:
    """One detector output in pixel coordinates."""

    u: float
    v: float
    distance: float
    valid: bool

    @classmethod
    def invalid(cls) -> "Detection":
        return cls(u=0.0, v=0.0, distance=0.0, valid=False)


@dataclass(frozen=True)
class NoiseConfig:
    """Detector corruption level; eta = 0 is the exact identity."""

    eta: float = 0.0

    def __post_init__(self):
        if self.eta < 0:
            raise ContractViolation("eta must be non-negative")


def ground_truth_detection(
    camera: CameraModel, state: DroneState, target_position
) -> Detection:
    """Perfect detection from the shared pinhole projection.

    Invalid (all-zero fields) whenever the target center is behind the
    camera or projects outside the image bounds.
    """
    u, v, depth = project_point(camera, state, target_position)
    if depth <= 0 or not np.isfinite(u):
        return Detection.invalid()
    if not (0.0 <= u <= camera.width - 1 and 0.0 <= v <= camera.height - 1):
        return Detection.invalid()
    rel = np.asarray(target_position, dtype=np.float64) - state.position
    return Detection(u=u, v=v, distance=float(np.linalg.norm(rel)), valid=True)


def perturb(
    det: Detection,
    noise: NoiseConfig,
    camera: CameraModel,
    rng: np.random.Generator,
) -> Detection:
    """Apply detector noise; invalid detections pass through untouched."""
    if not det.valid or noise.eta == 0.0:
        return det
    scale = noise.eta * min(camera.width, camera.height)
    du, dv = rng.standard_normal(2) * scale
    u = float(np.clip(det.u + du, 0.0, camera.width - 1))
    v = float(np.clip(det.v + dv, 0.0, camera.height - 1))
    distance = det.distance * float(1.0 + noise.eta * rng.standard_normal())
    return Detection(u=u, v=v, distance=max(distance, 0.0), valid=True)


class DetectionHistory:
    """FIFO of the last N detections, zero-padded, flattened to a vector.

    Pixel coordinates are normalized to [-1, 1] about the image center so
    the policy input does not depend on resolution; invalid detections
    contribute all-zero entries.
    """

    def __init__(self, depth: int, camera: CameraModel):
        self.depth = depth
        self.camera = camera
        self._dets: deque = deque(maxlen=depth)
        self.reset()

    def reset(self) -> None:
        self._dets.clear()
        for _ in range(self.depth):
            self._dets.append(Detection.invalid())

    def push(self, det: Detection) -> np.ndarray:
        self._dets.append(det)
        return self.vector()

    def vector(self) -> np.ndarray:
        cam = self.camera
        rows = []
        for det in self._dets:
            if det.valid:
                rows.append(
                    [
                        (det.u - cam.cx) / (cam.width / 2.0),
                        (det.v - cam.cy) / (cam.height / 2.0),
                        det.distance,
                        1.0,
                    ]
                )
            else:
                rows.append([0.0, 0.0, 0.0, 0.0])
        return np.asarray(rows, dtype=np.float32).reshape(-1)
