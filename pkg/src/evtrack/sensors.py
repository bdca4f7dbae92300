"""Event synthesis, frame stacking, and the observation queue.

Events follow the contrast-threshold model: each pixel remembers a reference
log-intensity, and whenever the log intensity L = log(I + eps) crosses
reference +/- C it emits an event with the crossing's interpolated timestamp
and polarity, and the reference steps to the crossed level. Between rendered
frames L is interpolated linearly, so a brightness step of 3.5 C yields 3
events with a 0.5 C residual carried in the reference.

Event frames count events per pixel and polarity over fixed windows of
``delta_t_s``; observations are FIFO queues of the most recent N frames
(oldest first). RGB-mode observations reuse the same queue mechanics with
intensity images sampled once per control period.

``RGB_MAX_DISPLACEMENT_FRAC`` documents the sampling-adequacy criterion for
the RGB mode: once the target's image-plane displacement per control period
exceeds this fraction of the frame side, the motion leaves the +-W/16
search radius customary for frame-based block matching, so consecutive
frames stop supporting local correspondence, while the event stream keeps
resolving the motion inside the period.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .config import SensorConfig
from .errors import ContractViolation, SensorError

RGB_MAX_DISPLACEMENT_FRAC = 1.0 / 16.0


class Event(NamedTuple):
    """A single polarity event."""

    t: float
    x: int
    y: int
    p: int  # +1 brightness increase, -1 decrease


class EventStream:
    """A time-sorted batch of events from one sensor, stored as arrays."""

    __slots__ = ("t", "x", "y", "p", "width", "height")

    def __init__(self, t, x, y, p, width: int, height: int):
        self.t = np.asarray(t, dtype=np.float64)
        self.x = np.asarray(x, dtype=np.int32)
        self.y = np.asarray(y, dtype=np.int32)
        self.p = np.asarray(p, dtype=np.int8)
        self.width = int(width)
        self.height = int(height)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ContractViolation("event arrays must have equal length")
        if n:
            if not np.all(np.isin(self.p, (-1, 1))):
                raise ContractViolation("polarity must be +1 or -1")
            if self.x.min() < 0 or self.x.max() >= width:
                raise ContractViolation("event x out of range")
            if self.y.min() < 0 or self.y.max() >= height:
                raise ContractViolation("event y out of range")
            if np.any(np.diff(self.t) < 0):
                raise ContractViolation("event timestamps must be sorted")

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        return cls([], [], [], [], width, height)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(float(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class EventFrame:
    """Per-pixel, per-polarity event counts over one stacking window.

    Channel 0 counts negative events, channel 1 positive events.
    """

    counts: np.ndarray           # (H, W, 2) uint16
    window_start: float
    window_len: float

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 3 or c.shape[2] != 2:
            raise ContractViolation("counts must have shape (H, W, 2)")
        if self.window_len <= 0:
            raise ContractViolation("window_len must be positive")
        object.__setattr__(self, "counts", c.astype(np.uint16, copy=False))

    @classmethod
    def zeros(cls, height: int, width: int, window_start: float, window_len: float):
        return cls(
            counts=np.zeros((height, width, 2), dtype=np.uint16),
            window_start=window_start,
            window_len=window_len,
        )


@dataclass(frozen=True)
class IntensityFrame:
    """A rendered grayscale frame used by the RGB observation mode."""

    image: np.ndarray            # (H, W) float32 in [0, 1]
    t: float


@dataclass
class SensorState:
    """Per-pixel memory threaded through successive event generations."""

    ref: np.ndarray              # (H, W) reference log intensity
    last_event_t: np.ndarray     # (H, W) time of last emitted event

    def __post_init__(self):
        # the generator mutates flat views in place; keep storage contiguous
        self.ref = np.ascontiguousarray(self.ref, dtype=np.float64)
        self.last_event_t = np.ascontiguousarray(self.last_event_t, dtype=np.float64)

    @classmethod
    def from_image(cls, image: np.ndarray, cfg: SensorConfig) -> "SensorState":
        ref = lin_log(image, cfg.log_eps)
        return cls(ref=ref, last_event_t=np.full(ref.shape, -np.inf))


def lin_log(image: np.ndarray, eps: float) -> np.ndarray:
    """Log intensity with the configured dark-level offset."""
    img = np.asarray(image, dtype=np.float64)
    if np.any(img < 0):
        raise SensorError("intensity images must be non-negative")
    return np.log(img + eps)


def generate_events(
    prev: np.ndarray,
    nxt: np.ndarray,
    t0: float,
    t1: float,
    state: SensorState,
    cfg: SensorConfig,
    rng: np.random.Generator | None = None,
) -> EventStream:
    """Synthesize the events between two frames, updating ``state`` in place.

    Log intensity is interpolated linearly on [t0, t1); every crossing of
    reference +/- C emits one event and steps the reference by C toward the
    new level. Timestamps are guaranteed inside the half-open interval and
    sorted. With ``noise_rate_hz`` > 0 and an ``rng``, background noise
    events (which do not move the reference) are mixed in.
    """
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if prev.shape != nxt.shape or prev.ndim != 2:
        raise SensorError(f"frame shape mismatch: {prev.shape} vs {nxt.shape}")
    if state.ref.shape != prev.shape:
        raise SensorError("sensor state shape does not match frames")
    if not t1 > t0:
        raise SensorError("need t1 > t0")

    h, w = prev.shape
    c = cfg.contrast_threshold
    l0 = lin_log(prev, cfg.log_eps).ravel()
    l1 = lin_log(nxt, cfg.log_eps).ravel()
    ref = state.ref.ravel()

    d = l1 - ref
    n_cross = np.zeros(d.shape, dtype=np.int64)
    rising = d >= c
    falling = d <= -c
    n_cross[rising] = np.floor(d[rising] / c).astype(np.int64)
    n_cross[falling] = np.floor(-d[falling] / c).astype(np.int64)
    sign = np.zeros(d.shape, dtype=np.int8)
    sign[rising] = 1
    sign[falling] = -1

    active = n_cross > 0
    counts = n_cross[active]
    if counts.size:
        slope = (l1 - l0)[active]
        if np.any(slope * sign[active] <= 0):
            # reference invariant |L - ref| < C was broken by the caller
            raise SensorError("reference memory is stale for these frames")
        pix = np.repeat(np.nonzero(active)[0], counts)
        total = int(counts.sum())
        ends = np.cumsum(counts)
        k = np.arange(1, total + 1) - np.repeat(ends - counts, counts)
        ep = sign[active].repeat(counts)
        lvl = ref[pix] + ep * (k * c)
        frac = (lvl - l0[pix]) / (l1 - l0)[pix]
        t = t0 + frac * (t1 - t0)
        t = np.clip(t, t0, np.nextafter(t1, -np.inf))
        ex = (pix % w).astype(np.int32)
        ey = (pix // w).astype(np.int32)
        ref[active] += sign[active] * counts * c
    else:
        t = np.empty(0)
        ex = np.empty(0, dtype=np.int32)
        ey = np.empty(0, dtype=np.int32)
        ep = np.empty(0, dtype=np.int8)
        pix = np.empty(0, dtype=np.int64)

    if cfg.refractory_s > 0 and len(t):
        keep = np.ones(len(t), dtype=bool)
        last = state.last_event_t.ravel()
        order = np.argsort(t, kind="stable")
        for i in order:
            pi = pix[i]
            if t[i] - last[pi] >= cfg.refractory_s:
                last[pi] = t[i]
            else:
                keep[i] = False
        t, ex, ey, ep = t[keep], ex[keep], ey[keep], ep[keep]

    if cfg.noise_rate_hz > 0 and rng is not None:
        lam = cfg.noise_rate_hz * (t1 - t0)
        n_noise = rng.poisson(lam, size=h * w)
        hot = n_noise > 0
        if hot.any():
            reps = n_noise[hot]
            npix = np.repeat(np.nonzero(hot)[0], reps)
            nt = rng.uniform(t0, t1, size=npix.size)
            nt = np.minimum(nt, np.nextafter(t1, -np.inf))
            npol = rng.choice(np.array([-1, 1], dtype=np.int8), size=npix.size)
            t = np.concatenate([t, nt])
            ex = np.concatenate([ex, (npix % w).astype(np.int32)])
            ey = np.concatenate([ey, (npix // w).astype(np.int32)])
            ep = np.concatenate([ep, npol])

    order = np.argsort(t, kind="stable")
    return EventStream(t[order], ex[order], ey[order], ep[order], w, h)


def stack_events(
    events: EventStream, window_start: float, cfg: SensorConfig
) -> EventFrame:
    """Count events into an (H, W, 2) frame for one stacking window.

    Every event must fall inside [window_start, window_start + delta_t_s);
    out-of-window timestamps are a contract violation, not silent drops.
    """
    dt = cfg.delta_t_s
    if len(events):
        t = events.t
        if t.min() < window_start or t.max() >= window_start + dt:
            raise ContractViolation(
                "event timestamps outside the stacking window "
                f"[{window_start}, {window_start + dt})"
            )
    counts = np.zeros((events.height, events.width, 2), dtype=np.uint16)
    if len(events):
        ch = (events.p > 0).astype(np.int64)
        np.add.at(counts, (events.y, events.x, ch), 1)
    return EventFrame(counts=counts, window_start=window_start, window_len=dt)


class FrameQueue:
    """FIFO of the N most recent frames, zero-padded at episode start."""

    def __init__(self, depth: int, height: int, width: int, mode: str = "event"):
        if depth < 1:
            raise ContractViolation("queue depth must be >= 1")
        if mode not in ("event", "rgb"):
            raise ContractViolation("mode must be 'event' or 'rgb'")
        self.depth = depth
        self.height = height
        self.width = width
        self.mode = mode
        self._frames: deque = deque(maxlen=depth)
        self.reset()

    def reset(self) -> None:
        self._frames.clear()
        for _ in range(self.depth):
            if self.mode == "event":
                self._frames.append(EventFrame.zeros(self.height, self.width, 0.0, 1.0))
            else:
                self._frames.append(
                    IntensityFrame(
                        image=np.zeros((self.height, self.width), dtype=np.float32),
                        t=0.0,
                    )
                )

    def push(self, frame) -> "Observation":
        if self.mode == "event":
            if not isinstance(frame, EventFrame):
                raise ContractViolation("event queue takes EventFrame")
            if frame.counts.shape[:2] != (self.height, self.width):
                raise ContractViolation("frame resolution mismatch")
        else:
            if not isinstance(frame, IntensityFrame):
                raise ContractViolation("rgb queue takes IntensityFrame")
            if frame.image.shape != (self.height, self.width):
                raise ContractViolation("frame resolution mismatch")
        self._frames.append(frame)
        return self.observation()

    def observation(self) -> "Observation":
        return Observation(frames=tuple(self._frames), mode=self.mode)


def push_observation(queue: FrameQueue, frame) -> "Observation":
    """Push one frame and return the refreshed observation (oldest first)."""
    return queue.push(frame)


@dataclass(frozen=True)
class Observation:
    """The most recent N frames, oldest first, plus the sensing mode."""

    frames: tuple
    mode: str

    def to_array(self) -> np.ndarray:
        """Stack to (N, 2, H, W) float32 network input.

        Event frames contribute raw per-polarity counts; RGB frames
        contribute the intensity image replicated onto both channels so the
        encoder input shape is mode-independent.
        """
        planes = []
        for frame in self.frames:
            if isinstance(frame, EventFrame):
                planes.append(
                    frame.counts.astype(np.float32).transpose(2, 0, 1)
                )
            else:
                img = frame.image.astype(np.float32)
                planes.append(np.stack([img, img]))
        return np.stack(planes)


# ---------------------------------------------------------------------------
# debug dumps
# ---------------------------------------------------------------------------


def write_events_csv(events: EventStream, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,x,y,p\n")
        for i in range(len(events)):
            fh.write(
                f"{events.t[i]:.9f},{events.x[i]},{events.y[i]},{events.p[i]}\n"
            )


def _write_pgm(gray: np.ndarray, path: str) -> None:
    h, w = gray.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"P2\n{w} {h}\n255\n")
        for row in gray:
            fh.write(" ".join(str(int(v)) for v in row))
            fh.write("\n")


def write_intensity_pgm(image: np.ndarray, path: str) -> None:
    _write_pgm(np.clip(np.asarray(image) * 255.0, 0, 255).astype(np.uint8), path)


def write_event_frame_pgm(frame: EventFrame, path: str) -> None:
    """Signed count visualization: gray = 128 + 24 * (pos - neg), clipped."""
    signed = frame.counts[:, :, 1].astype(np.int32) - frame.counts[:, :, 0]
    _write_pgm(np.clip(128 + 24 * signed, 0, 255).astype(np.uint8), path)


def events_per_frame(frames: list[EventFrame]) -> float:
    """Mean event count per frame; the lowlight activity diagnostic."""
    if not frames:
        return 0.0
    return float(np.mean([f.counts.sum() for f in frames]))


def rgb_mean_intensity(frames: list[IntensityFrame]) -> float:
    if not frames:
        return 0.0
    return float(np.mean([f.image.mean() for f in frames]))
