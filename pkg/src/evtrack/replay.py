"""Fixed-capacity replay storage with per-slot integrity checksums.

Image observations are stored as uint8 (event counts saturate at 255,
RGB is quantized by the codec scale); vector observations stay float32.
Every slot carries a CRC32 of its packed payload so silent corruption
anywhere in the transport or storage path is detectable on demand.
"""

from __future__ import annotations

import struct
import threading
import zlib
from typing import NamedTuple

import numpy as np

from .errors import ContractViolation

__all__ = ["ObsCodec", "ReplayBatch", "ReplayBuffer"]


class ObsCodec:
    """Encode observations into their storage dtype and back."""

    def __init__(self, shape: tuple, dtype=np.float32, scale: float = 1.0):
        if scale <= 0:
            raise ContractViolation(f"codec scale must be positive, got {scale}")
        self.shape = tuple(int(s) for s in shape)
        self.dtype = np.dtype(dtype)
        self.scale = float(scale)
        if self.dtype not in (np.dtype(np.uint8), np.dtype(np.float32)):
            raise ContractViolation(f"unsupported storage dtype {self.dtype}")

    @classmethod
    def for_observation(cls, mode: str, shape: tuple) -> "ObsCodec":
        # event frames hold small integer counts (saturating at 255 is
        # harmless at realistic contrast settings); rgb lives in [0, 1]
        # and quantizes to 1/255 steps; vector modes stay exact
        if mode == "event":
            return cls(shape, np.uint8, scale=1.0)
        if mode == "rgb":
            return cls(shape, np.uint8, scale=255.0)
        return cls(shape, np.float32, scale=1.0)

    def encode(self, obs: np.ndarray) -> np.ndarray:
        if tuple(obs.shape) != self.shape:
            raise ContractViolation(
                f"observation shape {obs.shape} != codec shape {self.shape}"
            )
        if self.dtype == np.uint8:
            return np.clip(np.rint(obs * self.scale), 0, 255).astype(np.uint8)
        return np.asarray(obs, dtype=np.float32)

    def decode(self, stored: np.ndarray) -> np.ndarray:
        if self.dtype == np.uint8:
            return stored.astype(np.float32) / np.float32(self.scale)
        return stored.astype(np.float32, copy=False)


class ReplayBatch(NamedTuple):
    obs: np.ndarray        # (B, *obs_shape) float32, decoded
    priv: np.ndarray       # (B, priv_dim) float32
    action: np.ndarray     # (B, action_dim) float32
    reward: np.ndarray     # (B,) float32
    next_obs: np.ndarray
    next_priv: np.ndarray
    done: np.ndarray       # (B,) float32 in {0, 1}


def _slot_checksum(
    obs: np.ndarray,
    priv: np.ndarray,
    action: np.ndarray,
    reward: float,
    next_obs: np.ndarray,
    next_priv: np.ndarray,
    done: bool,
) -> int:
    tail = struct.pack("<dB", float(reward), int(bool(done)))
    crc = zlib.crc32(np.ascontiguousarray(obs).tobytes())
    crc = zlib.crc32(np.ascontiguousarray(priv).tobytes(), crc)
    crc = zlib.crc32(np.ascontiguousarray(action).tobytes(), crc)
    crc = zlib.crc32(np.ascontiguousarray(next_obs).tobytes(), crc)
    crc = zlib.crc32(np.ascontiguousarray(next_priv).tobytes(), crc)
    return zlib.crc32(tail, crc)


class ReplayBuffer:
    """Preallocated uniform-sampling ring buffer, safe for one writer
    thread plus one reader thread."""

    def __init__(
        self,
        capacity: int,
        codec: ObsCodec,
        priv_dim: int,
        action_dim: int,
    ):
        if capacity <= 0:
            raise ContractViolation(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.codec = codec
        shape = codec.shape
        self._obs = np.zeros((capacity, *shape), dtype=codec.dtype)
        self._next_obs = np.zeros((capacity, *shape), dtype=codec.dtype)
        self._priv = np.zeros((capacity, priv_dim), dtype=np.float32)
        self._next_priv = np.zeros((capacity, priv_dim), dtype=np.float32)
        self._action = np.zeros((capacity, action_dim), dtype=np.float32)
        self._reward = np.zeros(capacity, dtype=np.float64)
        self._done = np.zeros(capacity, dtype=np.uint8)
        self._crc = np.zeros(capacity, dtype=np.uint32)
        self._count = 0
        self._total = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return self._count

    @property
    def total_appended(self) -> int:
        with self._lock:
            return self._total

    def append(
        self,
        obs: np.ndarray,
        priv: np.ndarray,
        action: np.ndarray,
        reward: float,
        next_obs: np.ndarray,
        next_priv: np.ndarray,
        done: bool,
    ) -> None:
        """Store one transition; observations may be raw (codec encodes)
        or already in storage dtype (passed through)."""
        for arr in (obs, next_obs):
            if tuple(arr.shape) != self.codec.shape:
                raise ContractViolation(
                    f"observation shape {arr.shape} != codec shape {self.codec.shape}"
                )
        enc = obs if obs.dtype == self.codec.dtype else self.codec.encode(obs)
        enc_next = (
            next_obs
            if next_obs.dtype == self.codec.dtype
            else self.codec.encode(next_obs)
        )
        priv = np.asarray(priv, dtype=np.float32)
        next_priv = np.asarray(next_priv, dtype=np.float32)
        action = np.asarray(action, dtype=np.float32)
        if not (np.all(np.isfinite(priv)) and np.all(np.isfinite(action))):
            raise ContractViolation("non-finite transition rejected")
        if not np.isfinite(reward):
            raise ContractViolation("non-finite reward rejected")
        reward = float(reward)
        crc = _slot_checksum(enc, priv, action, reward, enc_next, next_priv, done)
        with self._lock:
            i = self._total % self.capacity
            self._obs[i] = enc
            self._next_obs[i] = enc_next
            self._priv[i] = priv
            self._next_priv[i] = next_priv
            self._action[i] = action
            self._reward[i] = reward
            self._done[i] = 1 if done else 0
            self._crc[i] = crc
            self._total += 1
            self._count = min(self._total, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> ReplayBatch:
        with self._lock:
            if self._count < batch_size:
                raise ContractViolation(
                    f"buffer holds {self._count} < batch {batch_size}"
                )
            idx = rng.integers(0, self._count, size=batch_size)
            obs = self._obs[idx]
            next_obs = self._next_obs[idx]
            priv = self._priv[idx].copy()
            next_priv = self._next_priv[idx].copy()
            action = self._action[idx].copy()
            reward = self._reward[idx].astype(np.float32)
            done = self._done[idx].astype(np.float32)
        return ReplayBatch(
            self.codec.decode(obs),
            priv,
            action,
            reward,
            self.codec.decode(next_obs),
            next_priv,
            done,
        )

    def audit(self) -> int:
        """Re-verify every stored slot's checksum; returns slots checked."""
        with self._lock:
            count = self._count
            for i in range(count):
                crc = _slot_checksum(
                    self._obs[i],
                    self._priv[i],
                    self._action[i],
                    float(self._reward[i]),
                    self._next_obs[i],
                    self._next_priv[i],
                    bool(self._done[i]),
                )
                if crc != int(self._crc[i]):
                    raise ContractViolation(f"replay slot {i} failed checksum")
        return count
