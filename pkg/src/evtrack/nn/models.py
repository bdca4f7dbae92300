"""Actor, critic, and baseline policy networks.

The image actor encodes each of the N observation frames with one shared
strided-conv encoder (16-32-64-128 channels, global average pool, affine to
the feature width), concatenates the per-frame features, fuses them with an
affine layer, and runs a two-layer tanh head that outputs the action mean
and a hard-clipped log standard deviation. Critics are privileged: they see
the 9-D relative state and the action, never pixels. The vector actor (for
detection and toy observations) is a three-layer ReLU MLP with the same
Gaussian head contract.

Actions are squashed through tanh; log-probabilities carry the change-of-
variables correction term sum log(1 - tanh(u)^2 + 1e-6).
"""

from __future__ import annotations

import math

import numpy as np

from ..config import NetConfig
from ..errors import ContractViolation
from .autodiff import Tensor, concat
from .layers import Conv2d, Linear, Module

LOG_2PI = math.log(2.0 * math.pi)
_SQUASH_EPS = 1e-6


class FrameEncoder(Module):
    """Strided conv stack -> global average pool -> affine feature."""

    def __init__(self, cfg: NetConfig, in_channels: int, rng, dtype=np.float32):
        chans = list(cfg.encoder_channels)
        self.blocks = []
        prev = in_channels
        for ch in chans:
            self.blocks.append(
                Conv2d(prev, ch, kernel=3, rng=rng, stride=2, padding=1, dtype=dtype)
            )
            prev = ch
        self.head = Linear(prev, cfg.feature_dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x).relu()
        x = x.mean(axis=(2, 3))
        return self.head(x).relu()


class GaussianHead(Module):
    """Affine layer producing (mean, clipped log_std)."""

    def __init__(self, in_dim: int, action_dim: int, cfg: NetConfig, rng, dtype):
        self.out = Linear(in_dim, 2 * action_dim, rng, gain=1.0, dtype=dtype)
        self.out.scale_parameters(cfg.final_scale)
        self.action_dim = action_dim
        self.log_std_min = cfg.log_std_min
        self.log_std_max = cfg.log_std_max

    def __call__(self, h: Tensor) -> tuple[Tensor, Tensor]:
        out = self.out(h)
        mean = out[:, : self.action_dim]
        log_std = out[:, self.action_dim :].clip(self.log_std_min, self.log_std_max)
        return mean, log_std


class ActorNet(Module):
    """Image-observation policy with a shared per-frame encoder."""

    def __init__(
        self,
        cfg: NetConfig,
        frames: int = 3,
        in_channels: int = 2,
        action_dim: int = 4,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.frames = frames
        self.in_channels = in_channels
        self.encoder = FrameEncoder(cfg, in_channels, rng, dtype)
        d = cfg.feature_dim
        self.fusion = Linear(frames * d, d, rng, gain=1.0, dtype=dtype)
        self.h1 = Linear(d, cfg.head_hidden, rng, gain=1.0, dtype=dtype)
        self.h2 = Linear(cfg.head_hidden, cfg.head_hidden, rng, gain=1.0, dtype=dtype)
        self.head = GaussianHead(cfg.head_hidden, action_dim, cfg, rng, dtype)

    def __call__(self, obs: Tensor) -> tuple[Tensor, Tensor]:
        if obs.ndim != 5 or obs.shape[1] != self.frames or obs.shape[2] != self.in_channels:
            raise ContractViolation(
                f"actor expects (B, {self.frames}, {self.in_channels}, H, W), got {obs.shape}"
            )
        b = obs.shape[0]
        x = obs.reshape(b * self.frames, self.in_channels, obs.shape[3], obs.shape[4])
        feat = self.encoder(x)                     # (B*frames, D)
        fused = self.fusion(feat.reshape(b, -1))   # row-major: frames stay grouped
        h = self.h1(fused).tanh()
        h = self.h2(h).tanh()
        return self.head(h)


class VectorActor(Module):
    """MLP policy over flat observations (detections, toy state)."""

    def __init__(
        self,
        cfg: NetConfig,
        obs_dim: int,
        action_dim: int,
        rng: np.random.Generator | None = None,
        hidden: int | None = None,
        dtype=np.float32,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        width = hidden or cfg.baseline_hidden
        self.l1 = Linear(obs_dim, width, rng, dtype=dtype)
        self.l2 = Linear(width, width, rng, dtype=dtype)
        self.l3 = Linear(width, width, rng, dtype=dtype)
        self.head = GaussianHead(width, action_dim, cfg, rng, dtype)
        self.obs_dim = obs_dim

    def __call__(self, obs: Tensor) -> tuple[Tensor, Tensor]:
        if obs.ndim != 2 or obs.shape[1] != self.obs_dim:
            raise ContractViolation(
                f"vector actor expects (B, {self.obs_dim}), got {obs.shape}"
            )
        h = self.l1(obs).relu()
        h = self.l2(h).relu()
        h = self.l3(h).relu()
        return self.head(h)


class CriticNet(Module):
    """Privileged Q-network over (relative state, action)."""

    def __init__(
        self,
        cfg: NetConfig | None = None,
        state_dim: int = 9,
        action_dim: int = 4,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        cfg = cfg if cfg is not None else NetConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        width = cfg.critic_hidden
        self.l1 = Linear(state_dim + action_dim, width, rng, dtype=dtype)
        self.l2 = Linear(width, width, rng, dtype=dtype)
        self.out = Linear(width, 1, rng, gain=1.0, dtype=dtype)
        self.bounded = cfg.critic_tanh
        self.state_dim = state_dim
        self.action_dim = action_dim

    def __call__(self, state: Tensor, action: Tensor) -> Tensor:
        if state.ndim != 2 or state.shape[1] != self.state_dim:
            raise ContractViolation(
                f"critic expects state (B, {self.state_dim}), got {state.shape}"
            )
        if action.ndim != 2 or action.shape[1] != self.action_dim:
            raise ContractViolation(
                f"critic expects action (B, {self.action_dim}), got {action.shape}"
            )
        x = concat([state, action], axis=1)
        h = self.l1(x).relu()
        h = self.l2(h).relu()
        q = self.out(h)
        if self.bounded:
            q = q.tanh()
        return q


# ---------------------------------------------------------------------------
# squashed-Gaussian sampling
# ---------------------------------------------------------------------------


def sample_action(
    mean: np.ndarray,
    log_std: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Numpy rollout path: tanh-squashed sample and its log-probability."""
    std = np.exp(log_std)
    eps = rng.standard_normal(mean.shape)
    u = mean + std * eps
    a = np.tanh(u)
    logp = (
        -0.5 * eps * eps
        - log_std
        - 0.5 * LOG_2PI
        - np.log(1.0 - a * a + _SQUASH_EPS)
    ).sum(axis=-1)
    return a, logp


def deterministic_action(mean: np.ndarray) -> np.ndarray:
    return np.tanh(mean)


def sample_action_graph(
    mean: Tensor, log_std: Tensor, eps: np.ndarray
) -> tuple[Tensor, Tensor]:
    """Autodiff path with the reparameterization trick (eps held fixed).

    Returns (action, per-sample log-probability); gradients flow through the
    mean and log_std inputs exactly as in the numpy path.
    """
    std = log_std.exp()
    u = mean + std * Tensor(eps.astype(mean.dtype))
    a = u.tanh()
    const = (-0.5 * eps * eps - 0.5 * LOG_2PI).astype(mean.dtype)
    squash = ((1.0 + _SQUASH_EPS) - a * a).log()
    logp = (Tensor(const) - log_std - squash).sum(axis=1)
    return a, logp
