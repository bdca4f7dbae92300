"""Parameter containers and layer primitives built on the autodiff Tensor."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ContractViolation
from .autodiff import Tensor, conv2d


def orthogonal(rng: np.random.Generator, shape: tuple, gain: float, dtype):
    """Orthogonal matrix init (QR of a Gaussian, sign-fixed)."""
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    # force C layout so matmul results are bit-identical before and after
    # a checkpoint round trip (BLAS picks kernels by memory order)
    return np.ascontiguousarray((gain * q[:rows, :cols]).astype(dtype))


class Module:
    """Minimal parameter-tree container."""

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in self._children():
            full = f"{prefix}.{name}" if prefix else name
            if isinstance(value, Tensor):
                yield full, value
            else:
                yield from value.named_parameters(full)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ContractViolation(
                f"state dict mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ContractViolation(
                    f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}"
                )
            p.data = arr.astype(p.data.dtype, copy=True)

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class Linear(Module):
    """Affine map x @ w + b with orthogonal initialization."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        gain: float = math.sqrt(2.0),
        dtype=np.float32,
    ):
        self.w = Tensor(orthogonal(rng, (in_dim, out_dim), gain, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def scale_parameters(self, factor: float):
        self.w.data *= factor
        self.b.data *= factor


class Conv2d(Module):
    """Strided 2-D convolution with orthogonal (per-filter) initialization."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 1,
        gain: float = math.sqrt(2.0),
        dtype=np.float32,
    ):
        flat = orthogonal(rng, (out_channels, in_channels * kernel * kernel), gain, dtype)
        self.w = Tensor(
            flat.reshape(out_channels, in_channels, kernel, kernel),
            requires_grad=True,
        )
        self.b = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)
