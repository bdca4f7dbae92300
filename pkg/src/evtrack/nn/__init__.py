"""Numpy-only network stack: autodiff, layers, models, optimizer, I/O."""

from .autodiff import Tensor, concat, conv2d, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Conv2d, Linear, Module, orthogonal
from .models import (
    ActorNet,
    CriticNet,
    FrameEncoder,
    VectorActor,
    deterministic_action,
    sample_action,
    sample_action_graph,
)
from .optim import Adam

__all__ = [
    "Tensor",
    "concat",
    "conv2d",
    "no_grad",
    "load_checkpoint",
    "save_checkpoint",
    "Conv2d",
    "Linear",
    "Module",
    "orthogonal",
    "ActorNet",
    "CriticNet",
    "FrameEncoder",
    "VectorActor",
    "deterministic_action",
    "sample_action",
    "sample_action_graph",
    "Adam",
]
