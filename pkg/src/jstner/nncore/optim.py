"""Parameters, Adam with bias correction, and the warmup / inverse-sqrt
learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


class Parameter:
    """A trainable tensor plus its Adam moment state and step counter."""

    __slots__ = ("name", "t", "m", "v", "step")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.t = Tensor(np.asarray(value, dtype=np.float64))
        self.m = np.zeros_like(self.t.data)
        self.v = np.zeros_like(self.t.data)
        self.step = 0

    @property
    def data(self) -> np.ndarray:
        return self.t.data

    @property
    def grad(self):
        return self.t.grad

    def zero_grad(self):
        self.t.grad = None

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.t.data.shape})"


def zero_grads(params):
    for p in params:
        p.zero_grad()


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.
    Returns the pre-clip norm."""
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(sq))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.t.grad = p.grad * scale
    return norm


def adam_step(params, lr: float, betas=(0.9, 0.98), eps: float = 1e-8):
    """Standard Adam update with bias correction; missing gradients are
    treated as zero (moments still decay, step counters still advance)."""
    b1, b2 = betas
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.step += 1
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * (g * g)
        mhat = p.m / (1.0 - b1 ** p.step)
        vhat = p.v / (1.0 - b2 ** p.step)
        p.t.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


@dataclass(frozen=True)
class LrSchedule:
    """Linear ramp to ``peak_lr`` over ``warmup_steps``, then inverse
    square-root decay. Defaults are the full-scale recipe; toy runs use a
    much shorter warmup."""

    peak_lr: float = 0.005
    warmup_steps: int = 20000

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")


def lr_at(schedule: LrSchedule, step: int) -> float:
    if step < 1:
        raise ValueError("step must be >= 1")
    if step <= schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    return schedule.peak_lr * (schedule.warmup_steps / step) ** 0.5
