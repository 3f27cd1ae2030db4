"""AdamW with decoupled weight decay and the linear warmup/decay schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

NO_DECAY_SUFFIXES = ("bias", "gamma", "beta")


def decays(name: str) -> bool:
    """Bias and layer-norm parameters are excluded from weight decay."""
    return name.rsplit(".", 1)[-1] not in NO_DECAY_SUFFIXES


@dataclass
class Schedule:
    peak_lr: float
    total_steps: int
    warmup_proportion: float = 0.1

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not 0.0 < self.warmup_proportion < 1.0:
            raise ValueError("warmup_proportion must be in (0, 1)")

    @property
    def warmup_steps(self) -> int:
        return max(1, round(self.warmup_proportion * self.total_steps))


def lr_at(step: int, schedule: Schedule) -> float:
    """Learning rate after ``step`` optimizer updates.

    Rises linearly from 0 to the peak over the warmup steps, then falls
    linearly to 0 at ``total_steps``.
    """
    total, warm = schedule.total_steps, schedule.warmup_steps
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if step <= warm:
        return schedule.peak_lr * step / warm
    if total == warm:
        return 0.0
    return schedule.peak_lr * (total - step) / (total - warm)


@dataclass
class OptimizerState:
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr_now: float,
) -> None:
    """One AdamW update, in place on ``params`` and ``state``.

    Parameters without an entry in ``grads`` are treated as having zero
    gradient (their moments still decay, matching a dense optimizer).
    """
    if lr_now < 0:
        raise ValueError("learning rate must be non-negative")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.step += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        w = p.data
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(w)
        g = g.astype(w.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if lr_now == 0.0:
            continue
        if state.weight_decay and decays(name):
            w -= lr_now * state.weight_decay * w
        w -= (lr_now / bc1) * m / (np.sqrt(v / bc2) + state.eps)


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {n: p.grad for n, p in params.items() if p.grad is not None}


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm
