"""AdamW optimizer and the warmup-stable-decay learning rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(Exception):
    """Raised when a gradient contains NaN/Inf; training must halt loudly."""


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def adamw_init(params: dict, weight_decay: float = 0.0, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> AdamWState:
    state = AdamWState(beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float) -> None:
    """One AdamW step with bias correction and decoupled weight decay.

    Updates `params[...].data` and `state` in place; iteration order is the
    sorted parameter name order, fixed for determinism.
    """
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in parameter {name!r}")
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= (lr * (m_hat / (np.sqrt(v_hat) + state.eps))).astype(p.data.dtype)
        if state.weight_decay:
            p.data -= (lr * state.weight_decay) * p.data


@dataclass(frozen=True)
class WsdSchedule:
    peak_lr: float
    total_steps: int
    warmup_steps: int = 1000
    decay_fraction: float = 0.10

    def __post_init__(self):
        if self.warmup_steps < 0 or self.total_steps <= 0:
            raise ValueError("invalid schedule bounds")


def wsd_lr(schedule: WsdSchedule, step: int) -> float:
    """Linear warmup from 0, constant peak, linear decay to 0 at the end."""
    decay_steps = int(round(schedule.decay_fraction * schedule.total_steps))
    decay_start = schedule.total_steps - decay_steps
    if step <= 0:
        return 0.0
    if step >= schedule.total_steps:
        return 0.0
    if step < schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    if step <= decay_start or decay_steps == 0:
        return schedule.peak_lr
    return schedule.peak_lr * (schedule.total_steps - step) / decay_steps
