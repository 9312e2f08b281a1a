"""Adam, Nesterov SGD and the cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0 or step < 0:
        raise ValueError(f"invalid schedule position {step}/{total_steps}")
    if step > total_steps:
        raise ValueError(f"step {step} exceeds total_steps {total_steps}")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def _check_grads(params, grads):
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {value.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")


@dataclass
class OptimizerState:
    kind: str
    momentum: float
    eps: float = 1e-8
    beta2: float = 0.999
    step: int = 0
    slots: dict = field(default_factory=dict)


def adam(beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState("adam", beta1, eps, beta2)


def nesterov(momentum: float = 0.9) -> OptimizerState:
    return OptimizerState("nesterov-sgd", momentum)


def adam_step(state: OptimizerState, params: dict, grads: dict, lr: float) -> dict:
    """Bias-corrected Adam update of ``params`` (in place); returns ``params``."""
    _check_grads(params, grads)
    state.step += 1
    b1, b2 = state.momentum, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, value in params.items():
        g = grads[name]
        m, v = state.slots.get(name, (np.zeros_like(value), np.zeros_like(value)))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.slots[name] = (m, v)
        value -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(value.dtype)
    return params


def nesterov_step(state: OptimizerState, params: dict, grads: dict, lr: float) -> dict:
    """v <- mu v - lr g;  p <- p + mu v - lr g  (in place); returns ``params``."""
    _check_grads(params, grads)
    state.step += 1
    mu = state.momentum
    for name, value in params.items():
        g = grads[name]
        v = mu * state.slots.get(name, np.zeros_like(value)) - lr * g
        state.slots[name] = v
        value += (mu * v - lr * g).astype(value.dtype)
    return params


def step(state: OptimizerState, params: dict, grads: dict, lr: float) -> dict:
    if state.kind == "adam":
        return adam_step(state, params, grads, lr)
    return nesterov_step(state, params, grads, lr)
