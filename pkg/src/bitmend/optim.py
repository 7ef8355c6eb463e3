"""Adam and RMSProp with the cosine learning-rate schedule used for training."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tensor


@dataclass
class OptimizerState:
    kind: str  # "adam" or "rmsprop"
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_state(lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> OptimizerState:
    return OptimizerState(kind="adam", lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def rmsprop_state(lr=1e-5, decay=0.99, eps=1e-8) -> OptimizerState:
    return OptimizerState(kind="rmsprop", lr=lr, decay=decay, eps=eps)


def optimizer_step(state: OptimizerState, params: dict[str, Tensor], grads: dict[str, np.ndarray]):
    """Apply one update in place; accumulators are keyed by parameter name."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter '{name}' {p.data.shape}"
            )
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name].astype(p.data.dtype, copy=False)
        if state.kind == "adam":
            m = state.m.get(name)
            v = state.v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * g * g
            state.m[name] = m
            state.v[name] = v
            mhat = m / (1.0 - state.beta1**t)
            vhat = v / (1.0 - state.beta2**t)
            p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
        elif state.kind == "rmsprop":
            v = state.v.get(name)
            if v is None:
                v = np.zeros_like(p.data)
            v = state.decay * v + (1.0 - state.decay) * g * g
            state.v[name] = v
            p.data = p.data - state.lr * g / (np.sqrt(v) + state.eps)
        else:
            raise ValueError(f"unknown optimizer kind {state.kind!r}")


def cosine_anneal(lr0: float, epoch: int, start: int, end: int) -> float:
    """Constant lr0 before `start`, cosine decay to zero at `end`."""
    if start > end:
        raise ValueError(f"anneal start {start} > end {end}")
    if epoch < start:
        return lr0
    if epoch >= end:
        return 0.0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * (epoch - start) / (end - start)))
