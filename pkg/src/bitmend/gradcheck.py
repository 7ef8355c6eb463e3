"""Central finite-difference verification of analytic gradients.

Checks run in 64-bit: single-precision arithmetic makes finite differences
unreliable at the tolerances used here.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, zero_grads


def finite_difference_check(fn, inputs: list[Tensor], eps: float = 1e-4, max_elems: int = 0):
    """Max relative error between backprop and central differences.

    `fn` maps the inputs to a scalar Tensor. Every input must be float64 and
    marked requires_grad. If `max_elems` > 0, only that many elements per
    input are probed (deterministic stride subsample) to bound runtime.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("gradient checking requires float64 tensors")
        if not t.requires_grad:
            raise ValueError("inputs must have requires_grad=True")

    zero_grads(inputs)
    loss = fn(*inputs)
    loss.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_elems and n > max_elems:
            idxs = np.linspace(0, n - 1, max_elems).astype(int)
        else:
            idxs = range(n)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn(*inputs).data)
            flat[i] = orig - eps
            fm = float(fn(*inputs).data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            a = ana.reshape(-1)[i]
            denom = max(abs(a) + abs(numeric), 1e-3)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
