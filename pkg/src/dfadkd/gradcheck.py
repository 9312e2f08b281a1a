"""Central finite-difference checks for graph gradients (float64)."""
from __future__ import annotations

import numpy as np

from dfadkd import autodiff as ad


def project(out: ad.Node, rng: np.random.Generator) -> ad.Node:
    """Reduce any node to a scalar through a fixed random weighting."""
    if out.value.size == 1:
        return ad.sum(out)
    r = rng.standard_normal(out.shape)
    return ad.sum(ad.mul(out, r))


def analytic(fn, inputs: dict) -> tuple[float, dict]:
    g = ad.Graph(np.float64)
    nodes = {k: g.param(k, v) for k, v in inputs.items()}
    loss = fn(nodes)
    return float(loss.value), g.backward(loss)


def numeric(fn, inputs: dict, eps: float = 1e-6) -> dict:
    """Central differences of ``fn`` (nodes -> scalar node) in every input entry."""

    def value(arrays):
        g = ad.Graph(np.float64)
        return float(fn({k: g.param(k, v) for k, v in arrays.items()}).value)

    out = {}
    for name, arr in inputs.items():
        arr = np.array(arr, dtype=np.float64)
        grad = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = value({**inputs, name: arr})
            arr[idx] = orig - eps
            down = value({**inputs, name: arr})
            arr[idx] = orig
            grad[idx] = (up - down) / (2 * eps)
        out[name] = grad
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``; 0 when both vanish."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def max_relative_error(fn, inputs: dict, eps: float = 1e-6, reference=None) -> float:
    """Worst relative error over the inputs.

    ``reference`` (same signature as ``fn``) is differenced numerically in
    place of ``fn``; used where ``fn`` has a surrogate gradient.
    """
    _, grads = analytic(fn, inputs)
    fd = numeric(reference or fn, inputs, eps)
    return max(relative_error(grads[k], fd[k]) for k in inputs)
