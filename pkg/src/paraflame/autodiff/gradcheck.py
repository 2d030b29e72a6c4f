"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad

__all__ = ["numerical_gradient", "gradient_check"]


def numerical_gradient(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. every real component of ``t``.

    Complex entries are perturbed along the real and imaginary axes separately
    and reassembled in the real-pair convention.
    """
    flat = t.data.reshape(-1)
    out = np.zeros_like(flat)
    directions = (1.0, 1j) if t.is_complex else (1.0,)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            for d in directions:
                flat[i] = orig + h * d
                fp = fn().item()
                flat[i] = orig - h * d
                fm = fn().item()
                flat[i] = orig
                out[i] += d * (fp - fm) / (2.0 * h)
    return out.reshape(t.shape)


def gradient_check(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative disagreement between reverse-mode and finite-difference gradients.

    ``fn`` rebuilds the graph from the current values of ``params`` and returns
    a real scalar. For each parameter the error is
    ``max|analytic - fd| / max(max|analytic|, max|fd|, 1e-12)``; the worst
    parameter is returned.
    """
    loss = fn()
    grads = backward(loss, params)
    worst = 0.0
    for p in params:
        analytic = np.array(grads[p], copy=True)
        fd = numerical_gradient(fn, p, h)
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-12)
        worst = max(worst, float(np.abs(analytic - fd).max(initial=0.0) / scale))
    return worst
