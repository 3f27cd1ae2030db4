from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, precision


def grad_check(
    f: Callable[..., Tensor],
    point: Sequence[np.ndarray] | np.ndarray,
    eps: float = 1e-4,
) -> float:
    """Compare autodiff gradients of ``f`` against central finite differences.

    ``f`` receives one :class:`Tensor` per array in ``point`` and must return a
    scalar tensor.  Everything runs in float64.  Returns the maximum over all
    coordinates of ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if isinstance(point, np.ndarray):
        point = [point]
    arrays = [np.array(p, dtype=np.float64, order="C") for p in point]
    with precision(np.float64):
        inputs = [Tensor(a, requires_grad=True) for a in arrays]
        out = f(*inputs)
        if out.data.size != 1 or not np.all(np.isfinite(out.data)):
            raise FloatingPointError("grad_check needs a finite scalar output")
        out.backward()
        analytic = [
            t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs
        ]

        def evaluate() -> float:
            val = f(*[Tensor(a) for a in arrays]).data
            if not np.all(np.isfinite(val)):
                raise FloatingPointError("non-finite output during finite differences")
            return float(val)

        worst = 0.0
        for a, ga in zip(arrays, analytic):
            flat = a.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = evaluate()
                flat[i] = orig - eps
                down = evaluate()
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                denom = max(abs(numeric), abs(gflat[i]), 1e-8)
                worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst
