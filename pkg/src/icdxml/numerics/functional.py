"""Differentiable activation, normalization and loss functions."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .tensor import Tensor

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    return Tensor._make(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _stable_sigmoid(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the erf form of the normal CDF."""
    x = _as_tensor(x)
    a = x.data
    cdf = 0.5 * (1.0 + erf(a / _SQRT2))
    out = (a * cdf).astype(a.dtype)

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a * a)
        return ((g * (cdf + a * pdf)).astype(a.dtype),)

    return Tensor._make(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    return _as_tensor(x).tanh()


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis`` with max subtraction.

    ``mask`` is a boolean array broadcastable to ``x``; False entries are set
    to -inf before normalising and therefore receive exactly zero weight.  At
    least one entry per slice must be unmasked.
    """
    x = _as_tensor(x)
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = x @ weight
    return out + bias if bias is not None else out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Standardise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    a = x.data
    d = a.shape[-1]
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv / d * (
            d * gx_hat
            - gx_hat.sum(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(a.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._make(out.astype(a.dtype), (x, gamma, beta), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy computed directly from logits."""
    logits = _as_tensor(logits)
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape} vs targets {t.shape}")
    z = logits.data
    n = z.size
    loss = (np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))).sum() / n

    def backward(g):
        return (g * (_stable_sigmoid(z) - t) / n,)

    return Tensor._make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def masked_cross_entropy(logits: Tensor, target_ids, position_mask=None) -> Tensor:
    """Mean token cross-entropy over rows where ``position_mask`` is set.

    ``logits`` is ``[N, V]``; ``target_ids`` is ``[N]``.
    """
    logits = _as_tensor(logits)
    z = logits.data
    targets = np.asarray(target_ids, dtype=np.int64)
    if position_mask is None:
        sel = np.ones(len(targets), dtype=bool)
    else:
        sel = np.asarray(position_mask, dtype=bool)
    count = int(sel.sum())
    if count == 0:
        raise ValueError("no MLM targets")
    shifted = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(len(targets))
    per_row = lse - shifted[rows, targets]
    loss = per_row[sel].sum() / count

    def backward(g):
        soft = np.exp(shifted - lse[:, None])
        soft[rows, targets] -= 1.0
        soft *= sel[:, None] / count
        return ((g * soft).astype(z.dtype),)

    return Tensor._make(np.asarray(loss, dtype=z.dtype), (logits,), backward)
