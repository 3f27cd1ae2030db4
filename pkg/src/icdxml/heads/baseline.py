"""Bidirectional-GRU encoder with multi-head attention pooling (non-transformer baseline)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..numerics import Tensor


@dataclass(frozen=True)
class MultiHeadConfig:
    vocab_size: int
    num_labels: int
    embed_dim: int = 300
    gru_hidden: int = 512
    num_heads: int = 200
    embed_dropout: float = 0.1
    # True: divide context vectors by sqrt(d_h); False: divide attention logits instead
    scale_context: bool = True


def init_multihead(cfg: MultiHeadConfig, seed: int = 0, dtype=None) -> dict[str, Tensor]:
    dtype = dtype or nx.default_dtype()
    rng = np.random.default_rng(seed)
    h, e = cfg.gru_hidden, cfg.embed_dim
    bound = 1.0 / np.sqrt(h)

    def u(shape, b):
        return rng.uniform(-b, b, size=shape).astype(dtype)

    weights = {"mh.embedding": rng.normal(0.0, 0.1, size=(cfg.vocab_size, e)).astype(dtype)}
    for direction in ("fwd", "bwd"):
        p = f"mh.gru_{direction}."
        weights[p + "w_x"] = u((e, 3 * h), bound)
        weights[p + "w_h"] = u((h, 3 * h), bound)
        weights[p + "b_x.bias"] = u((3 * h,), bound)
        weights[p + "b_h.bias"] = u((3 * h,), bound)
    weights["mh.queries"] = u((cfg.num_heads, 2 * h), 1.0 / np.sqrt(2 * h))
    fan = cfg.num_heads * 2 * h
    weights["mh.wa"] = u((cfg.num_labels, fan), np.sqrt(6.0 / (fan + cfg.num_labels)))
    return {k: nx.parameter(v, k) for k, v in weights.items()}


def _gru_direction(x_steps, mask, params, prefix, hidden, reverse):
    b = mask.shape[0]
    dtype = x_steps[0].dtype
    h = Tensor(np.zeros((b, hidden), dtype=dtype))
    w_x, w_h = params[prefix + "w_x"], params[prefix + "w_h"]
    b_x, b_h = params[prefix + "b_x.bias"], params[prefix + "b_h.bias"]
    order = range(len(x_steps) - 1, -1, -1) if reverse else range(len(x_steps))
    outputs = [None] * len(x_steps)
    for t in order:
        gx = x_steps[t] @ w_x + b_x
        gh = h @ w_h + b_h
        r = nx.sigmoid(gx[:, :hidden] + gh[:, :hidden])
        z = nx.sigmoid(gx[:, hidden : 2 * hidden] + gh[:, hidden : 2 * hidden])
        n = nx.tanh(gx[:, 2 * hidden :] + r * gh[:, 2 * hidden :])
        h_new = (1.0 - z) * n + z * h
        m = mask[:, t : t + 1].astype(dtype)
        # padded steps carry the previous state through unchanged
        h = h_new * m + h * (1.0 - m)
        outputs[t] = h
    return outputs


def bigru_states(ids, mask, params, cfg: MultiHeadConfig, train=False, rng=None) -> Tensor:
    """Concatenated forward/backward GRU states ``[B, N, 2 d_h]``."""
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    steps = []
    for t in range(ids.shape[1]):
        x = nx.embedding(params["mh.embedding"], ids[:, t])
        steps.append(nx.dropout(x, cfg.embed_dropout, rng, train))
    fwd = _gru_direction(steps, mask, params, "mh.gru_fwd.", cfg.gru_hidden, False)
    bwd = _gru_direction(steps, mask, params, "mh.gru_bwd.", cfg.gru_hidden, True)
    return nx.stack([nx.concat([f, b], axis=-1) for f, b in zip(fwd, bwd)], axis=1)


def multihead_pool_logits(
    states: Tensor, mask, params, cfg: MultiHeadConfig
) -> tuple[Tensor, np.ndarray]:
    """Query attention over states, concatenated contexts, linear output.

    Returns logits ``[B, M]`` and attention ``[B, K, N]``.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("empty sequence")
    q = params["mh.queries"]
    scale = 1.0 / np.sqrt(cfg.gru_hidden)
    scores = (states @ q.T).swapaxes(1, 2)  # [B, K, N]
    if not cfg.scale_context:
        scores = scores * scale
    attn = nx.softmax(scores, axis=-1, mask=mask[:, None, :])
    context = attn @ states  # [B, K, 2 d_h]
    if cfg.scale_context:
        context = context * scale
    flat = context.reshape(states.shape[0], -1)
    return flat @ params["mh.wa"].T, attn.data


def multihead_logits(ids, mask, params, cfg: MultiHeadConfig, train=False, rng=None):
    ids = np.atleast_2d(ids)
    mask = np.atleast_2d(mask)
    if ids.shape[1] == 0:
        raise ValueError("empty sequence")
    states = bigru_states(ids, mask, params, cfg, train, rng)
    return multihead_pool_logits(states, mask, params, cfg)


def multihead_baseline_forward(ids, params, cfg: MultiHeadConfig, mask=None) -> np.ndarray:
    """Label probabilities ``[M]`` for a single token-id sequence."""
    ids = np.asarray(ids)
    if ids.size == 0:
        raise ValueError("empty sequence")
    mask = np.ones_like(ids) if mask is None else np.asarray(mask)
    with nx.no_grad():
        logits, _ = multihead_logits(ids[None], mask[None], params, cfg)
    return nx.sigmoid(logits).data[0]
