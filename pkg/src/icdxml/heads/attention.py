"""CLS and label-wise attention output layers, plus semantic label initialisation."""

from __future__ import annotations

import logging

import numpy as np

from .. import numerics as nx
from ..cohort import LabelSpace
from ..corpus import NUM_SPECIAL, Vocab, collate, encode, make_chunk, normalize_text
from ..encoder import EncoderParams, encoder_forward, truncated_normal
from ..numerics import Tensor

log = logging.getLogger(__name__)


def _uniform(rng, shape, dtype) -> np.ndarray:
    fan_in, fan_out = shape[-1], shape[0]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_cls_head(num_labels: int, hidden: int, seed: int = 0, dtype=None) -> dict[str, Tensor]:
    dtype = dtype or nx.default_dtype()
    rng = np.random.default_rng(seed)
    return {"cls.weight": nx.parameter(_uniform(rng, (num_labels, hidden), dtype), "cls.weight")}


def cls_head_logits(h_cls: Tensor, head: dict[str, Tensor]) -> Tensor:
    w = head["cls.weight"]
    if h_cls.shape[-1] != w.shape[1]:
        raise ValueError(f"hidden size {h_cls.shape[-1]} does not match W_out {w.shape}")
    return h_cls @ w.T


def cls_head_forward(h_cls, head: dict[str, Tensor]) -> np.ndarray:
    """Label probabilities ``sigmoid(W_out h_cls)``."""
    h = h_cls if isinstance(h_cls, Tensor) else Tensor(h_cls)
    return nx.sigmoid(cls_head_logits(h, head)).data


def init_xml_head(
    num_labels: int,
    hidden: int,
    attn_hidden: int | None = None,
    seed: int = 0,
    label_embeddings: np.ndarray | None = None,
    dtype=None,
) -> dict[str, Tensor]:
    """Label vectors ``[M, d]``, shared ``W_b [d_a, d]`` and ``W_a [1, d_a]``."""
    dtype = dtype or nx.default_dtype()
    d_a = attn_hidden or hidden
    rng = np.random.default_rng(seed)
    if label_embeddings is None:
        labels = truncated_normal(rng, (num_labels, hidden), 0.02, dtype)
    else:
        labels = np.asarray(label_embeddings, dtype=dtype)
        if labels.shape != (num_labels, hidden):
            raise ValueError(f"label embeddings must be {(num_labels, hidden)}, got {labels.shape}")
    return {
        "xml.labels": nx.parameter(labels.copy(), "xml.labels"),
        "xml.wb": nx.parameter(_uniform(rng, (d_a, hidden), dtype), "xml.wb"),
        "xml.wa": nx.parameter(_uniform(rng, (1, d_a), dtype), "xml.wa"),
    }


def xml_head_logits(hidden: Tensor, mask, head: dict[str, Tensor]) -> tuple[Tensor, np.ndarray]:
    """Label-wise attention logits.

    ``hidden`` is ``[B, N, d]`` (or ``[N, d]``), ``mask`` marks the positions
    that may be attended.  Returns logits ``[B, M]`` and attention ``[B, M, N]``.
    """
    single = hidden.ndim == 2
    if single:
        hidden = hidden.reshape(1, *hidden.shape)
        mask = np.asarray(mask)[None]
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("all positions masked")
    labels, wb, wa = head["xml.labels"], head["xml.wb"], head["xml.wa"]
    scores = hidden @ labels.T  # [B, N, M]
    attn = nx.softmax(scores.swapaxes(1, 2), axis=-1, mask=mask[:, None, :])  # [B, M, N]
    context = attn @ hidden  # [B, M, d]
    z = nx.relu(context @ wb.T)  # [B, M, d_a]
    logits = (z @ wa.T).reshape(hidden.shape[0], labels.shape[0])
    if single:
        return logits.reshape(-1), attn.data[0]
    return logits, attn.data


def xml_head_forward(hidden, mask, head: dict[str, Tensor]) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities ``[M]`` and attention ``[M, N]`` for one sequence of states."""
    h = hidden if isinstance(hidden, Tensor) else Tensor(hidden)
    logits, attn = xml_head_logits(h, mask, head)
    return nx.sigmoid(logits).data, attn


def description_states(
    descriptions: list[str],
    params: EncoderParams,
    vocab: Vocab,
    contextual: bool = True,
    batch_size: int = 64,
) -> list[np.ndarray | None]:
    """Mean encoder state over the content tokens of each description.

    Returns ``None`` for descriptions with no in-vocabulary content token.
    With ``contextual=False`` the raw token-embedding rows are averaged instead.
    """
    max_len = params.config.max_len
    encoded = []
    for text in descriptions:
        ids = encode(normalize_text(text), vocab).token_ids[: max_len - 2]
        encoded.append(ids)
    out: list[np.ndarray | None] = [None] * len(descriptions)
    todo = [i for i, ids in enumerate(encoded) if any(t >= NUM_SPECIAL for t in ids)]
    if not contextual:
        table = params["emb.token"].data
        for i in todo:
            ids = np.array([t for t in encoded[i] if t >= NUM_SPECIAL])
            out[i] = table[ids].mean(axis=0)
        return out
    with nx.no_grad():
        for s in range(0, len(todo), batch_size):
            idx = todo[s : s + batch_size]
            chunks = [make_chunk(encoded[i], max_len) for i in idx]
            ids, mask, seg = collate(chunks)
            hidden = encoder_forward(params, (ids, mask, seg)).hidden.data
            for row, i in enumerate(idx):
                content = np.array(encoded[i])
                pos = 1 + np.flatnonzero(content >= NUM_SPECIAL)
                out[i] = hidden[row, pos].mean(axis=0)
    return out


def semantic_label_init(
    space: LabelSpace,
    params: EncoderParams,
    vocab: Vocab,
    contextual: bool = True,
    seed: int = 0,
) -> np.ndarray:
    """Initial label vectors from the encoded plain-text code descriptions.

    Codes whose description has no usable token fall back to a random draw
    from the encoder's init distribution (and are logged).
    """
    cfg = params.config
    states = description_states(
        [space.description(c) for c in space.codes], params, vocab, contextual
    )
    rng = np.random.default_rng(seed)
    dtype = params["emb.token"].dtype
    out = np.empty((len(space), cfg.hidden_size), dtype=dtype)
    fallback = []
    for j, st in enumerate(states):
        if st is None:
            fallback.append(space.codes[j])
            out[j] = truncated_normal(rng, (cfg.hidden_size,), cfg.initializer_range, dtype)
        else:
            out[j] = st
    if fallback:
        log.warning("random label init for %d codes without usable descriptions: %s",
                    len(fallback), ", ".join(fallback[:10]))
    return out
