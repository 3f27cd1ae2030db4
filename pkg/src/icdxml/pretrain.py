"""Masked-LM + next-sentence pretraining of the encoder."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .corpus import (
    CLS,
    MASK,
    NUM_SPECIAL,
    PAD,
    SEP,
    Chunk,
    Note,
    Vocab,
    collate,
    encode,
    make_chunk,
    normalize_text,
    sentence_split,
)
from .encoder import EncoderConfig, EncoderParams, encoder_forward, init_encoder, mlm_logits, nsp_logit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskingPolicy:
    select_prob: float = 0.15
    mask_frac: float = 0.8
    random_frac: float = 0.1
    keep_frac: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.select_prob <= 1.0:
            raise ValueError("select_prob must be in (0, 1]")
        fracs = (self.mask_frac, self.random_frac, self.keep_frac)
        if min(fracs) < 0 or abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError("mask/random/keep fractions must be non-negative and sum to 1")


@dataclass
class MaskedChunk:
    chunk: Chunk
    target_ids: np.ndarray
    target_positions: np.ndarray


def mask_tokens(
    chunk: Chunk,
    policy: MaskingPolicy,
    vocab_size: int,
    rng: np.random.Generator,
    max_tries: int = 1000,
) -> MaskedChunk:
    """Select content tokens for prediction and corrupt them.

    Special tokens (including UNK) and padding are never selected.  Selection
    is redrawn until at least one token is chosen.
    """
    candidates = np.flatnonzero((chunk.mask == 1) & (chunk.ids >= NUM_SPECIAL))
    if candidates.size == 0:
        raise ValueError("chunk has no content tokens to mask")
    for _ in range(max_tries):
        picked = candidates[rng.random(candidates.size) < policy.select_prob]
        if picked.size:
            break
    else:
        picked = candidates[[rng.integers(candidates.size)]]
    ids = chunk.ids.copy()
    targets = ids[picked].copy()
    roll = rng.random(picked.size)
    to_mask = roll < policy.mask_frac
    to_random = (roll >= policy.mask_frac) & (roll < policy.mask_frac + policy.random_frac)
    ids[picked[to_mask]] = MASK
    ids[picked[to_random]] = rng.integers(NUM_SPECIAL, vocab_size, size=int(to_random.sum()))
    masked = Chunk(ids, chunk.mask.copy(), chunk.segments.copy(), chunk.origin)
    return MaskedChunk(masked, targets, picked)


@dataclass
class NspPair:
    chunk: Chunk
    is_next: bool
    a_origin: tuple[str, int]
    b_origin: tuple[str, int]
    consumed: int = 1


def pair_chunk(a: Sequence[int], b: Sequence[int], max_len: int, origin=("", 0)) -> Chunk:
    """``[CLS] a [SEP] b [SEP]`` with segment ids 0 then 1, padded to ``max_len``."""
    a, b = list(a), list(b)
    budget = max_len - 3
    while len(a) + len(b) > budget:
        if len(a) >= len(b):
            a.pop()
        else:
            b.pop()
    if not a or not b:
        raise ValueError("both segments must be non-empty")
    ids = np.full(max_len, PAD, dtype=np.int64)
    seq = [CLS, *a, SEP, *b, SEP]
    ids[: len(seq)] = seq
    mask = np.zeros(max_len, dtype=np.int64)
    mask[: len(seq)] = 1
    seg = np.zeros(max_len, dtype=np.int64)
    seg[len(a) + 2 : len(seq)] = 1
    return Chunk(ids, mask, seg, origin)


class DocumentPool:
    """Documents as ``(doc_id, sentences)`` with sampling of a different document."""

    def __init__(self, docs: Sequence[tuple[str, list[list[int]]]]):
        self.docs = [(d, [list(s) for s in sents if s]) for d, sents in docs]
        self.docs = [(d, s) for d, s in self.docs if s]

    def __len__(self) -> int:
        return len(self.docs)

    def sample_other(self, rng: np.random.Generator, exclude: str) -> tuple[str, list[list[int]]]:
        if len(self.docs) < 2:
            raise ValueError("negative next-sentence sampling needs at least two documents")
        while True:
            doc_id, sents = self.docs[int(rng.integers(len(self.docs)))]
            if doc_id != exclude:
                return doc_id, sents


def make_nsp_pair(
    doc_id: str,
    doc_sentences: list[list[int]],
    pool: DocumentPool,
    rng: np.random.Generator,
    max_len: int,
    start: int = 0,
    force_next: bool | None = None,
) -> NspPair:
    """Build one next-sentence example from ``doc_sentences[start:]``.

    Consecutive sentences are packed up to the length budget and split at a
    random sentence boundary into A and B.  With probability 0.5 (or as
    forced) B is replaced by a span from another document; the returned
    ``consumed`` count then covers only A's sentences.
    """
    sents = doc_sentences[start:]
    if len(sents) < 2:
        raise ValueError("document needs at least two sentences")
    budget = max_len - 3
    take, used = 0, 0
    while take < len(sents) and (used < budget or take < 2):
        used += len(sents[take])
        take += 1
    take = max(take, 2)
    split = int(rng.integers(1, take))
    a = [t for s in sents[:split] for t in s]
    is_next = bool(rng.random() < 0.5) if force_next is None else force_next
    if is_next:
        b = [t for s in sents[split:take] for t in s]
        b_origin, consumed = (doc_id, start + split), take
    else:
        other_id, other = pool.sample_other(rng, doc_id)
        j = int(rng.integers(len(other)))
        b = [t for s in other[j:] for t in s][: max(1, budget - len(a))]
        b_origin, consumed = (other_id, j), split
    chunk = pair_chunk(a, b, max_len, (doc_id, start))
    return NspPair(chunk, is_next, (doc_id, start), b_origin, consumed)


def document_instances(
    pool: DocumentPool, rng: np.random.Generator, max_len: int
) -> list[NspPair]:
    """Walk every document once, emitting pairs that cover its sentences."""
    out = []
    for doc_id, sents in pool.docs:
        i = 0
        while len(sents) - i >= 2:
            pair = make_nsp_pair(doc_id, sents, pool, rng, max_len, start=i)
            out.append(pair)
            i += pair.consumed
    return out


def documents_from_notes(notes: Sequence[Note], vocab: Vocab) -> list[tuple[str, list[list[int]]]]:
    docs = []
    for note in notes:
        tokens = normalize_text(note.text)
        ids = encode(tokens, vocab).token_ids
        sentences, pos = [], 0
        for sent in sentence_split(tokens):
            sentences.append(ids[pos : pos + len(sent)])
            pos += len(sent)
        docs.append((note.note_id, sentences))
    return docs


@dataclass
class PretrainHParams:
    epochs: int = 2
    batch_size: int = 32
    peak_lr: float = 1e-3
    warmup_proportion: float = 0.1
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_grad_norm: float = 1.0
    log_every: int = 20
    policy: MaskingPolicy = field(default_factory=MaskingPolicy)
    nsp: bool = True


@dataclass
class PretrainResult:
    params: EncoderParams
    curve: list[dict]
    best_step: int
    initial_dev_mlm: float


def _batches(items: list, batch_size: int) -> list[list]:
    return [items[i : i + batch_size] for i in range(0, len(items), batch_size)]


def pretrain_loss(
    params: EncoderParams,
    pairs: Sequence[NspPair],
    policy: MaskingPolicy,
    rng: np.random.Generator,
    train: bool,
    use_nsp: bool = True,
) -> tuple[nx.Tensor, nx.Tensor, int]:
    """MLM loss, NSP loss and MLM target count for one batch of pairs."""
    vocab_size = params.config.vocab_size
    masked = [mask_tokens(p.chunk, policy, vocab_size, rng) for p in pairs]
    ids, mask, seg = collate([m.chunk for m in masked])
    out = encoder_forward(params, (ids, mask, seg), train=train, rng=rng)
    n = ids.shape[1]
    d = params.config.hidden_size
    flat_pos = np.concatenate([b * n + m.target_positions for b, m in enumerate(masked)])
    targets = np.concatenate([m.target_ids for m in masked])
    rows = out.hidden.reshape(-1, d)[flat_pos]
    mlm = nx.masked_cross_entropy(mlm_logits(params, rows), targets)
    if use_nsp:
        labels = np.array([p.is_next for p in pairs], dtype=out.hidden.dtype)
        nsp = nx.bce_with_logits(nsp_logit(params, out.hidden[:, 0, :]), labels)
    else:
        nsp = nx.Tensor(np.zeros((), dtype=out.hidden.dtype))
    return mlm, nsp, len(targets)


def evaluate_pretrain(
    params: EncoderParams,
    pairs: Sequence[NspPair],
    policy: MaskingPolicy,
    batch_size: int,
    seed: int,
    use_nsp: bool = True,
) -> tuple[float, float]:
    """Target-weighted dev MLM loss and mean NSP loss under a fixed masking seed."""
    rng = np.random.default_rng(seed)
    mlm_sum = nsp_sum = 0.0
    n_targets = n_pairs = 0
    with nx.no_grad():
        for batch in _batches(list(pairs), batch_size):
            brng = np.random.default_rng(rng.integers(2**63))
            mlm, nsp, k = pretrain_loss(params, batch, policy, brng, False, use_nsp)
            mlm_sum += float(mlm.data) * k
            nsp_sum += float(nsp.data) * len(batch)
            n_targets += k
            n_pairs += len(batch)
    return mlm_sum / max(n_targets, 1), nsp_sum / max(n_pairs, 1)


def pretrain(
    train_docs: Sequence[tuple[str, list[list[int]]]],
    dev_docs: Sequence[tuple[str, list[list[int]]]],
    config: EncoderConfig,
    hparams: PretrainHParams | None = None,
    seed: int = 0,
    init: EncoderParams | None = None,
) -> PretrainResult:
    """Train encoder + MLM/NSP heads; keep the parameters with the lowest dev loss."""
    hp = hparams or PretrainHParams()
    ss = np.random.SeedSequence(seed)
    init_seed, data_seed, dev_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    params = init.copy() if init is not None else init_encoder(config, init_seed)
    train_pool, dev_pool = DocumentPool(train_docs), DocumentPool(dev_docs)
    if not len(train_pool):
        raise ValueError("empty pretraining corpus")
    data_rng = np.random.default_rng(data_seed)
    dev_pairs = document_instances(dev_pool, np.random.default_rng(dev_seed), config.max_len)

    epoch_pairs = [document_instances(train_pool, data_rng, config.max_len) for _ in range(hp.epochs)]
    steps_per_epoch = [math.ceil(len(p) / hp.batch_size) for p in epoch_pairs]
    total = sum(steps_per_epoch)
    schedule = nx.Schedule(hp.peak_lr, total, hp.warmup_proportion)
    state = nx.OptimizerState(hp.betas, hp.adam_eps, hp.weight_decay)

    def dev_losses() -> tuple[float, float]:
        if not dev_pairs:
            return float("nan"), float("nan")
        return evaluate_pretrain(params, dev_pairs, hp.policy, hp.batch_size, dev_seed, hp.nsp)

    curve: list[dict] = []
    d_mlm, d_nsp = dev_losses()
    curve.append(dict(step=0, lr=0.0, mlm_loss=float("nan"), nsp_loss=float("nan"),
                      dev_mlm_loss=d_mlm, dev_nsp_loss=d_nsp))
    best = (d_mlm + (d_nsp if hp.nsp else 0.0), 0)
    best_weights = {k: v.data.copy() for k, v in params.items()}
    initial_dev_mlm = d_mlm

    step = 0
    run_mlm, run_nsp, run_n = 0.0, 0.0, 0
    for epoch, pairs in enumerate(epoch_pairs):
        order = data_rng.permutation(len(pairs))
        for batch_idx in _batches(list(order), hp.batch_size):
            batch = [pairs[i] for i in batch_idx]
            nx.zero_grads(params.weights)
            mlm, nsp, _ = pretrain_loss(params, batch, hp.policy, data_rng, True, hp.nsp)
            loss = mlm + nsp
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"non-finite pretraining loss at step {step} (mlm={mlm.data}, nsp={nsp.data})"
                )
            loss.backward()
            grads = nx.collect_grads(params.weights)
            nx.clip_grads(grads, hp.max_grad_norm)
            step += 1
            lr = nx.lr_at(step, schedule)
            nx.adamw_step(params.weights, grads, state, lr)
            run_mlm += float(mlm.data)
            run_nsp += float(nsp.data)
            run_n += 1
            if step % hp.log_every == 0 or step == total:
                d_mlm, d_nsp = dev_losses()
                curve.append(dict(step=step, lr=lr, mlm_loss=run_mlm / run_n,
                                  nsp_loss=run_nsp / run_n, dev_mlm_loss=d_mlm,
                                  dev_nsp_loss=d_nsp))
                log.info("pretrain step %d/%d mlm %.4f dev_mlm %.4f", step, total,
                         run_mlm / run_n, d_mlm)
                run_mlm, run_nsp, run_n = 0.0, 0.0, 0
                dev_total = d_mlm + (d_nsp if hp.nsp else 0.0)
                if dev_total < best[0]:
                    best = (dev_total, step)
                    best_weights = {k: v.data.copy() for k, v in params.items()}
    for k, v in params.items():
        v.data = best_weights[k]
    return PretrainResult(params, curve, best[1], initial_dev_mlm)


def write_loss_curve(curve: list[dict], path: str | Path) -> None:
    cols = ["step", "lr", "mlm_loss", "nsp_loss", "dev_mlm_loss", "dev_nsp_loss"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in curve:
            w.writerow({c: repr(float(row[c])) if c != "step" else row[c] for c in cols})


def mlm_infill(
    text: str,
    params: EncoderParams,
    vocab: Vocab,
    positions_to_mask: Sequence[int],
) -> list[tuple[int, str]]:
    """Mask the given content positions of ``text`` and return argmax predictions.

    Positions index the normalized token list.  Special tokens are never
    predicted.
    """
    tokens = normalize_text(text)
    ids = encode(tokens, vocab).token_ids[: params.config.max_len - 2]
    positions = list(positions_to_mask)
    for p in positions:
        if not 0 <= p < len(ids):
            raise ValueError(f"position {p} outside the {len(ids)} encoded tokens")
    if not positions:
        return []
    chunk = make_chunk(ids, params.config.max_len)
    chunk.ids[[p + 1 for p in positions]] = MASK
    with nx.no_grad():
        hidden = encoder_forward(params, chunk).hidden
        logits = mlm_logits(params, hidden[np.array(positions) + 1]).data.copy()
    logits[:, :NUM_SPECIAL] = -np.inf
    best = logits.argmax(axis=-1)
    return [(p, vocab.tokens[int(i)]) for p, i in zip(positions, best)]
