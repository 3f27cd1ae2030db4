"""Classifier assembly, chunked inference and the supervised training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import numerics as nx
from ..cohort import LabelSpace
from ..corpus import CLS, SEP, Chunk, TokenizedNote, chunk_note, collate
from ..encoder import EncoderParams, encoder_forward
from ..evaluation import PredictionSet, aggregate_chunks, micro_auc
from ..numerics import Tensor
from .attention import cls_head_logits, xml_head_logits
from .baseline import MultiHeadConfig, multihead_logits

log = logging.getLogger(__name__)

HEAD_KINDS = ("cls", "xml", "multihead")
# encoder tensors only used by pretraining objectives
PRETRAIN_ONLY = ("mlm.", "pool.", "nsp.")


def content_mask(ids: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Attendable token positions: unmasked and not CLS/SEP.

    Rows with no content token fall back to the plain attention mask.
    """
    content = (mask == 1) & (ids != CLS) & (ids != SEP)
    empty = ~content.any(axis=-1)
    if empty.any():
        content[empty] = mask[empty] == 1
    return content


class Classifier:
    """An encoder (or the GRU baseline) plus a multi-label output layer."""

    def __init__(
        self,
        kind: str,
        head: dict[str, Tensor],
        encoder: EncoderParams | None = None,
        max_len: int | None = None,
        multihead: MultiHeadConfig | None = None,
    ):
        if kind not in HEAD_KINDS:
            raise ValueError(f"unknown head {kind!r}; expected one of {HEAD_KINDS}")
        if kind in ("cls", "xml") and encoder is None:
            raise ValueError(f"{kind} head needs an encoder")
        if kind == "multihead" and multihead is None:
            raise ValueError("multihead head needs a MultiHeadConfig")
        self.kind = kind
        self.head = head
        self.encoder = encoder
        self.multihead = multihead
        self.max_len = max_len or (encoder.config.max_len if encoder else 128)

    @property
    def num_labels(self) -> int:
        if self.kind == "cls":
            return self.head["cls.weight"].shape[0]
        if self.kind == "xml":
            return self.head["xml.labels"].shape[0]
        return self.head["mh.wa"].shape[0]

    def trainable(self) -> dict[str, Tensor]:
        out = {}
        if self.encoder is not None:
            for name, t in self.encoder.items():
                if not name.startswith(PRETRAIN_ONLY):
                    out["encoder." + name] = t
        out.update(self.head)
        return out

    def state(self) -> dict[str, Tensor]:
        """Every tensor needed to rebuild the model, including unused pretraining heads."""
        out = {}
        if self.encoder is not None:
            out.update({"encoder." + k: v for k, v in self.encoder.items()})
        out.update(self.head)
        return out

    def logits(self, ids, mask, segments, train: bool = False, rng=None) -> tuple[Tensor, np.ndarray | None]:
        ids, mask, segments = np.asarray(ids), np.asarray(mask), np.asarray(segments)
        if self.kind == "multihead":
            return multihead_logits(ids, content_mask(ids, mask), self.head, self.multihead, train, rng)
        out = encoder_forward(self.encoder, (ids, mask, segments), train=train, rng=rng)
        if self.kind == "cls":
            return cls_head_logits(out.hidden[:, 0, :], self.head), None
        return xml_head_logits(out.hidden, content_mask(ids, mask), self.head)

    def predict_chunks(self, chunks: Sequence[Chunk], batch_size: int = 64) -> np.ndarray:
        rows = []
        with nx.no_grad():
            for s in range(0, len(chunks), batch_size):
                ids, mask, seg = collate(list(chunks[s : s + batch_size]))
                logits, _ = self.logits(ids, mask, seg)
                rows.append(nx.sigmoid(logits).data.astype(np.float64))
        if not rows:
            return np.zeros((0, self.num_labels))
        return np.concatenate(rows)

    def predict_notes(self, notes: Sequence[TokenizedNote], batch_size: int = 64) -> np.ndarray:
        """Note-level probabilities ``[n_notes, M]``: max over each note's chunks."""
        chunks, owner = [], []
        for i, note in enumerate(notes):
            for c in chunk_note(note, self.max_len):
                chunks.append(c)
                owner.append(i)
        scores = self.predict_chunks(chunks, batch_size)
        owner = np.array(owner)
        return np.stack([aggregate_chunks(scores[owner == i]) for i in range(len(notes))])


@dataclass
class LabeledSet:
    notes: list[TokenizedNote]
    labels: np.ndarray  # [n_notes, M]

    def chunks(self, max_len: int) -> tuple[list[Chunk], np.ndarray]:
        """Chunks with their parent note's full label vector."""
        out, ys = [], []
        for note, y in zip(self.notes, self.labels):
            for c in chunk_note(note, max_len):
                out.append(c)
                ys.append(y)
        return out, np.array(ys, dtype=np.int8).reshape(len(ys), self.labels.shape[1])


@dataclass
class TrainHParams:
    epochs: int = 3
    batch_size: int = 32
    peak_lr: float = 2e-5
    warmup_proportion: float = 0.1
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_grad_norm: float = 1.0


@dataclass
class TrainResult:
    model: Classifier
    metrics: list[dict]
    best_epoch: int
    step_losses: list[float] = field(default_factory=list)
    optimizer: nx.OptimizerState | None = None


def evaluate_model(model: Classifier, data: LabeledSet, space: LabelSpace) -> PredictionSet:
    scores = model.predict_notes(data.notes)
    return PredictionSet([n.note_id for n in data.notes], scores, data.labels, space)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def train_classifier(
    model: Classifier,
    train: LabeledSet,
    dev: LabeledSet,
    space: LabelSpace,
    hparams: TrainHParams | None = None,
    seed: int = 0,
    start_epoch: int = 0,
    optimizer: nx.OptimizerState | None = None,
    on_epoch_end: Callable[[int, Classifier, nx.OptimizerState, dict], None] | None = None,
) -> TrainResult:
    """Fine-tune with BCE over all labels; keep the epoch with the best dev micro-AUC.

    Each epoch draws shuffling and dropout from ``epoch_rng(seed, epoch)``, so
    a run resumed at ``start_epoch`` with the saved optimizer state replays
    the remaining epochs exactly.
    """
    hp = hparams or TrainHParams()
    chunks, ys = train.chunks(model.max_len)
    if not chunks:
        raise ValueError("empty training set")
    steps_per_epoch = math.ceil(len(chunks) / hp.batch_size)
    schedule = nx.Schedule(hp.peak_lr, steps_per_epoch * hp.epochs, hp.warmup_proportion)
    state = optimizer or nx.OptimizerState(hp.betas, hp.adam_eps, hp.weight_decay)
    params = model.trainable()

    metrics: list[dict] = []
    losses: list[float] = []
    best_auc, best_epoch = -math.inf, -1
    best_weights = None
    for epoch in range(start_epoch, hp.epochs):
        rng = epoch_rng(seed, epoch)
        order = rng.permutation(len(chunks))
        epoch_loss = 0.0
        for s in range(0, len(order), hp.batch_size):
            b = order[s : s + hp.batch_size]
            ids, mask, seg = collate([chunks[i] for i in b])
            nx.zero_grads(params)
            logits, _ = model.logits(ids, mask, seg, train=True, rng=rng)
            loss = nx.bce_with_logits(logits, ys[b])
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite training loss at step {state.step}")
            loss.backward()
            grads = nx.collect_grads(params)
            nx.clip_grads(grads, hp.max_grad_norm)
            lr = nx.lr_at(state.step + 1, schedule)
            nx.adamw_step(params, grads, state, lr)
            losses.append(float(loss.data))
            epoch_loss += float(loss.data) * len(b)
        dev_auc = micro_auc(evaluate_model(model, dev, space))
        row = {"epoch": epoch + 1, "step": state.step, "train_loss": epoch_loss / len(chunks),
               "dev_micro_auc": dev_auc}
        metrics.append(row)
        log.info("epoch %d train_loss %.4f dev_micro_auc %.4f", epoch + 1, row["train_loss"], dev_auc)
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, state, row)
        if dev_auc > best_auc:
            best_auc, best_epoch = dev_auc, epoch + 1
            best_weights = {k: v.data.copy() for k, v in params.items()}
    if best_weights is not None:
        for k, v in params.items():
            v.data = best_weights[k]
    return TrainResult(model, metrics, best_epoch, losses, state)


METRIC_COLUMNS = ("epoch", "step", "train_loss", "dev_micro_auc")


def write_metrics(rows: list[dict], path: str | Path) -> None:
    if not rows:
        return
    # rows restored from a checkpoint manifest come back with sorted keys
    cols = [c for c in METRIC_COLUMNS if c in rows[0]] + sorted(set(rows[0]) - set(METRIC_COLUMNS))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
