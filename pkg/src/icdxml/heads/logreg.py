"""Bag-of-words logistic regression, one independent binary model per label."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class LogRegHParams:
    lr: float = 4.0
    batch_size: int = 64
    max_epochs: int = 200
    tol: float = 1e-5
    l2: float = 0.0
    seed: int = 0


@dataclass
class BowLogRegParams:
    weight: np.ndarray  # [M, V]
    bias: np.ndarray  # [M]

    def predict(self, features: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(features) @ self.weight.T + self.bias
        return _sigmoid(z)

    def predict_ids(self, token_ids) -> np.ndarray:
        return self.predict(bow_features([token_ids], self.weight.shape[1]))[0]


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bow_features(docs, vocab_size: int) -> np.ndarray:
    """Token count vectors ``[n_docs, V]``."""
    x = np.zeros((len(docs), vocab_size), dtype=np.float64)
    for i, ids in enumerate(docs):
        np.add.at(x[i], np.asarray(ids, dtype=np.int64), 1.0)
    return x


def _loss(p: BowLogRegParams, x, y) -> float:
    z = x @ p.weight.T + p.bias
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def bow_logreg(features: np.ndarray, labels: np.ndarray, hp: LogRegHParams | None = None) -> BowLogRegParams:
    """Fit by mini-batch gradient descent until the epoch loss stops improving by ``tol``."""
    hp = hp or LogRegHParams()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n, v = x.shape
    m = y.shape[1]
    # rows scaled to unit RMS norm: the logistic curvature is at most |x|^2 / 4,
    # so one lr is stable and fast whatever the note lengths
    scale = max(1.0, float(np.sqrt(np.mean((x**2).sum(axis=1)))))
    xs = x / scale
    params = BowLogRegParams(np.zeros((m, v)), np.zeros(m))
    rng = np.random.default_rng(hp.seed)
    prev = _loss(params, xs, y)
    for epoch in range(hp.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            b = order[start : start + hp.batch_size]
            err = _sigmoid(xs[b] @ params.weight.T + params.bias) - y[b]  # [B, M]
            params.weight -= hp.lr * (err.T @ xs[b] / len(b) + hp.l2 * params.weight)
            params.bias -= hp.lr * err.mean(axis=0)
        cur = _loss(params, xs, y)
        if abs(prev - cur) < hp.tol:
            log.info("logreg converged after %d epochs (loss %.6f)", epoch + 1, cur)
            break
        prev = cur
    return BowLogRegParams(params.weight / scale, params.bias)
