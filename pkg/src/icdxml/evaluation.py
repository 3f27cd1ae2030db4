"""ROC-AUC metrics, chunk aggregation and per-label reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .cohort import LabelSpace


def aggregate_chunks(chunk_scores: Sequence[np.ndarray]) -> np.ndarray:
    """Note-level scores: elementwise maximum over chunk scores."""
    if len(chunk_scores) == 0:
        raise ValueError("no chunk scores to aggregate")
    return np.max(np.stack([np.asarray(s) for s in chunk_scores]), axis=0)


def auc_binary(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for tied scores."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("undefined AUC: need at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class PredictionSet:
    note_ids: list[str]
    scores: np.ndarray
    labels: np.ndarray
    space: LabelSpace

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        m = len(self.space)
        if self.scores.shape != (len(self.note_ids), m) or self.labels.shape != self.scores.shape:
            raise ValueError("scores/labels must be [notes x labels]")


def micro_auc(preds: PredictionSet) -> float:
    return auc_binary(preds.scores.ravel(), preds.labels.ravel())


def per_label_auc(preds: PredictionSet) -> tuple[dict[str, tuple[float, int]], list[tuple[str, str]]]:
    included: dict[str, tuple[float, int]] = {}
    excluded: list[tuple[str, str]] = []
    n = preds.labels.shape[0]
    for j, code in enumerate(preds.space.codes):
        y = preds.labels[:, j]
        pos = int(y.sum())
        if pos == 0:
            excluded.append((code, "no positives"))
        elif pos == n:
            excluded.append((code, "no negatives"))
        else:
            included[code] = (auc_binary(preds.scores[:, j], y), pos)
    return included, excluded


def macro_auc(preds: PredictionSet) -> tuple[float, list[tuple[str, str]]]:
    included, excluded = per_label_auc(preds)
    if not included:
        raise ValueError("no label has both classes in the evaluation set")
    return float(np.mean([a for a, _ in included.values()])), excluded


@dataclass
class EvalReport:
    micro_auc: float
    macro_auc: float
    per_label: dict[str, tuple[float, int]]
    excluded_labels: list[tuple[str, str]]
    histogram: list[tuple[float, float, int]] = field(default_factory=list)
    high_auc_count: int = 0
    high_auc_threshold: float = 0.98

    def to_json(self) -> dict:
        return {
            "micro_auc": self.micro_auc,
            "macro_auc": self.macro_auc,
            "per_label": {c: {"auc": a, "count": k} for c, (a, k) in self.per_label.items()},
            "excluded_labels": [{"code": c, "reason": r} for c, r in self.excluded_labels],
            "histogram": [{"bin_low": lo, "bin_high": hi, "count": k} for lo, hi, k in self.histogram],
            "high_auc_threshold": self.high_auc_threshold,
            "high_auc_count": self.high_auc_count,
        }


def auc_histogram(
    report: EvalReport, bin_width: float = 0.05, threshold: float = 0.98
) -> tuple[list[tuple[float, float, int]], int]:
    """Right-closed AUC bins over [0, 1] and the count of labels at or above ``threshold``.

    AUC 0 falls into the first bin.
    """
    if not report.per_label:
        raise ValueError("report has no included labels")
    n_bins = int(round(1.0 / bin_width))
    counts = [0] * n_bins
    for auc, _ in report.per_label.values():
        idx = math.ceil(round(auc / bin_width, 9)) - 1
        counts[min(max(idx, 0), n_bins - 1)] += 1
    edges = [round(i * bin_width, 12) for i in range(n_bins + 1)]
    bins = [(edges[i], edges[i + 1], counts[i]) for i in range(n_bins)]
    high = sum(1 for a, _ in report.per_label.values() if a >= threshold)
    return bins, high


def build_report(
    preds: PredictionSet, bin_width: float = 0.05, threshold: float = 0.98
) -> EvalReport:
    included, excluded = per_label_auc(preds)
    if not included:
        raise ValueError("no label has both classes in the evaluation set")
    macro = float(np.mean([a for a, _ in included.values()]))
    report = EvalReport(micro_auc(preds), macro, included, excluded, high_auc_threshold=threshold)
    report.histogram, report.high_auc_count = auc_histogram(report, bin_width, threshold)
    return report


def low_frequency_slice(report: EvalReport, space: LabelSpace, max_train_count: int) -> float:
    """Macro AUC over included codes whose training count is below ``max_train_count``."""
    sel = [
        auc
        for code, (auc, _) in report.per_label.items()
        if space.train_count.get(code, 0) < max_train_count
    ]
    if not sel:
        raise ValueError("empty low-frequency slice")
    return float(np.mean(sel))


def write_report(report: EvalReport, out_dir: str | Path, stem: str = "eval") -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_dir / f"{stem}_report.json",
        "per_label": out_dir / f"{stem}_per_label.csv",
        "histogram": out_dir / f"{stem}_histogram.csv",
    }
    paths["json"].write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    with open(paths["per_label"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", "count", "auc"])
        for code, (auc, count) in report.per_label.items():
            w.writerow([code, count, repr(auc)])
    with open(paths["histogram"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, k in report.histogram:
            w.writerow([lo, hi, k])
    return paths
