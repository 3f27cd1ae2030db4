"""Label space, chronic-code imputation and patient-level splits."""

from __future__ import annotations

import csv
import hashlib
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus import Note

SPLITS = ("train", "dev", "test")


@dataclass
class LabelSpace:
    codes: list[str]
    descriptions: dict[str, str] = field(default_factory=dict)
    train_count: dict[str, int] = field(default_factory=dict)
    chronic: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.codes)) != len(self.codes):
            raise ValueError("duplicate codes in label space")
        self.index = {c: i for i, c in enumerate(self.codes)}

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code: str) -> bool:
        return code in self.index

    def description(self, code: str) -> str:
        return self.descriptions.get(code, "")

    def missing_descriptions(self) -> list[str]:
        return [c for c in self.codes if not self.descriptions.get(c, "").strip()]

    def to_json(self) -> dict:
        return {
            "codes": list(self.codes),
            "descriptions": {c: self.descriptions.get(c, "") for c in self.codes},
            "train_count": {c: int(self.train_count.get(c, 0)) for c in self.codes},
            "chronic": {c: bool(self.chronic.get(c, False)) for c in self.codes},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LabelSpace":
        return cls(
            list(obj["codes"]),
            dict(obj.get("descriptions", {})),
            {k: int(v) for k, v in obj.get("train_count", {}).items()},
            {k: bool(v) for k, v in obj.get("chronic", {}).items()},
        )

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.codes).encode("utf-8")).hexdigest()


def _ts(note: Note) -> datetime:
    return datetime.fromisoformat(note.timestamp)


def sort_notes(notes: Iterable[Note]) -> list[Note]:
    return sorted(notes, key=lambda n: (_ts(n), n.note_id))


def impute_chronic(patient_notes: list[Note], chronic_set: set[str] | frozenset[str]) -> list[Note]:
    """Propagate chronic codes seen in two or more notes forward in time.

    Each such code is added to every note at or after its earliest occurrence.
    ``patient_notes`` must be ordered by ``(timestamp, note_id)``.
    """
    keys = [(_ts(n), n.note_id) for n in patient_notes]
    if any(a > b for a, b in zip(keys, keys[1:])):
        raise ValueError("notes not time-ordered")
    first_seen: dict[str, int] = {}
    seen_in = Counter()
    for i, note in enumerate(patient_notes):
        for code in set(note.codes) & set(chronic_set):
            seen_in[code] += 1
            first_seen.setdefault(code, i)
    recurring = {c: first_seen[c] for c, k in seen_in.items() if k >= 2}
    if not recurring:
        return list(patient_notes)
    out = []
    for i, note in enumerate(patient_notes):
        extra = {c for c, start in recurring.items() if i >= start}
        out.append(note.with_codes(set(note.codes) | extra) if extra - set(note.codes) else note)
    return out


def impute_corpus(notes: Iterable[Note], chronic_set: set[str]) -> list[Note]:
    by_patient: dict[str, list[Note]] = defaultdict(list)
    for n in notes:
        by_patient[n.patient_id].append(n)
    out = []
    for pid in sorted(by_patient):
        out.extend(impute_chronic(sort_notes(by_patient[pid]), chronic_set))
    return out


def code_counts(notes: Iterable[Note]) -> Counter:
    counts: Counter = Counter()
    for n in notes:
        counts.update(set(n.codes))
    return counts


def filter_labels(
    train_notes: Iterable[Note],
    min_count: int,
    descriptions: dict[str, str] | None = None,
    chronic_set: Iterable[str] = (),
    inclusive: bool = False,
) -> LabelSpace:
    """Codes seen more than ``min_count`` times, most frequent first.

    ``inclusive=True`` switches the threshold to ``>=``.
    """
    if min_count < 1:
        raise ValueError("min_count must be at least 1")
    counts = code_counts(train_notes)
    keep = [c for c, k in counts.items() if (k >= min_count if inclusive else k > min_count)]
    keep.sort(key=lambda c: (-counts[c], c))
    chronic = set(chronic_set)
    descriptions = descriptions or {}
    return LabelSpace(
        keep,
        {c: descriptions.get(c, "") for c in keep},
        {c: counts[c] for c in keep},
        {c: c in chronic for c in keep},
    )


def label_vector(note_codes: Iterable[str], space: LabelSpace) -> np.ndarray:
    y = np.zeros(len(space), dtype=np.int8)
    for code in note_codes:
        j = space.index.get(code)
        if j is not None:
            y[j] = 1
    return y


def avg_codes_per_note(notes: list[Note], space: LabelSpace | None = None) -> float:
    """Mean number of codes per note, restricted to ``space`` when given."""
    if not notes:
        raise ValueError("empty note list")
    if space is None:
        return sum(len(set(n.codes)) for n in notes) / len(notes)
    return sum(int(label_vector(n.codes, space).sum()) for n in notes) / len(notes)


def split_targets(n: int, ratios: tuple[float, ...]) -> list[int]:
    """Largest-remainder rounding of ``n * ratios``; leftovers go to larger ratios first."""
    raw = [n * r for r in ratios]
    counts = [math.floor(x) for x in raw]
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), -ratios[i], i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_by_patient(
    patients: Iterable[str],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> dict[str, str]:
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    unique = sorted(set(patients))
    if not unique:
        return {}
    order = np.random.default_rng(seed).permutation(len(unique))
    counts = split_targets(len(unique), ratios)
    tags = [t for t, k in zip(SPLITS, counts) for _ in range(k)]
    return {unique[i]: tags[pos] for pos, i in enumerate(order)}


def apply_split(notes: Iterable[Note], assignment: dict[str, str]) -> dict[str, list[Note]]:
    out: dict[str, list[Note]] = {s: [] for s in SPLITS}
    for n in notes:
        out[assignment[n.patient_id]].append(n)
    return out


# ---------------------------------------------------------------------------
# file formats


def read_descriptions(path: str | Path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["code"]: row["description"] for row in csv.DictReader(fh)}


def write_descriptions(descriptions: dict[str, str], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", "description"])
        for code in sorted(descriptions):
            w.writerow([code, descriptions[code]])


def read_chronic(path: str | Path) -> set[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return {ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")}


def write_chronic(codes: Iterable[str], path: str | Path) -> None:
    Path(path).write_text("".join(c + "\n" for c in sorted(codes)), encoding="utf-8")


def read_split(path: str | Path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        out = {row["patient_id"]: row["split"] for row in csv.DictReader(fh)}
    bad = {v for v in out.values()} - set(SPLITS)
    if bad:
        raise ValueError(f"{path}: unknown split tags {sorted(bad)}")
    return out


def write_split(assignment: dict[str, str], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "split"])
        for pid in sorted(assignment):
            w.writerow([pid, assignment[pid]])
