"""Text normalization, vocabulary, tokenization and chunking of clinical notes."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
NUM_SPECIAL = len(SPECIAL_TOKENS)
NEWLINE = "\n"
SENTENCE_END = frozenset({".", "!", "?", NEWLINE})

# letters/digits form words; every other non-space character stands alone
_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_")
_DIGITS_RE = re.compile(r"\d+")

VOCAB_MAGIC = "#icdxml-vocab\t1"


@dataclass
class Note:
    note_id: str
    patient_id: str
    timestamp: str
    category: str
    text: str
    codes: tuple[str, ...] = ()

    def with_codes(self, codes: Iterable[str]) -> "Note":
        return Note(
            self.note_id, self.patient_id, self.timestamp, self.category, self.text,
            tuple(sorted(set(codes))),
        )

    def to_json(self) -> dict:
        return {
            "note_id": self.note_id,
            "patient_id": self.patient_id,
            "timestamp": self.timestamp,
            "category": self.category,
            "text": self.text,
            "codes": list(self.codes),
        }


def read_notes(path: str | Path) -> list[Note]:
    notes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                notes.append(
                    Note(
                        note_id=str(obj["note_id"]),
                        patient_id=str(obj["patient_id"]),
                        timestamp=str(obj["timestamp"]),
                        category=str(obj.get("category", "")),
                        text=obj["text"],
                        codes=tuple(obj.get("codes", ())),
                    )
                )
            except (KeyError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed note record ({exc})") from exc
    return notes


def write_notes(notes: Iterable[Note], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for note in notes:
            fh.write(json.dumps(note.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def normalize_text(raw: str) -> list[str]:
    """Lowercase, isolate punctuation, and mask digit runs.

    >>> normalize_text("ICD-10-cm 2019")
    ['icd', '-', 'nn', '-', 'cm', 'nnnn']
    """
    tokens = _TOKEN_RE.findall(raw.lower())
    return [_DIGITS_RE.sub(lambda m: "n" * min(len(m.group()), 4), t) for t in tokens]


def note_filter(raw: str, category: str, excluded_categories: Iterable[str] = ()) -> bool:
    """Keep notes of at least 50 raw characters from allowed categories."""
    return len(raw) >= 50 and category not in set(excluded_categories)


@dataclass
class Vocab:
    tokens: list[str]
    counts: dict[str, int]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.tokens[:NUM_SPECIAL]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    @property
    def specials(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(SPECIAL_TOKENS)}

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        lines = [
            VOCAB_MAGIC,
            "#specials\t" + "\t".join(SPECIAL_TOKENS),
            f"#size\t{len(self.tokens)}",
        ]
        lines += [f"{t}\t{self.counts[t]}" for t in self.tokens[NUM_SPECIAL:]]
        return ("\n".join(lines) + "\n").encode("utf-8")

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if not lines or lines[0] != VOCAB_MAGIC:
            raise ValueError(f"{path}: not a vocabulary file")
        # fixed three-line header; body tokens may themselves start with '#'
        header = lines[:3]
        specials = header[1].split("\t")[1:]
        if tuple(specials) != SPECIAL_TOKENS:
            raise ValueError(f"{path}: unexpected special tokens {specials}")
        tokens, counts = list(SPECIAL_TOKENS), {}
        for ln in lines[3:]:
            if not ln:
                continue
            tok, cnt = ln.rsplit("\t", 1)
            tokens.append(tok)
            counts[tok] = int(cnt)
        return cls(tokens, counts)


def build_vocab(token_stream: Iterable[str], budget: int) -> Vocab:
    """Specials plus the ``budget`` most frequent tokens (ties: lexicographic)."""
    if budget < 1:
        raise ValueError("vocabulary budget must be positive")
    counter = Counter(token_stream)
    return vocab_from_counts(counter, budget)


def vocab_from_counts(counter: Counter | dict[str, int], budget: int) -> Vocab:
    items = [(t, c) for t, c in counter.items() if t not in SPECIAL_TOKENS and c > 0]
    items.sort(key=lambda tc: (-tc[1], tc[0]))
    kept = items[:budget]
    return Vocab(list(SPECIAL_TOKENS) + [t for t, _ in kept], dict(kept))


def merge_counts(partials: Iterable[Counter]) -> Counter:
    """Reduce per-partition token counts in the given (deterministic) order."""
    total: Counter = Counter()
    for part in partials:
        total.update(part)
    return total


@dataclass
class TokenizedNote:
    note_id: str
    token_strings: list[str]
    token_ids: list[int]
    oov_count: int


def encode(tokens: list[str], vocab: Vocab, note_id: str = "") -> TokenizedNote:
    ids = [vocab.index.get(t, UNK) for t in tokens]
    return TokenizedNote(note_id, list(tokens), ids, sum(1 for i in ids if i == UNK))


def mean_oov_per_note(corpus: list[TokenizedNote]) -> float:
    if not corpus:
        raise ValueError("empty corpus")
    return sum(n.oov_count for n in corpus) / len(corpus)


def sentence_split(tokens: list[str]) -> list[list[str]]:
    sentences, current = [], []
    for tok in tokens:
        current.append(tok)
        if tok in SENTENCE_END:
            if tok == NEWLINE:
                current.pop()
            if current:
                sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


@dataclass
class Chunk:
    ids: np.ndarray
    mask: np.ndarray
    segments: np.ndarray
    origin: tuple[str, int] = ("", 0)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def content_ids(self) -> np.ndarray:
        """Token ids with CLS/SEP/PAD stripped."""
        keep = (self.mask == 1) & (self.ids != CLS) & (self.ids != SEP)
        return self.ids[keep]


def make_chunk(content: list[int] | np.ndarray, max_len: int, origin=("", 0)) -> Chunk:
    n = len(content)
    if n + 2 > max_len:
        raise ValueError(f"{n} content tokens do not fit in max_len={max_len}")
    ids = np.full(max_len, PAD, dtype=np.int64)
    ids[0] = CLS
    ids[1 : n + 1] = content
    ids[n + 1] = SEP
    mask = np.zeros(max_len, dtype=np.int64)
    mask[: n + 2] = 1
    return Chunk(ids, mask, np.zeros(max_len, dtype=np.int64), origin)


def chunk_note(note: TokenizedNote, max_len: int) -> list[Chunk]:
    """Split a note into ``[CLS] window [SEP]`` chunks padded to ``max_len``."""
    if max_len < 8:
        raise ValueError("max_len must be at least 8")
    width = max_len - 2
    ids = note.token_ids
    starts = range(0, max(len(ids), 1), width)
    return [make_chunk(ids[s : s + width], max_len, (note.note_id, k)) for k, s in enumerate(starts)]


def collate(chunks: list[Chunk]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack chunks into ``(ids, mask, segments)`` arrays of shape ``[B, N]``."""
    return (
        np.stack([c.ids for c in chunks]),
        np.stack([c.mask for c in chunks]),
        np.stack([c.segments for c in chunks]),
    )


def iter_tokens(texts: Iterable[str]) -> Iterator[str]:
    for text in texts:
        yield from normalize_text(text)
