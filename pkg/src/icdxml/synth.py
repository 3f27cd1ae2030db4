"""Synthetic verification corpora.

Two generators share one vocabulary of letter-only pseudo-words:

* a bigram grammar where some words have a single fixed successor, so masked
  infill of those positions has a known answer;
* planted-keyword notes where label ``j`` is present exactly when its trigger
  word ``w_j`` occurs in the text.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .cohort import write_chronic, write_descriptions
from .corpus import Note, write_notes

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_EPOCH = datetime(2019, 1, 1, 8, 0, 0)
# length range of the sentence that carries a planted trigger
TRIGGER_SENTENCE = (2, 5)


def word_list(n: int, seed: int = 0) -> list[str]:
    """``n`` distinct lowercase two-syllable pseudo-words (no digits)."""
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    words = ["".join(p) for p in itertools.product(syllables, repeat=2)]
    if n > len(words):
        raise ValueError(f"at most {len(words)} words available")
    rng = np.random.default_rng(seed)
    return [words[i] for i in rng.choice(len(words), size=n, replace=False)]


@dataclass
class BigramGrammar:
    words: list[str]
    successors: list[list[int]]

    @property
    def deterministic(self) -> np.ndarray:
        return np.array([len(s) == 1 for s in self.successors])

    def next_word(self, i: int, rng: np.random.Generator) -> int:
        succ = self.successors[i]
        return succ[0] if len(succ) == 1 else succ[int(rng.integers(len(succ)))]

    def sentence(
        self,
        rng: np.random.Generator,
        length: tuple[int, int] = (6, 14),
        start: int | None = None,
        avoid: frozenset[int] = frozenset(),
    ) -> list[str]:
        """One sentence ending in '.'.

        The walk stops early, still on a grammatical path, right before any
        word in ``avoid``; a random start is drawn outside ``avoid``.
        """
        n = int(rng.integers(length[0], length[1] + 1))
        if start is None:
            allowed = [k for k in range(len(self.words)) if k not in avoid]
            start = allowed[int(rng.integers(len(allowed)))]
        i = start
        out = [i]
        for _ in range(n - 1):
            i = self.next_word(i, rng)
            if i in avoid:
                break
            out.append(i)
        return [self.words[k] for k in out] + ["."]


def make_grammar(
    vocab_size: int = 200,
    deterministic_fraction: float = 0.5,
    branching: int = 3,
    seed: int = 0,
) -> BigramGrammar:
    """Grammar over ``vocab_size - 1`` words (the sentence end '.' is the last token)."""
    n = vocab_size - 1
    words = word_list(n, seed)
    rng = np.random.default_rng(seed + 1)
    det = rng.random(n) < deterministic_fraction
    successors = []
    for i in range(n):
        k = 1 if det[i] else branching
        successors.append([int(x) for x in rng.choice(n, size=k, replace=False)])
    return BigramGrammar(words, successors)


def bigram_corpus(
    grammar: BigramGrammar,
    n_docs: int,
    seed: int = 0,
    sentences: tuple[int, int] = (4, 10),
    prefix: str = "bg",
) -> list[Note]:
    rng = np.random.default_rng(seed)
    notes = []
    for d in range(n_docs):
        k = int(rng.integers(sentences[0], sentences[1] + 1))
        text = " ".join(" ".join(grammar.sentence(rng)) for _ in range(k))
        ts = (_EPOCH + timedelta(days=d)).isoformat()
        notes.append(Note(f"{prefix}{d:06d}", f"{prefix}p{d:06d}", ts, "progress", text, ()))
    return notes


@dataclass
class PlantedConfig:
    num_labels: int = 20
    vocab_size: int = 200
    n_notes: int = 2000
    label_rates: list[float] | None = None
    rate_range: tuple[float, float] = (0.05, 0.3)
    note_tokens: tuple[int, int] = (30, 100)
    notes_per_patient: tuple[int, int] = (1, 4)
    n_chronic: int = 0
    chronic_prevalence: float = 0.3
    chronic_code_rate: float = 0.5
    grammar_seed: int = 0
    patient_prefix: str = "P"

    def rates(self) -> list[float]:
        if self.label_rates is not None:
            return list(self.label_rates)
        lo, hi = self.rate_range
        return list(np.linspace(lo, hi, self.num_labels))


@dataclass
class PlantedCorpus:
    notes: list[Note]
    codes: list[str]
    triggers: dict[str, str]
    descriptions: dict[str, str]
    chronic: set[str]
    grammar: BigramGrammar
    config: PlantedConfig = field(default_factory=PlantedConfig)


def label_codes(n: int) -> list[str]:
    return [f"{chr(ord('A') + (j // 10) % 26)}{10 + j % 10}.{j // 260}" for j in range(n)]


def trigger_words(grammar: BigramGrammar, n: int) -> list[str]:
    """Triggers are the last ``n`` grammar words (stable across seeds of the corpus)."""
    return grammar.words[-n:]


def planted_corpus(cfg: PlantedConfig, seed: int = 0) -> PlantedCorpus:
    """Multi-label notes whose labels are marked by planted trigger words.

    Non-chronic label ``j`` fires independently with its configured rate and
    a short sentence opened by ``w_j`` is inserted at a sentence boundary.
    Every sentence ends before it would reach a trigger it does not carry,
    so ``w_j`` occurs exactly in the notes where label ``j`` is present and
    the text stays on grammatical paths.  The first ``n_chronic`` labels are
    chronic: a patient with onset at note ``k`` has ``w_j`` in every note from
    ``k`` on, while the code itself is recorded only on a random subset of
    those notes (always including note ``k``).
    """
    grammar = make_grammar(cfg.vocab_size, seed=cfg.grammar_seed)
    codes = label_codes(cfg.num_labels)
    trig = trigger_words(grammar, cfg.num_labels)
    first = len(grammar.words) - cfg.num_labels
    trig_ids = frozenset(range(first, len(grammar.words)))
    fillers = grammar.words[:first]
    generic = fillers[:3]
    descriptions = {c: f"{w} {generic[j % 3]}" for j, (c, w) in enumerate(zip(codes, trig))}
    chronic = set(codes[: cfg.n_chronic])
    rates = cfg.rates()
    rng = np.random.default_rng(seed)

    notes: list[Note] = []
    patient = 0
    while len(notes) < cfg.n_notes:
        k = int(rng.integers(cfg.notes_per_patient[0], cfg.notes_per_patient[1] + 1))
        k = min(k, cfg.n_notes - len(notes))
        pid = f"{cfg.patient_prefix}{patient:06d}"
        onset = {}
        for j in range(cfg.n_chronic):
            if rng.random() < cfg.chronic_prevalence:
                onset[j] = int(rng.integers(k))
        day = int(rng.integers(365))
        for i in range(k):
            present, recorded = set(), set()
            for j in range(cfg.n_chronic, cfg.num_labels):
                if rng.random() < rates[j]:
                    present.add(j)
                    recorded.add(j)
            for j, start in onset.items():
                if i >= start:
                    present.add(j)
                    if i == start or rng.random() < cfg.chronic_code_rate:
                        recorded.add(j)
            n_tok = int(rng.integers(cfg.note_tokens[0], cfg.note_tokens[1] + 1))
            sentences: list[list[str]] = []
            while sum(map(len, sentences)) < n_tok:
                sentences.append(grammar.sentence(rng, avoid=trig_ids))
            for j in sorted(present):
                at = int(rng.integers(len(sentences) + 1))
                sentences.insert(at, grammar.sentence(rng, TRIGGER_SENTENCE, first + j, trig_ids - {first + j}))
            tokens = [t for sent in sentences for t in sent]
            day += int(rng.integers(1, 30))
            ts = (_EPOCH + timedelta(days=day, minutes=i)).isoformat()
            nid = f"{pid}-{i:02d}"
            notes.append(Note(nid, pid, ts, "progress", " ".join(tokens),
                              tuple(sorted(codes[j] for j in recorded))))
        patient += 1
    return PlantedCorpus(notes, codes, dict(zip(codes, trig)), descriptions, chronic, grammar, cfg)


def write_synth(
    out_dir: str | Path,
    planted: PlantedConfig | None = None,
    n_bigram_docs: int = 2000,
    seed: int = 0,
) -> dict[str, Path]:
    """Write both corpora plus descriptions and the chronic list under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    planted = planted or PlantedConfig(n_chronic=3)
    corpus = planted_corpus(planted, seed)
    paths = {
        "bigram": out / "bigram_notes.jsonl",
        "planted": out / "planted_notes.jsonl",
        "descriptions": out / "descriptions.csv",
        "chronic": out / "chronic.txt",
        "triggers": out / "triggers.json",
    }
    write_notes(bigram_corpus(corpus.grammar, n_bigram_docs, seed + 1), paths["bigram"])
    write_notes(corpus.notes, paths["planted"])
    write_descriptions(corpus.descriptions, paths["descriptions"])
    write_chronic(corpus.chronic, paths["chronic"])
    meta = {"triggers": corpus.triggers, "config": asdict(planted), "seed": seed}
    paths["triggers"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths
