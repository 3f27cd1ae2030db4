"""Session fixtures shared by the slow experiment tests."""

from dataclasses import dataclass

import numpy as np
import pytest

from icdxml.corpus import Vocab, build_vocab, iter_tokens, normalize_text
from icdxml.encoder import EncoderConfig
from icdxml.pretrain import PretrainHParams, PretrainResult, documents_from_notes, pretrain
from icdxml.synth import BigramGrammar, bigram_corpus, make_grammar

# bigram pretraining recipe: desk encoder at max_len 64, about 3,800 steps
PRETRAIN_DOCS = 8000
PRETRAIN_HP = PretrainHParams(epochs=2, batch_size=8, peak_lr=2e-3, log_every=100)


VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one pass/fail line per acceptance criterion."""
    store = request.config.stash.setdefault(VERDICTS, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        store[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(VERDICTS, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])


@dataclass
class BigramRun:
    grammar: BigramGrammar
    vocab: Vocab
    result: PretrainResult


@pytest.fixture(scope="session")
def bigram_pretrained() -> BigramRun:
    grammar = make_grammar(200)
    train = bigram_corpus(grammar, PRETRAIN_DOCS, seed=5)
    dev = bigram_corpus(grammar, 200, seed=6, prefix="bgd")
    vocab = build_vocab(iter_tokens(n.text for n in train), 200)
    cfg = EncoderConfig(vocab_size=len(vocab), max_len=64)
    result = pretrain(documents_from_notes(train, vocab), documents_from_notes(dev, vocab), cfg, PRETRAIN_HP, seed=0)
    return BigramRun(grammar, vocab, result)


def deterministic_positions(grammar: BigramGrammar, texts, max_len: int, per_doc: int, seed: int):
    """Per text, up to ``per_doc`` positions whose left neighbour has a single successor."""
    rng = np.random.default_rng(seed)
    index = {w: i for i, w in enumerate(grammar.words)}
    det = grammar.deterministic
    out = []
    for text in texts:
        toks = normalize_text(text)[: max_len - 2]
        pos = [p for p in range(1, len(toks))
               if toks[p - 1] in index and det[index[toks[p - 1]]] and toks[p] != "."]
        out.append(sorted(int(p) for p in rng.choice(pos, size=min(per_doc, len(pos)), replace=False)))
    return out
