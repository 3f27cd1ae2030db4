"""Synthetic grammar and planted-keyword corpora."""

import json
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icdxml.corpus import read_notes
from icdxml.synth import (
    PlantedConfig,
    bigram_corpus,
    label_codes,
    make_grammar,
    planted_corpus,
    word_list,
    write_synth,
)


class TestWords:
    def test_distinct_letters_only(self):
        w = word_list(300, seed=3)
        assert len(set(w)) == 300
        assert all(re.fullmatch("[a-z]{4}", x) for x in w)

    def test_too_many(self):
        with pytest.raises(ValueError):
            word_list(10**6)

    def test_codes_unique(self):
        assert len(set(label_codes(600))) == 600


class TestGrammar:
    g = make_grammar(60, seed=2)

    def test_shape(self):
        assert len(self.g.words) == 59
        assert abs(self.g.deterministic.mean() - 0.5) < 0.2
        assert all(len(s) in (1, 3) for s in self.g.successors)

    @given(st.integers(0, 2**31))
    @settings(max_examples=50)
    def test_sentences_follow_successors(self, seed):
        rng = np.random.default_rng(seed)
        index = {w: i for i, w in enumerate(self.g.words)}
        s = self.g.sentence(rng)
        assert s[-1] == "." and 7 <= len(s) <= 15
        ids = [index[w] for w in s[:-1]]
        assert all(b in self.g.successors[a] for a, b in zip(ids, ids[1:]))

    @given(st.integers(0, 2**31), st.sets(st.integers(0, 58), max_size=30))
    @settings(max_examples=50)
    def test_avoid(self, seed, avoid):
        s = self.g.sentence(np.random.default_rng(seed), avoid=frozenset(avoid))
        assert not {self.g.words[k] for k in avoid} & set(s)
        assert len(s) >= 2

    def test_deterministic_successor_is_fixed(self):
        rng = np.random.default_rng(0)
        i = int(np.flatnonzero(self.g.deterministic)[0])
        assert {self.g.next_word(i, rng) for _ in range(20)} == {self.g.successors[i][0]}

    def test_bigram_corpus(self):
        docs = bigram_corpus(self.g, 5, seed=1)
        assert len({d.note_id for d in docs}) == 5
        assert all(d.text.endswith(".") and not d.codes for d in docs)
        assert [d.text for d in docs] == [d.text for d in bigram_corpus(self.g, 5, seed=1)]


class TestPlanted:
    cfg = PlantedConfig(num_labels=8, n_notes=1500, n_chronic=0)
    corpus = planted_corpus(cfg, seed=4)

    def test_trigger_iff_label(self):
        for n in self.corpus.notes:
            words = set(n.text.split())
            for code, w in self.corpus.triggers.items():
                assert (w in words) == (code in n.codes)

    def test_label_priors(self):
        rates = np.array(self.cfg.rates())
        n = len(self.corpus.notes)
        freq = np.array([sum(c in note.codes for note in self.corpus.notes) for c in self.corpus.codes]) / n
        sigma = np.sqrt(rates * (1 - rates) / n)
        assert np.all(np.abs(freq - rates) <= 3 * sigma)

    def test_lengths(self):
        lengths = [len(n.text.split()) for n in self.corpus.notes]
        assert min(lengths) >= 30 and max(lengths) < 200

    def test_descriptions_open_with_trigger(self):
        for code, d in self.corpus.descriptions.items():
            assert d.split()[0] == self.corpus.triggers[code]

    def test_reproducible(self):
        again = planted_corpus(self.cfg, seed=4)
        assert [(n.text, n.codes, n.timestamp) for n in again.notes] == \
               [(n.text, n.codes, n.timestamp) for n in self.corpus.notes]
        assert planted_corpus(self.cfg, seed=5).notes[0].text != self.corpus.notes[0].text

    def test_chronic(self):
        cfg = PlantedConfig(num_labels=6, n_notes=600, n_chronic=2, notes_per_patient=(3, 6))
        c = planted_corpus(cfg, seed=0)
        by_patient = {}
        for n in c.notes:
            by_patient.setdefault(n.patient_id, []).append(n)
        seen_gap = False
        for notes in by_patient.values():
            notes.sort(key=lambda n: n.timestamp)
            for code in sorted(c.chronic):
                has = [c.triggers[code] in n.text.split() for n in notes]
                if not any(has):
                    continue
                k = has.index(True)
                # the trigger persists from onset and the code is recorded at onset
                assert all(has[k:]) and code in notes[k].codes
                assert not any(code in n.codes for n in notes[:k])
                seen_gap |= not all(code in n.codes for n in notes[k:])
        assert seen_gap


class TestWriteSynth:
    def test_files_and_regeneration(self, tmp_path):
        cfg = PlantedConfig(num_labels=5, n_notes=40, n_chronic=1)
        a = write_synth(tmp_path / "a", cfg, n_bigram_docs=30, seed=2)
        b = write_synth(tmp_path / "b", cfg, n_bigram_docs=30, seed=2)
        for k in a:
            assert a[k].read_bytes() == b[k].read_bytes(), k
        notes = read_notes(a["planted"])
        assert len(notes) == 40
        meta = json.loads(a["triggers"].read_text())
        assert len(meta["triggers"]) == 5 and meta["seed"] == 2
        assert len(read_notes(a["bigram"])) == 30
