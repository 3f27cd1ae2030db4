"""Chronic imputation, label filtering, label vectors and patient splits."""

from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icdxml.cohort import (
    LabelSpace,
    apply_split,
    avg_codes_per_note,
    filter_labels,
    impute_chronic,
    impute_corpus,
    label_vector,
    read_chronic,
    read_descriptions,
    read_split,
    sort_notes,
    split_by_patient,
    split_targets,
    write_chronic,
    write_descriptions,
    write_split,
)
from icdxml.corpus import Note

T0 = datetime(2020, 1, 1)


def history(code_sets, pid="p", day_of=None):
    day_of = day_of or (lambda i: i)
    return [
        Note(f"n{i:02d}", pid, (T0 + timedelta(days=day_of(i))).isoformat(), "c", "x" * 60, tuple(sorted(c)))
        for i, c in enumerate(code_sets)
    ]


def brute_force_impute(notes, chronic):
    """Enumerate (code, note) pairs: add c to note j when c recurs and j is not before its first note."""
    key = lambda n: (datetime.fromisoformat(n.timestamp), n.note_id)
    out = [set(n.codes) for n in notes]
    for c in chronic:
        holders = [n for n in notes if c in n.codes]
        if len(holders) < 2:
            continue
        first = min(key(n) for n in holders)
        for j, n in enumerate(notes):
            if key(n) >= first:
                out[j].add(c)
    return out


def random_history(rng, max_notes=20, max_codes=10):
    codes = [f"C{k}" for k in range(max_codes)]
    n = int(rng.integers(1, max_notes + 1))
    sets = [set(rng.choice(codes, size=int(rng.integers(0, 4)), replace=True)) for _ in range(n)]
    # shared days make timestamp ties that the note id must break
    days = np.sort(rng.integers(0, max(1, n // 2) + 1, size=n))
    chronic = set(rng.choice(codes, size=int(rng.integers(0, max_codes + 1)), replace=False))
    return sort_notes(history(sets, day_of=lambda i: int(days[i]))), chronic


class TestImputation:
    def test_fills_gap(self):
        out = impute_chronic(history([{"I10"}, set(), {"I10"}]), {"I10"})
        assert [n.codes for n in out] == [("I10",)] * 3

    def test_single_instance_unchanged(self):
        notes = history([{"I10"}, set()])
        assert impute_chronic(notes, {"I10"}) == notes

    def test_non_chronic_unchanged(self):
        notes = history([{"S72.0"}, {"S72.0"}, set()])
        assert impute_chronic(notes, {"I10"}) == notes

    def test_starts_at_earliest(self):
        out = impute_chronic(history([set(), {"E11"}, set(), {"E11"}, set()]), {"E11"})
        assert [n.codes for n in out] == [(), ("E11",), ("E11",), ("E11",), ("E11",)]

    def test_unsorted(self):
        notes = history([{"I10"}, {"I10"}])
        with pytest.raises(ValueError, match="notes not time-ordered"):
            impute_chronic(notes[::-1], {"I10"})

    def test_oracle_random_histories(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            notes, chronic = random_history(rng)
            got = impute_chronic(notes, chronic)
            assert [set(n.codes) for n in got] == brute_force_impute(notes, chronic)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100)
    def test_idempotent_and_monotone(self, seed):
        notes, chronic = random_history(np.random.default_rng(seed))
        once = impute_chronic(notes, chronic)
        assert impute_chronic(once, chronic) == once
        for before, after in zip(notes, once):
            assert set(before.codes) <= set(after.codes)
            assert after.note_id == before.note_id and after.text == before.text

    def test_corpus_groups_by_patient(self):
        a = history([{"I10"}, set(), {"I10"}], pid="a")
        b = history([set(), {"I10"}], pid="b")
        out = {n.patient_id + n.note_id: set(n.codes) for n in impute_corpus(b + a[::-1], {"I10"})}
        assert out["an01"] == {"I10"} and out["bn00"] == set()


class TestLabelSpace:
    def test_strict_threshold(self):
        notes = history([{"A"}] * 5 + [{"B"}] * 2)
        assert filter_labels(notes, 2).codes == ["A"]

    def test_tie_order(self):
        notes = history([{"B"}] * 3 + [{"A"}] * 3)
        assert filter_labels(notes, 2).codes == ["A", "B"]

    def test_empty(self):
        assert len(filter_labels([], 3)) == 0

    def test_inclusive_switch(self):
        notes = history([{"A"}] * 5 + [{"B"}] * 2)
        assert filter_labels(notes, 2, inclusive=True).codes == ["A", "B"]

    def test_min_count_validated(self):
        with pytest.raises(ValueError):
            filter_labels([], 0)

    @given(st.lists(st.sets(st.sampled_from("ABCDEFG"), max_size=4), max_size=40), st.integers(1, 8))
    def test_oracle(self, sets, k):
        space = filter_labels(history(sets), k)
        counts = {c: sum(c in s for s in sets) for c in "ABCDEFG"}
        assert set(space.codes) == {c for c, n in counts.items() if n > k}
        assert space.codes == sorted(space.codes, key=lambda c: (-counts[c], c))
        assert all(space.train_count[c] == counts[c] for c in space.codes)

    def test_descriptions_and_chronic_flags(self):
        space = filter_labels(history([{"A", "B"}] * 3), 1, {"A": "alpha"}, {"B"})
        assert space.description("A") == "alpha" and space.missing_descriptions() == ["B"]
        assert space.chronic == {"A": False, "B": True}

    def test_json_round_trip(self):
        space = LabelSpace(["B", "A"], {"A": "a"}, {"A": 3, "B": 4}, {"B": True})
        back = LabelSpace.from_json(space.to_json())
        assert back.codes == ["B", "A"] and back.index == {"B": 0, "A": 1}
        assert back.digest() == space.digest()

    def test_duplicate_codes(self):
        with pytest.raises(ValueError):
            LabelSpace(["A", "A"])

    @pytest.mark.parametrize("codes,vec", [(set(), [0, 0]), ({"A"}, [1, 0]), ({"A", "Z"}, [1, 0])])
    def test_label_vector(self, codes, vec):
        assert label_vector(codes, LabelSpace(["A", "B"])).tolist() == vec

    def test_avg_codes(self):
        assert avg_codes_per_note(history([{"A", "B"}, {"C", "D"}])) == 2.0
        assert avg_codes_per_note(history([{"A"}, {"A", "B"}, {"A", "B", "C"}])) == 2.0
        assert avg_codes_per_note(history([{"A", "Z"}]), LabelSpace(["A"])) == 1.0
        with pytest.raises(ValueError):
            avg_codes_per_note([])


class TestSplit:
    def test_ten_patients(self):
        a = split_by_patient([f"p{i}" for i in range(10)], seed=3)
        assert [sum(v == s for v in a.values()) for s in ("train", "dev", "test")] == [7, 1, 2]

    def test_one_patient(self):
        assert split_by_patient(["p"]) == {"p": "train"}

    def test_empty(self):
        assert split_by_patient([]) == {}

    def test_ratio_check(self):
        with pytest.raises(ValueError):
            split_by_patient(["a"], (0.5, 0.5, 0.5))

    def test_seed_determinism(self):
        ids = [f"p{i}" for i in range(50)]
        assert split_by_patient(ids, seed=9) == split_by_patient(ids[::-1], seed=9)
        assert split_by_patient(ids, seed=9) != split_by_patient(ids, seed=10)

    @given(st.integers(0, 500), st.integers(0, 10**6))
    @settings(max_examples=60)
    def test_rounding_targets(self, n, seed):
        a = split_by_patient([f"p{i}" for i in range(n)], seed=seed)
        got = [sum(v == s for v in a.values()) for s in ("train", "dev", "test")]
        assert sum(got) == n
        for k, r in zip(got, (0.7, 0.1, 0.2)):
            assert abs(k - n * r) < 1
        assert got == split_targets(n, (0.7, 0.1, 0.2))

    def test_disjoint_over_notes(self):
        notes = []
        for p in range(300):
            notes += history([set()] * (p % 4 + 1), pid=f"P{p}")
        parts = apply_split(notes, split_by_patient([n.patient_id for n in notes], seed=1))
        owners = [{n.patient_id for n in parts[s]} for s in ("train", "dev", "test")]
        assert not (owners[0] & owners[1] or owners[0] & owners[2] or owners[1] & owners[2])
        assert sum(len(v) for v in parts.values()) == len(notes)


class TestFiles:
    def test_round_trips(self, tmp_path):
        write_descriptions({"B": "beta, with comma", "A": "alpha"}, tmp_path / "d.csv")
        assert read_descriptions(tmp_path / "d.csv") == {"A": "alpha", "B": "beta, with comma"}
        write_chronic({"I10", "E11"}, tmp_path / "c.txt")
        assert read_chronic(tmp_path / "c.txt") == {"I10", "E11"}
        write_split({"p1": "dev", "p0": "train"}, tmp_path / "s.csv")
        assert read_split(tmp_path / "s.csv") == {"p0": "train", "p1": "dev"}

    def test_bad_split_tag(self, tmp_path):
        (tmp_path / "s.csv").write_text("patient_id,split\np,holdout\n")
        with pytest.raises(ValueError):
            read_split(tmp_path / "s.csv")
