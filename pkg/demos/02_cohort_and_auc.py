"""Chronic-code imputation, label filtering, patient splits and rank-based AUC.

Run: python3 demos/02_cohort_and_auc.py
"""

from collections import Counter

import numpy as np

from icdxml.cohort import avg_codes_per_note, filter_labels, impute_chronic, split_by_patient
from icdxml.corpus import Note
from icdxml.evaluation import auc_binary
from icdxml.synth import PlantedConfig, planted_corpus

# One patient, four notes.  "C1" is chronic and recorded twice, so it is carried
# to every note from its first occurrence on, filling the gap at n3.  "C2" is
# chronic but seen only once, and "A9" is not chronic; neither is touched.
history = [
    Note("n1", "p", "2020-01-01T00:00:00", "discharge", "first stay", ("A9",)),
    Note("n2", "p", "2020-03-01T00:00:00", "discharge", "second stay", ("C1", "C2")),
    Note("n3", "p", "2020-06-01T00:00:00", "discharge", "third stay", ()),
    Note("n4", "p", "2020-09-01T00:00:00", "discharge", "fourth stay", ("A9", "C1")),
]
for note in impute_chronic(history, {"C1", "C2"}):
    print(note.note_id, note.timestamp[:10], note.codes)

# Imputation is idempotent: running it on its own output changes nothing.
once = impute_chronic(history, {"C1", "C2"})
assert impute_chronic(once, {"C1"}) == once

# A planted corpus with chronic labels shows the effect in aggregate.
corpus = planted_corpus(PlantedConfig(num_labels=12, n_notes=1200, n_chronic=3, notes_per_patient=(2, 6)), seed=0)
notes = corpus.notes
by_patient = {}
for n in notes:
    by_patient.setdefault(n.patient_id, []).append(n)
imputed = [m for group in by_patient.values() for m in impute_chronic(group, corpus.chronic)]
print(f"\ncodes per note: {avg_codes_per_note(notes):.3f} recorded, {avg_codes_per_note(imputed):.3f} after imputation")

# Labels seen fewer than min_count times are dropped from the label space.
space = filter_labels(imputed, 150, corpus.descriptions)
counts = Counter(c for n in imputed for c in n.codes)
print(f"{len(space)} of {len(counts)} labels kept at min count 150;",
      "dropped:", sorted(c for c in counts if c not in space.codes))

# Splits are by patient, so no patient's notes straddle train and test.
assignment = split_by_patient(sorted(by_patient), (0.8, 0.1, 0.1), seed=0)
print("patients per split:", Counter(assignment.values()))

# AUC is the Mann-Whitney statistic: the chance a random positive outranks a
# random negative, with ties counting one half.
labels = np.array([0, 0, 1, 1, 0, 1])
scores = np.array([0.1, 0.4, 0.35, 0.8, 0.4, 0.4])
pairs = [(s_p > s_n) + 0.5 * (s_p == s_n) for s_p in scores[labels == 1] for s_n in scores[labels == 0]]
print(f"\nAUC {auc_binary(scores, labels):.4f} vs pairwise count {np.mean(pairs):.4f}")
print("constant scores:", auc_binary(np.ones(6), labels))
