"""Masked-LM + next-sentence pretraining on a bigram grammar, then fine-tuning.

Half the grammar's words have a single allowed successor, so a model that
has learned the grammar can fill those positions in exactly.  We pretrain
the desk encoder at max_len 64, check infill on fresh text, extend the
position table to 128, and fine-tune on a small planted-keyword training
set next to an encoder trained from scratch.

On this task at this scale pretraining does not help: the planted labels
depend only on token identity, which a scratch encoder learns within an
epoch, while the pretrained encoder's features are dominated by position
and context and take longer to repurpose.  The README discusses this.

Run: python3 demos/05_pretraining_vs_scratch.py [--docs 8000]   (about 5 minutes)
"""

import argparse

import numpy as np

from icdxml.cohort import filter_labels, label_vector
from icdxml.corpus import build_vocab, encode, iter_tokens, normalize_text
from icdxml.encoder import EncoderConfig, extend_positions, init_encoder
from icdxml.heads import Classifier, LabeledSet, TrainHParams, init_xml_head, semantic_label_init, train_classifier
from icdxml.pretrain import PretrainHParams, documents_from_notes, mlm_infill, pretrain
from icdxml.synth import PlantedConfig, bigram_corpus, make_grammar, planted_corpus

ap = argparse.ArgumentParser()
ap.add_argument("--docs", type=int, default=8000)
ap.add_argument("--n-train", type=int, default=300)
ap.add_argument("--seeds", type=int, default=3)
args = ap.parse_args()

grammar = make_grammar(200)
docs = bigram_corpus(grammar, args.docs, seed=5)
held = bigram_corpus(grammar, 200, seed=6, prefix="bgd")
print("a pretraining document:", docs[0].text[:100], "...")

vocab = build_vocab(iter_tokens(n.text for n in docs), 200)
cfg = EncoderConfig(vocab_size=len(vocab), max_len=64)
hp = PretrainHParams(epochs=2, batch_size=8, peak_lr=2e-3, log_every=100)
run = pretrain(documents_from_notes(docs, vocab), documents_from_notes(held, vocab), cfg, hp, seed=0)
best = min(r["dev_mlm_loss"] for r in run.curve)
print(f"dev MLM loss {run.initial_dev_mlm:.3f} -> {best:.3f} over {run.curve[-1]['step']} steps"
      f"  (uniform guess: ln|V| = {np.log(len(vocab)):.3f})")

# infill at positions whose left neighbour has exactly one successor
index = {w: i for i, w in enumerate(grammar.words)}
hits = total = 0
for note in bigram_corpus(grammar, 50, seed=7, prefix="q"):
    toks = normalize_text(note.text)[:62]
    pos = [p for p in range(1, len(toks))
           if toks[p - 1] in index and grammar.deterministic[index[toks[p - 1]]] and toks[p] != "."][:5]
    # one mask at a time: masking a neighbour would remove the context that fixes the word
    for p in pos:
        [(_, guess)] = mlm_infill(note.text, run.params, vocab, [p])
        hits += guess == toks[p]
        total += 1
print(f"infill accuracy on deterministic positions: {hits}/{total} = {hits / total:.3f}")

# fine-tune on planted notes written in the same grammar
pretrained = extend_positions(run.params, 128, seed=0)
train = planted_corpus(PlantedConfig(n_notes=args.n_train), seed=1)
dev = planted_corpus(PlantedConfig(n_notes=500, patient_prefix="D"), seed=2)
space = filter_labels(train.notes, 1, train.descriptions)


def labeled(notes):
    toks = [encode(normalize_text(n.text), vocab, n.note_id) for n in notes]
    return LabeledSet(toks, np.stack([label_vector(n.codes, space) for n in notes]))


tr, dv = labeled(train.notes), labeled(dev.notes)
scores = {"scratch": [], "pretrained": []}
for seed in range(args.seeds):
    for kind, enc in (("scratch", init_encoder(pretrained.config, seed=seed)), ("pretrained", pretrained.copy())):
        head = init_xml_head(len(space), 64, seed=seed, label_embeddings=semantic_label_init(space, enc, vocab))
        res = train_classifier(Classifier("xml", head, enc), tr, dv, space,
                               TrainHParams(epochs=3, batch_size=32, peak_lr=1e-3), seed)
        scores[kind].append(max(r["dev_micro_auc"] for r in res.metrics))
        print(f"seed {seed} {kind:10s} best dev micro-AUC {scores[kind][-1]:.4f}")
for kind, v in scores.items():
    print(f"{kind:10s} mean {np.mean(v):.4f}")

# one view of why: pretrained position embeddings rival token embeddings in size
norms = {k: float(np.linalg.norm(run.params[k].data, axis=1).mean()) for k in ("emb.token", "emb.position")}
print(f"mean row norm after pretraining: token {norms['emb.token']:.2f}, position {norms['emb.position']:.2f}")
