"""CLS, label-wise attention and GRU baseline heads, logistic regression, fine-tuning loop."""

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icdxml import numerics as nx
from icdxml.cohort import LabelSpace
from icdxml.corpus import CLS, SEP, TokenizedNote, build_vocab, chunk_note, make_chunk, normalize_text
from icdxml.encoder import EncoderConfig, encoder_forward, init_encoder
from icdxml.heads import (
    Classifier,
    LabeledSet,
    MultiHeadConfig,
    TrainHParams,
    bow_features,
    bow_logreg,
    cls_head_forward,
    content_mask,
    init_cls_head,
    init_multihead,
    init_xml_head,
    multihead_baseline_forward,
    multihead_logits,
    multihead_pool_logits,
    semantic_label_init,
    train_classifier,
    xml_head_forward,
    xml_head_logits,
)
from icdxml.heads.logreg import BowLogRegParams, LogRegHParams
from icdxml.numerics import Tensor, grad_check


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def xml_params(labels, wb=None, wa=None):
    labels = np.asarray(labels, dtype=np.float64)
    m, d = labels.shape
    wb = np.eye(d) if wb is None else np.asarray(wb, dtype=np.float64)
    wa = np.ones((1, wb.shape[0])) if wa is None else np.asarray(wa, dtype=np.float64)
    return {"xml.labels": Tensor(labels), "xml.wb": Tensor(wb), "xml.wa": Tensor(wa)}


class TestClsHead:
    def test_zero_weights(self):
        head = {"cls.weight": Tensor(np.zeros((3, 4)))}
        np.testing.assert_array_equal(cls_head_forward(np.ones(4), head), [0.5] * 3)

    def test_hand_value_and_symmetry(self):
        head = {"cls.weight": Tensor(np.array([[1.0, 1.0]]))}
        (p,) = cls_head_forward(np.array([1.0, 1.0]), head)
        (q,) = cls_head_forward(np.array([-1.0, -1.0]), head)
        assert abs(p - 0.8807970779778823) < 1e-7
        assert abs(q - (1 - p)) < 1e-7

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cls_head_forward(np.ones(3), init_cls_head(2, 4))

    def test_gradient(self):
        rng = np.random.default_rng(0)
        h, y = rng.normal(size=(4, 5)), rng.integers(0, 2, size=(4, 3))
        f = lambda w, x: nx.bce_with_logits(x @ w.T, y)
        assert grad_check(f, [rng.normal(size=(3, 5)), h]) < 1e-4


class TestXmlHead:
    def test_identical_states_uniform(self):
        probs, attn = xml_head_forward(np.tile([0.3, -1.2, 2.0], (5, 1)), np.ones(5), xml_params(np.eye(3)[:2]))
        np.testing.assert_allclose(attn, 0.2, atol=1e-12)

    def test_hand_example(self):
        h = np.array([[1.0, 0.0], [0.0, 1.0]])
        head = xml_params([[1.0, 0.0]])
        probs, attn = xml_head_forward(h, np.ones(2), head)
        e = math.e
        np.testing.assert_allclose(attn[0], [e / (e + 1), 1 / (e + 1)], atol=1e-12)
        c = attn[0] @ h
        np.testing.assert_allclose(c, [0.7310585786, 0.2689414214], atol=1e-9)
        # W_b = I and W_a = [1, 1]: y = sigma(relu(c) summed)
        assert abs(probs[0] - sig(c.sum())) < 1e-12

    def test_zero_wa(self):
        rng = np.random.default_rng(1)
        head = xml_params(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), np.zeros((1, 5)))
        probs, _ = xml_head_forward(rng.normal(size=(7, 3)), np.ones(7), head)
        np.testing.assert_array_equal(probs, 0.5)

    def test_all_masked(self):
        with pytest.raises(ValueError):
            xml_head_forward(np.ones((3, 2)), np.zeros(3), xml_params([[1.0, 0.0]]))

    @given(st.integers(0, 2**31), st.integers(1, 9))
    @settings(max_examples=40, deadline=None)
    def test_rows_normalized_and_mask_exact(self, seed, n):
        rng = np.random.default_rng(seed)
        mask = rng.random(n) < 0.6
        mask[rng.integers(n)] = True
        head = xml_params(rng.normal(size=(6, 4)) * 3, rng.normal(size=(4, 4)))
        _, attn = xml_head_forward(rng.normal(size=(n, 4)) * 3, mask, head)
        np.testing.assert_allclose(attn.sum(-1), 1.0, atol=1e-6)
        assert np.all(attn[:, ~mask] == 0.0)

    def test_orthogonal_shift(self):
        rng = np.random.default_rng(2)
        labels = np.zeros((2, 4))
        labels[:, :2] = rng.normal(size=(2, 2))
        shift = np.array([0.0, 0.0, 1.5, -2.0])  # orthogonal to every label vector
        h = rng.normal(size=(6, 4))
        _, a = xml_head_forward(h, np.ones(6), xml_params(labels))
        _, b = xml_head_forward(h + shift, np.ones(6), xml_params(labels))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        head = xml_params(rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(1, 5)))
        h = rng.normal(size=(2, 6, 4))
        mask = np.array([[1, 1, 1, 1, 0, 0], [1] * 6], dtype=bool)
        logits, attn = xml_head_logits(Tensor(h), mask, head)
        for i in range(2):
            p, a = xml_head_forward(h[i], mask[i], head)
            np.testing.assert_allclose(nx.sigmoid(logits).data[i], p, atol=1e-12)
            np.testing.assert_allclose(attn[i], a, atol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        b, n, d, m, da = 2, 5, 4, 3, 6
        mask = np.ones((b, n), dtype=bool)
        mask[0, 3:] = False
        y = rng.integers(0, 2, size=(b, m))

        def f(h, labels, wb, wa):
            logits, _ = xml_head_logits(h, mask, {"xml.labels": labels, "xml.wb": wb, "xml.wa": wa})
            return nx.bce_with_logits(logits, y)

        point = [rng.normal(size=(b, n, d)), rng.normal(size=(m, d)),
                 rng.normal(size=(da, d)), rng.normal(size=(1, da))]
        assert grad_check(f, point) < 1e-4

    def test_init_shapes(self):
        head = init_xml_head(7, 8, attn_hidden=5)
        assert head["xml.labels"].shape == (7, 8) and head["xml.wb"].shape == (5, 8) and head["xml.wa"].shape == (1, 5)
        with pytest.raises(ValueError):
            init_xml_head(7, 8, label_embeddings=np.zeros((6, 8)))


class TestSemanticInit:
    vocab = build_vocab(normalize_text("fever cough pain chest heart failure acute chronic") * 2, 20)
    cfg = EncoderConfig(hidden_size=16, num_heads=2, intermediate_size=32, max_len=16, vocab_size=len(vocab))

    def space(self, descriptions):
        codes = [f"C{i}" for i in range(len(descriptions))]
        return LabelSpace(codes, dict(zip(codes, descriptions)))

    def recompute(self, params, text):
        """Mean of last-layer states over the content positions, computed independently."""
        ids = [self.vocab.id(t) for t in normalize_text(text)]
        chunk = make_chunk(ids, self.cfg.max_len)
        h = encoder_forward(params, chunk).hidden.data.astype(np.float64)
        rows = [h[1 + k] for k, t in enumerate(ids) if t >= 5]
        return np.sum(rows, axis=0) / len(rows)

    def test_matches_independent_mean(self):
        params = init_encoder(self.cfg, seed=4)
        texts = ["acute heart failure", "chest pain", "fever"]
        got = semantic_label_init(self.space(texts), params, self.vocab)
        for j, text in enumerate(texts):
            np.testing.assert_allclose(got[j], self.recompute(params, text), atol=1e-6)

    def test_single_token_exact(self):
        params = init_encoder(self.cfg, seed=5)
        got = semantic_label_init(self.space(["cough"]), params, self.vocab)
        h = encoder_forward(params, make_chunk([self.vocab.id("cough")], self.cfg.max_len)).hidden.data
        np.testing.assert_array_equal(got[0], h[1])

    def test_identical_descriptions(self):
        got = semantic_label_init(self.space(["chest pain", "chest pain"]), init_encoder(self.cfg), self.vocab)
        np.testing.assert_array_equal(got[0], got[1])

    def test_unknown_tokens_skipped(self):
        params = init_encoder(self.cfg, seed=6)
        got = semantic_label_init(self.space(["zzz chest qqq pain"]), params, self.vocab)
        ids = [self.vocab.id(t) for t in normalize_text("zzz chest qqq pain")]
        h = encoder_forward(params, make_chunk(ids, self.cfg.max_len)).hidden.data
        np.testing.assert_allclose(got[0], (h[2] + h[4]) / 2, atol=1e-6)

    def test_fallback_logged(self, caplog):
        with caplog.at_level(logging.WARNING):
            got = semantic_label_init(self.space(["", "zzz"]), init_encoder(self.cfg), self.vocab)
        assert "random label init for 2 codes" in caplog.text
        assert np.abs(got).max() <= 2 * self.cfg.initializer_range

    def test_raw_embedding_variant(self):
        params = init_encoder(self.cfg, seed=7)
        got = semantic_label_init(self.space(["heart failure"]), params, self.vocab, contextual=False)
        table = params["emb.token"].data
        np.testing.assert_allclose(got[0], (table[self.vocab.id("heart")] + table[self.vocab.id("failure")]) / 2,
                                   atol=1e-7)


class TestMultiHead:
    cfg = MultiHeadConfig(vocab_size=9, num_labels=3, embed_dim=3, gru_hidden=2, num_heads=2, embed_dropout=0.0)

    def test_identical_states(self):
        d_h = 4
        cfg = MultiHeadConfig(vocab_size=5, num_labels=1, gru_hidden=d_h, num_heads=3)
        rng = np.random.default_rng(0)
        h = rng.normal(size=2 * d_h)
        params = {"mh.queries": Tensor(rng.normal(size=(3, 2 * d_h))), "mh.wa": Tensor(np.zeros((1, 3 * 2 * d_h)))}
        states = Tensor(np.tile(h, (1, 5, 1)))
        logits, attn = multihead_pool_logits(states, np.ones((1, 5)), params, cfg)
        np.testing.assert_allclose(attn, 0.2, atol=1e-12)
        # recover the pooled context through a one-hot output row
        for idx in range(2 * d_h):
            wa = np.zeros((1, 3 * 2 * d_h))
            wa[0, idx] = 1.0
            params["mh.wa"] = Tensor(wa)
            out, _ = multihead_pool_logits(states, np.ones((1, 5)), params, cfg)
            assert abs(out.data[0, 0] - h[idx] / math.sqrt(d_h)) < 1e-12

    def test_zero_output_weights(self):
        params = init_multihead(self.cfg)
        params["mh.wa"].data[:] = 0
        np.testing.assert_array_equal(multihead_baseline_forward([5, 6, 7], params, self.cfg), 0.5)

    def test_hand_evaluation(self):
        # K=1, two positions, d_h=1 so the states are 2-dim
        cfg = MultiHeadConfig(vocab_size=5, num_labels=1, gru_hidden=1, num_heads=1)
        h = np.array([[0.5, -1.0], [2.0, 0.25]])
        q = np.array([0.3, 0.7])
        wa = np.array([[1.5, -0.5]])
        params = {"mh.queries": Tensor(q[None]), "mh.wa": Tensor(wa)}
        logits, _ = multihead_pool_logits(Tensor(h[None]), np.ones((1, 2)), params, cfg)
        s = [0.5 * 0.3 - 1.0 * 0.7, 2.0 * 0.3 + 0.25 * 0.7]
        a = [math.exp(v) / (math.exp(s[0]) + math.exp(s[1])) for v in s]
        c = [(a[0] * h[0, k] + a[1] * h[1, k]) / 1.0 for k in range(2)]
        assert abs(sig(logits.data[0, 0]) - sig(1.5 * c[0] - 0.5 * c[1])) < 1e-6

    def test_scale_flag(self):
        cfg = MultiHeadConfig(vocab_size=5, num_labels=1, gru_hidden=4, num_heads=1, scale_context=False)
        h = np.tile(np.arange(8.0), (1, 3, 1))
        params = {"mh.queries": Tensor(np.ones((1, 8))), "mh.wa": Tensor(np.eye(8)[:1])}
        out, _ = multihead_pool_logits(Tensor(h), np.ones((1, 3)), params, cfg)
        assert out.data[0, 0] == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            multihead_baseline_forward([], init_multihead(self.cfg), self.cfg)

    def test_padding_carries_state(self):
        params = init_multihead(self.cfg, seed=2)
        a = multihead_baseline_forward([5, 6, 7], params, self.cfg)
        b = multihead_baseline_forward([5, 6, 7, 0, 0], params, self.cfg, mask=[1, 1, 1, 0, 0])
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_gradient(self):
        params = init_multihead(self.cfg, seed=1, dtype=np.float64)
        names = list(params)
        ids = np.array([[5, 6, 7, 8], [8, 2, 6, 0]])
        mask = np.array([[1, 1, 1, 1], [1, 1, 1, 0]])
        y = np.array([[1, 0, 1], [0, 0, 1]])

        def f(*tensors):
            logits, _ = multihead_logits(ids, mask, dict(zip(names, tensors)), self.cfg)
            return nx.bce_with_logits(logits, y)

        assert grad_check(f, [params[k].data for k in names]) < 1e-4


class TestLogReg:
    def test_zero_weights(self):
        p = BowLogRegParams(np.zeros((2, 6)), np.zeros(2))
        np.testing.assert_array_equal(p.predict_ids([1, 2, 3]), [0.5, 0.5])

    def test_separable_feature(self):
        rng = np.random.default_rng(0)
        docs = [list(rng.integers(1, 10, size=8)) for _ in range(60)]
        y = (rng.random(60) < 0.4).astype(int)
        docs = [d + [12] if t else d for d, t in zip(docs, y)]
        p = bow_logreg(bow_features(docs, 13), y[:, None], LogRegHParams(lr=5.0, max_epochs=2000, tol=1e-7))
        assert p.weight[0, 12] > 0 and p.weight[0, 12] == p.weight[0].max()
        scores = p.predict(bow_features(docs, 13))[:, 0]
        assert scores[y == 1].min() > scores[y == 0].max()

    def test_defaults_separate_long_notes(self):
        # one trigger among ~60 filler tokens: the defaults must not stall before ranking it first
        rng = np.random.default_rng(1)
        y = (rng.random(300) < 0.3).astype(int)
        docs = [list(rng.integers(1, 40, size=60)) + ([45] if t else []) for t in y]
        p = bow_logreg(bow_features(docs, 46), y[:, None])
        scores = p.predict(bow_features(docs, 46))[:, 0]
        assert scores[y == 1].min() > scores[y == 0].max()

    @given(st.lists(st.integers(0, 7), min_size=1, max_size=20), st.randoms())
    def test_order_invariant(self, ids, rnd):
        rng = np.random.default_rng(len(ids))
        p = BowLogRegParams(rng.normal(size=(3, 8)), rng.normal(size=3))
        shuffled = list(ids)
        rnd.shuffle(shuffled)
        np.testing.assert_allclose(p.predict_ids(ids), p.predict_ids(shuffled), rtol=1e-12)


def toy_task(n=24, seed=0):
    """Label 0 fires on token 7, label 1 on token 8."""
    rng = np.random.default_rng(seed)
    notes, labels = [], []
    for i in range(n):
        ids = list(rng.integers(9, 20, size=int(rng.integers(4, 12))))
        y = rng.random(2) < 0.5
        for j in np.flatnonzero(y):
            ids.insert(int(rng.integers(len(ids) + 1)), 7 + j)
        notes.append(TokenizedNote(f"n{i}", [str(t) for t in ids], ids, 0))
        labels.append(y.astype(int))
    return LabeledSet(notes, np.array(labels))


class TestTraining:
    cfg = EncoderConfig(hidden_size=16, num_heads=2, intermediate_size=32, max_len=16, vocab_size=20)
    space = LabelSpace(["A", "B"])

    def model(self, kind="xml", seed=0):
        if kind == "multihead":
            mh = MultiHeadConfig(vocab_size=20, num_labels=2, embed_dim=4, gru_hidden=3, num_heads=2)
            return Classifier("multihead", init_multihead(mh, seed), multihead=mh, max_len=8)
        enc = init_encoder(self.cfg, seed)
        head = init_xml_head(2, 16, seed=seed) if kind == "xml" else init_cls_head(2, 16, seed)
        return Classifier(kind, head, enc)

    def test_chunks_inherit_labels(self):
        data = toy_task()
        chunks, ys = data.chunks(8)
        owners = [c.origin[0] for c in chunks]
        index = {n.note_id: i for i, n in enumerate(data.notes)}
        assert len(chunks) > len(data.notes)
        np.testing.assert_array_equal(ys, data.labels[[index[o] for o in owners]])

    @pytest.mark.parametrize("kind", ["xml", "cls", "multihead"])
    def test_one_step_moves_head(self, kind):
        m = self.model(kind)
        before = {k: v.data.copy() for k, v in m.head.items()}
        data = toy_task(4)
        train_classifier(m, data, data, self.space, TrainHParams(epochs=1, batch_size=64, peak_lr=1e-2))
        assert any(not np.array_equal(before[k], v.data) for k, v in m.head.items())

    def test_same_seed_same_metrics(self):
        data, dev = toy_task(16, 1), toy_task(12, 2)
        hp = TrainHParams(epochs=2, batch_size=8, peak_lr=1e-2)
        a = train_classifier(self.model(), data, dev, self.space, hp, seed=3)
        b = train_classifier(self.model(), data, dev, self.space, hp, seed=3)
        assert a.metrics == b.metrics and a.step_losses == b.step_losses

    def test_learns_toy_task(self):
        data, dev = toy_task(96, 1), toy_task(40, 2)
        res = train_classifier(self.model(), data, dev, self.space,
                               TrainHParams(epochs=4, batch_size=8, peak_lr=1e-2), seed=0)
        assert max(r["dev_micro_auc"] for r in res.metrics) > 0.95
        assert res.best_epoch == 1 + int(np.argmax([r["dev_micro_auc"] for r in res.metrics]))

    def test_non_finite_aborts(self):
        m = self.model()
        m.head["xml.wa"].data[:] = np.nan
        data = toy_task(4)
        with pytest.raises(FloatingPointError):
            train_classifier(m, data, data, self.space, TrainHParams(epochs=1))

    def test_note_prediction_is_chunk_max(self):
        m = self.model(seed=4)
        note = TokenizedNote("x", [], list(range(9, 20)) * 2 + [7, 8], 0)
        chunk_scores = m.predict_chunks(chunk_note(note, 16))
        assert len(chunk_scores) == 2
        np.testing.assert_array_equal(m.predict_notes([note])[0], chunk_scores.max(axis=0))

    def test_content_mask(self):
        ids = np.array([[CLS, 9, 10, SEP, 0], [CLS, SEP, 0, 0, 0]])
        mask = (ids != 0).astype(int)
        np.testing.assert_array_equal(content_mask(ids, mask), [[0, 1, 1, 0, 0], [1, 1, 0, 0, 0]])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Classifier("lstm", {})
