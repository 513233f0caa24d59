import dataclasses
import itertools

import numpy as np
import pytest

from fdcheck import central_diff, max_rel_error
from prototext.errors import InsufficientNegatives, InvalidConfig
from prototext.retrieval import CandidateSet, build_index
from prototext.selector import (
    SelectorModel,
    SelectorTrainConfig,
    build_augmented_dataset,
    encode_pair,
    margin_loss,
    margin_loss_grad,
    load_selector,
    save_selector,
    score_pair,
    select_top_n,
    train_selector,
)
from prototext.tabledata import Corpus, Sentence, Table
from prototext.vocab import Vocabulary


def table_of(*pairs):
    return Table.from_pairs(pairs)


def model_with(vocab, emb, w, b=0.0):
    return SelectorModel(
        vocab=vocab,
        embeddings=np.asarray(emb, dtype=np.float64),
        projection=np.asarray(w, dtype=np.float64),
        bias=float(b),
    )


def token_score_model(token_values: dict[str, float]):
    """Rig a model so f(table [('a','a')], [tok]) == token_values[tok].

    The pair sequence [a : a <sep> tok] has 5 positions; every row except
    the sentence token's is zero and w = (5,), so the mean contributes
    exactly E[tok] to the score.
    """
    vocab = Vocabulary.build([list(token_values)])
    emb = np.zeros((len(vocab), 1))
    for tok, value in token_values.items():
        emb[vocab.id(tok), 0] = value
    return model_with(vocab, emb, [5.0]), table_of(("a", "a"))


class TestEncodePair:
    def test_all_oov_collapses_to_unk_row(self):
        vocab = Vocabulary.build([["known"]])
        rng = np.random.default_rng(0)
        model = model_with(vocab, rng.normal(size=(len(vocab), 3)), np.zeros(3))
        h = encode_pair(model, table_of(("zzz", "qqq")), ["www", "rrr"])
        # every position maps to <unk> except ":" and the <sep> slot;
        # pooling sums rows in sorted-id order
        ids = sorted([0, 4, 0, 1, 0, 0])
        expected = model.embeddings[ids].mean(axis=0)
        np.testing.assert_array_equal(h, expected)

    def test_hand_mean_over_known_rows(self):
        vocab = Vocabulary.build([["t"]])  # ids: reserved 0..5, then t=6
        emb = np.zeros((7, 2))
        emb[0] = (0.0, 0.0)   # <unk>
        emb[1] = (4.0, 0.0)   # <sep>
        emb[4] = (2.0, 4.0)   # ":"
        emb[6] = (1.0, 2.0)   # t
        model = model_with(vocab, emb, np.zeros(2))
        # sequence ids: [unk, :, unk, <sep>, t] -> rows sum (7, 6) over 5
        h = encode_pair(model, table_of(("q", "z")), ["t"])
        np.testing.assert_allclose(h, [1.4, 1.2], atol=0)

    def test_sentence_permutation_invariance(self):
        vocab = Vocabulary.build([["u", "v", "w"]])
        rng = np.random.default_rng(1)
        model = model_with(vocab, rng.normal(size=(len(vocab), 4)), rng.normal(size=4))
        t = table_of(("name", "u"))
        h1 = encode_pair(model, t, ["u", "v", "w"])
        h2 = encode_pair(model, t, ["w", "u", "v"])
        np.testing.assert_array_equal(h1, h2)


class TestScorePair:
    def test_zero_projection_returns_bias(self):
        vocab = Vocabulary.build([["x"]])
        model = model_with(vocab, np.ones((len(vocab), 3)), np.zeros(3), b=0.7)
        assert score_pair(model, table_of(("a", "b")), ["x"]) == 0.7

    def test_direct_arithmetic(self):
        vocab = Vocabulary.build([["x"]])
        emb = np.tile([1.0, -1.0], (len(vocab), 1))
        model = model_with(vocab, emb, [2.0, 3.0])
        assert score_pair(model, table_of(("a", "b")), ["x"]) == pytest.approx(-1.0)

    def test_bit_identical_recomputation(self):
        rng = np.random.default_rng(2)
        vocab = Vocabulary.build([[f"w{i}" for i in range(10)]])
        model = model_with(vocab, rng.normal(size=(len(vocab), 8)), rng.normal(size=8), b=0.3)
        t = table_of(("name", "w1 w2"), ("genre", "w3"))
        s = ["w4", "w5", "w9"]
        assert score_pair(model, t, s) == score_pair(model, t, s)


class TestMarginLoss:
    def test_mixed_hinges(self):
        model, t = token_score_model({"y0": 2.0, "n1": 0.5, "n2": 1.5})
        loss = margin_loss(model, t, ["y0"], [["n1"], ["n2"]])
        assert loss == pytest.approx(0.5)

    def test_saturated_hinges_give_zero(self):
        model, t = token_score_model({"y0": 3.0, "n1": 0.5, "n2": 2.0})
        # second slack is exactly 0; the hinge stays inactive
        assert margin_loss(model, t, ["y0"], [["n1"], ["n2"]]) == 0.0

    def test_single_negative(self):
        model, t = token_score_model({"y0": 0.5, "n1": 0.7})
        assert margin_loss(model, t, ["y0"], [["n1"]]) == pytest.approx(1.2)

    def test_empty_negatives_rejected(self):
        model, t = token_score_model({"y0": 1.0})
        with pytest.raises(InvalidConfig):
            margin_loss(model, t, ["y0"], [])

    def test_nonnegative_and_zero_iff_margin_met(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            values = {f"t{i}": float(rng.normal()) for i in range(4)}
            model, t = token_score_model(values)
            negs = [["t1"], ["t2"], ["t3"]]
            loss = margin_loss(model, t, ["t0"], negs)
            assert loss >= 0.0
            margin_met = all(values["t0"] - values[f"t{j}"] >= 1.0 for j in (1, 2, 3))
            assert (loss == 0.0) == margin_met


def random_selector_setup(rng, v_total=50, d=8, k=5):
    content = [f"w{i}" for i in range(v_total - 6)]
    vocab = Vocabulary.build([content])
    assert len(vocab) == v_total
    model = model_with(
        vocab,
        rng.normal(size=(v_total, d)) * 0.5,
        rng.normal(size=d) * 0.5,
        b=float(rng.normal()),
    )
    words = lambda n: [content[i] for i in rng.integers(0, len(content), size=n)]
    t = Table.from_pairs([(" ".join(words(1)), " ".join(words(2))) for _ in range(2)])
    reference = words(int(rng.integers(2, 7)))
    negatives = [words(int(rng.integers(1, 8))) for _ in range(k)]
    return model, t, reference, negatives


class TestMarginLossGrad:
    def test_inactive_hinges_give_zero_gradients(self):
        model, t = token_score_model({"y0": 5.0, "n1": 0.0})
        g = margin_loss_grad(model, t, ["y0"], [["n1"]])
        assert not g.embeddings.any()
        assert not g.projection.any()
        assert g.bias == 0.0

    def test_bias_gradient_always_zero(self):
        model, t = token_score_model({"y0": 0.0, "n1": 2.0})
        g = margin_loss_grad(model, t, ["y0"], [["n1"]])
        assert g.bias == 0.0
        assert g.projection.any()

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        model, t, reference, negatives = random_selector_setup(rng)

        def loss():
            return margin_loss(model, t, reference, negatives)

        analytic = margin_loss_grad(model, t, reference, negatives)
        fd_emb = central_diff(loss, model.embeddings)
        fd_w = central_diff(loss, model.projection)
        assert max_rel_error(analytic.embeddings, fd_emb) < 1e-4
        assert max_rel_error(analytic.projection, fd_w) < 1e-4

    def test_bias_finite_difference_is_zero(self):
        rng = np.random.default_rng(7)
        model, t, reference, negatives = random_selector_setup(rng)
        eps = 1e-5
        hi = margin_loss(dataclasses.replace(model, bias=model.bias + eps), t, reference, negatives)
        lo = margin_loss(dataclasses.replace(model, bias=model.bias - eps), t, reference, negatives)
        assert abs((hi - lo) / (2 * eps)) < 1e-7


def tiny_training_setup(n_examples=6, n_cands=8):
    """Corpus where 'good'-style sentences resemble references and the
    rest carry a distinct noise word."""
    sentences = []
    sid = 0
    examples = []
    for i in range(n_examples):
        cand_ids = []
        for j in range(n_cands):
            if j % 2 == 0:
                text = f"item{i} is a fine thing number {j}"
            else:
                text = f"noise blob{i} junk chatter {j}"
            sentences.append(Sentence.from_text(sid, text))
            cand_ids.append(sid)
            sid += 1
        t = table_of(("name", f"item{i}"), ("kind", "thing"))
        cands = CandidateSet(i, tuple((c, 1.0 + 0.01 * (n_cands - k)) for k, c in enumerate(cand_ids)))
        examples.append((t, f"item{i} is a fine thing", cands))
    return Corpus(sentences), examples


class TestTrainSelector:
    def test_zero_epochs_returns_initialized_model(self):
        corpus, examples = tiny_training_setup()
        config = SelectorTrainConfig(epochs=0, seed=11, dim=4)
        model, losses = train_selector(examples, corpus, config)
        assert losses == []
        assert not model.projection.any()
        assert model.bias == 0.0
        assert np.all(np.abs(model.embeddings) < 0.1)

    def test_deterministic_under_seed(self):
        corpus, examples = tiny_training_setup()
        config = SelectorTrainConfig(epochs=3, seed=5, dim=4)
        m1, l1 = train_selector(examples, corpus, config)
        m2, l2 = train_selector(examples, corpus, config)
        assert l1 == l2
        assert np.array_equal(m1.embeddings, m2.embeddings)
        assert np.array_equal(m1.projection, m2.projection)
        assert m1.bias == m2.bias

    def test_loss_decreases_on_learnable_task(self):
        corpus, examples = tiny_training_setup()
        config = SelectorTrainConfig(epochs=10, seed=3, dim=8)
        _, losses = train_selector(examples, corpus, config)
        assert losses[-1] < losses[0]

    def test_insufficient_candidates_names_example(self):
        corpus, examples = tiny_training_setup(n_cands=3)
        config = SelectorTrainConfig(k=5, epochs=1, dim=4)
        with pytest.raises(InsufficientNegatives) as err:
            train_selector(examples, corpus, config)
        assert "0" in str(err.value)


def scored_candidates(token_values, corpus_start=0):
    """Corpus + candidate set where sentence i is the single token ti."""
    sentences = [
        Sentence.from_text(corpus_start + i, tok) for i, tok in enumerate(token_values)
    ]
    cands = CandidateSet(0, tuple((s.id, 1.0) for s in sentences))
    return Corpus(sentences), cands


class TestSelectTopN:
    def test_top_two_by_score(self):
        model, t = token_score_model({"r1": 0.9, "r2": 0.1, "r3": 0.5})
        corpus, cands = scored_candidates(["r1", "r2", "r3"])
        chosen = select_top_n(model, t, cands, corpus, 2)
        assert chosen.ids() == [0, 2]

    def test_n_larger_than_candidates(self):
        model, t = token_score_model({"r1": 0.9, "r2": 0.1})
        corpus, cands = scored_candidates(["r1", "r2"])
        chosen = select_top_n(model, t, cands, corpus, 10)
        assert chosen.ids() == [0, 1]
        assert len(chosen) == 2

    def test_ties_break_to_lower_id(self):
        model, t = token_score_model({"r1": 0.4})
        corpus, cands = scored_candidates(["r1", "r1", "r1"])
        chosen = select_top_n(model, t, cands, corpus, 2)
        assert chosen.ids() == [0, 1]

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_bruteforce_subset_argmax(self, seed):
        rng = np.random.default_rng(200 + seed)
        n_cands = int(rng.integers(2, 9))
        n = int(rng.integers(1, 5))
        values = {f"c{i}": float(rng.normal()) for i in range(n_cands)}
        model, t = token_score_model(values)
        corpus, cands = scored_candidates(list(values))
        got = select_top_n(model, t, cands, corpus, n)

        size = min(n, n_cands)
        best_ids, best_total = None, -np.inf
        for combo in itertools.combinations(cands.entries, size):
            total = sum(
                score_pair(model, t, corpus.get(sid).tokens) for sid, _ in combo
            )
            if total > best_total:
                best_total, best_ids = total, {sid for sid, _ in combo}
        assert set(got.ids()) == best_ids
        scores = [s for _, s in got.entries]
        assert scores == sorted(scores, reverse=True)

    def test_bias_shift_leaves_selection_unchanged(self):
        rng = np.random.default_rng(9)
        values = {f"c{i}": float(rng.normal()) for i in range(6)}
        model, t = token_score_model(values)
        corpus, cands = scored_candidates(list(values))
        shifted = dataclasses.replace(model, bias=model.bias + 17.5)
        assert select_top_n(model, t, cands, corpus, 3).ids() == \
            select_top_n(shifted, t, cands, corpus, 3).ids()


class TestAugmentedDataset:
    def test_records_align_with_examples(self):
        corpus, examples = tiny_training_setup()
        from prototext.tabledata import Example

        exs = [Example(i, t, ref) for i, (t, ref, _) in enumerate(examples)]
        index = build_index(corpus)
        config = SelectorTrainConfig(epochs=1, seed=1, dim=4)
        triples = [
            (t, ref, cands) for (t, ref, cands) in examples
        ]
        model, _ = train_selector(triples, corpus, config)
        records = build_augmented_dataset(exs, index, model, corpus, m=10, n=3)
        assert len(records) == len(exs)
        for rec, ex in zip(records, exs):
            assert rec.table_id == ex.id
            assert len(rec.prototype_ids) <= 3
            assert all(corpus.get(sid).text in rec.prototypes for sid in rec.prototype_ids)

    def test_zero_candidates_give_empty_prototypes(self):
        from prototext.tabledata import Example

        corpus = Corpus([Sentence.from_text(0, "completely unrelated words")])
        index = build_index(corpus)
        vocab = Vocabulary.build([["qq"]])
        model = model_with(vocab, np.zeros((len(vocab), 2)), np.zeros(2))
        ex = Example(0, table_of(("name", "zzz")), "zzz sentence")
        records = build_augmented_dataset([ex], index, model, corpus, m=5, n=3)
        assert records[0].prototype_ids == ()
        assert records[0].prototypes == ()


class TestSelectorPersistence:
    def test_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(4)
        model, t, reference, negatives = random_selector_setup(rng)
        path = tmp_path / "selector.json"
        save_selector(path, model)
        loaded = load_selector(path)
        assert np.array_equal(loaded.embeddings, model.embeddings)
        assert np.array_equal(loaded.projection, model.projection)
        assert loaded.bias == model.bias
        assert loaded.vocab.tokens == model.vocab.tokens
        for sent in negatives:
            assert score_pair(loaded, t, sent) == score_pair(model, t, sent)
