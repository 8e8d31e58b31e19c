"""Pre-training stages: pooling, pair features, both training loops."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrnmt import tensor as T
from hdrnmt.data import (
    NLIExample,
    SynsetPair,
    build_vocab,
    generate_synthetic_nli,
)
from hdrnmt.errors import DataError
from hdrnmt.layers import padding_mask
from hdrnmt.pretrain import (
    SrHead,
    build_encoder,
    representation_diagnostics,
    sr_evaluate,
    sr_forward,
    sr_train,
    sum_pool,
    wdr_loss,
    wdr_train,
)
from hdrnmt.tensor import Tensor


class TestSumPool:
    def test_definition(self):
        out = sum_pool(Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_single_row(self):
        out = sum_pool(Tensor([[5.0, -1.0]]))
        np.testing.assert_array_equal(out.data, [5.0, -1.0])

    def test_empty_sequence(self):
        with pytest.raises(DataError):
            sum_pool(Tensor(np.zeros((0, 4))))

    @given(st.permutations(range(5)))
    @settings(max_examples=20, deadline=None)
    def test_permutation_invariance(self, perm):
        rng = np.random.default_rng(1)
        rows = rng.normal(size=(5, 3))
        base = sum_pool(Tensor(rows)).data
        shuffled = sum_pool(Tensor(rows[list(perm)])).data
        np.testing.assert_allclose(shuffled, base, atol=1e-6)


def tiny_sr_setup(seed=0, d_model=16):
    corpus = generate_synthetic_nli(60, seed=seed)
    sentences = [" ".join(ex.premise) for ex in corpus] + \
                [" ".join(ex.hypothesis) for ex in corpus]
    vocab = build_vocab(sentences)
    encoder = build_encoder(len(vocab), d_model=d_model, n_heads=2, n_layers=1,
                            d_ff=32, max_len=16, dropout=0.0, seed=seed)
    head = SrHead(d_model, np.random.default_rng(seed))
    return corpus, vocab, encoder, head


class TestSrForward:
    def test_identical_sentences_zero_feature(self):
        _, vocab, encoder, head = tiny_sr_setup()
        ex = NLIExample(["w1", "w2"], ["w1", "w2"], 1)
        logits, _ = sr_forward(ex, encoder, head, vocab)
        # |h_A - h_B| is exactly zero, so the logits are the head bias
        np.testing.assert_array_equal(logits.data, head.b.data)

    def test_swap_symmetry_bitwise(self):
        corpus, vocab, encoder, head = tiny_sr_setup()
        ex = corpus[0]
        a, _ = sr_forward(ex, encoder, head, vocab)
        b, _ = sr_forward(NLIExample(ex.hypothesis, ex.premise, ex.label),
                          encoder, head, vocab)
        assert a.data.tobytes() == b.data.tobytes()

    def test_feature_is_absolute_difference(self):
        h_a = Tensor([1.0, 2.0])
        h_b = Tensor([3.0, 1.0])
        feature = T.absolute(T.sub(h_a, h_b))
        np.testing.assert_array_equal(feature.data, [2.0, 1.0])


class TestSrTrain:
    def test_untrained_accuracy_near_chance(self):
        corpus, vocab, encoder, head = tiny_sr_setup(seed=2)
        _, acc = sr_evaluate(corpus, encoder, head, vocab)
        assert 0.15 <= acc <= 0.55

    def test_learns_separable_set(self):
        corpus, vocab, encoder, head = tiny_sr_setup(seed=3)
        result = sr_train(corpus, encoder, head, vocab, epochs=12, seed=3,
                          lr=2e-3, patience=None)
        assert result.history[-1]["heldout_accuracy"] >= 0.8

    def test_same_seed_identical_loss_curves(self):
        runs = []
        for _ in range(2):
            corpus, vocab, encoder, head = tiny_sr_setup(seed=4)
            result = sr_train(corpus, encoder, head, vocab, epochs=3, seed=4,
                              patience=None)
            runs.append([r["train_loss"] for r in result.history])
        assert runs[0] == runs[1]

    def test_empty_corpus(self):
        _, vocab, encoder, head = tiny_sr_setup()
        with pytest.raises(DataError):
            sr_train([], encoder, head, vocab, epochs=1, seed=0)


class _StubEncoder:
    """Returns scripted states so pair losses can be engineered exactly."""

    def __init__(self, batches):
        self.batches = [np.asarray(b, dtype=np.float32) for b in batches]
        self.calls = 0

    def forward(self, ids, mask=None, train=False, rng=None):
        out = Tensor(self.batches[self.calls])
        self.calls += 1
        return out


def make_pair(tokens_o, tokens_e, i, j, sid="s0"):
    return SynsetPair(tokens_o, tokens_e, i, j, sid)


class TestWdrLoss:
    def test_identical_pair_zero(self):
        vocab = build_vocab(["hw filler"])
        encoder = build_encoder(len(vocab), d_model=8, n_heads=2, n_layers=1,
                                d_ff=16, max_len=8, dropout=0.0, seed=5)
        pair = make_pair(["hw", "filler"], ["hw", "filler"], 0, 0)
        loss = wdr_loss([pair], encoder, vocab)
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_engineered_batch_mean(self):
        # one pair at cosine distance 1, one at 0 -> batch loss 0.5
        states_o = [[[1.0, 0.0], [9.0, 9.0]], [[0.0, 2.0], [9.0, 9.0]]]
        states_e = [[[0.0, 3.0], [9.0, 9.0]], [[0.0, 5.0], [9.0, 9.0]]]
        stub = _StubEncoder([states_o, states_e])
        vocab = build_vocab(["a b"])
        pairs = [make_pair(["a", "b"], ["a", "b"], 0, 0),
                 make_pair(["b", "a"], ["b", "a"], 0, 0)]
        loss = wdr_loss(pairs, stub, vocab)
        assert loss.item() == pytest.approx(0.5, abs=1e-6)

    def test_loss_in_range(self):
        vocab = build_vocab(["hw x y z"])
        encoder = build_encoder(len(vocab), d_model=8, n_heads=2, n_layers=1,
                                d_ff=16, max_len=8, dropout=0.0, seed=6)
        pairs = [make_pair(["hw", "x"], ["y", "hw"], 0, 1),
                 make_pair(["z", "hw"], ["hw", "z"], 1, 0)]
        loss = wdr_loss(pairs, encoder, vocab).item()
        assert 0.0 <= loss <= 2.0

    def test_empty_batch(self):
        vocab = build_vocab(["a"])
        encoder = build_encoder(len(vocab), d_model=8, n_heads=2, n_layers=1,
                                d_ff=16, max_len=8, dropout=0.0)
        with pytest.raises(DataError):
            wdr_loss([], encoder, vocab)


def tiny_wdr_setup(seed=7, n_pairs=10):
    rng = np.random.default_rng(seed)
    fillers = [f"f{k}" for k in range(12)]
    pairs = []
    for k in range(n_pairs):
        sid = f"s{k % 2}"
        mk = lambda: [f"cue{k % 2}"] + [fillers[i] for i in rng.integers(0, 12, 3)] + ["hw"]
        o, e = mk(), mk()
        pairs.append(SynsetPair(o, e, len(o) - 1, len(e) - 1, sid))
    sentences = [" ".join(p.original) for p in pairs] + \
                [" ".join(p.example) for p in pairs]
    vocab = build_vocab(sentences)
    encoder = build_encoder(len(vocab), d_model=16, n_heads=2, n_layers=1,
                            d_ff=32, max_len=12, dropout=0.0, seed=seed)
    return pairs, vocab, encoder


class TestWdrTrain:
    def test_zero_steps_leaves_encoder_unchanged(self):
        pairs, vocab, encoder = tiny_wdr_setup()
        before = {n: p.data.tobytes() for n, p in encoder.named_parameters()}
        wdr_train(pairs, encoder, vocab, steps=0, seed=1)
        after = {n: p.data.tobytes() for n, p in encoder.named_parameters()}
        assert before == after

    def test_small_steps_descend_on_fixed_pair(self):
        pairs, vocab, encoder = tiny_wdr_setup(seed=8)
        pair = [pairs[0]]
        losses = [wdr_loss(pair, encoder, vocab).item()]
        result = wdr_train(pair, encoder, vocab, steps=10, seed=2, lr=1e-4,
                           batch_size=1)
        losses += result.loss_curve
        for earlier, later in zip(losses, losses[1:]):
            assert later <= earlier + 1e-5

    def test_loss_drops_and_diagnostics_reported(self):
        pairs, vocab, encoder = tiny_wdr_setup(seed=9, n_pairs=16)
        first = wdr_loss(pairs, encoder, vocab).item()
        result = wdr_train(pairs, encoder, vocab, steps=60, seed=3, lr=1e-3)
        assert result.loss_curve[-1] < first
        diag = result.diagnostics
        assert set(diag) == {"within_sense_similarity", "cross_sense_similarity",
                             "unrelated_token_similarity"}

    def test_empty_set(self):
        _, vocab, encoder = tiny_wdr_setup()
        with pytest.raises(DataError):
            wdr_train([], encoder, vocab, steps=1, seed=0)
