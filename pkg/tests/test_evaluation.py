"""BLEU, sense-accuracy protocol, heatmaps, vector exports."""

import math
from collections import Counter

import numpy as np
import pytest

from hdrnmt.data import (
    EvalHomographList,
    HomographAnnotation,
    Mark,
    Sense,
    build_vocab,
)
from hdrnmt.errors import AlignmentError, DataError
from hdrnmt.evaluation import (
    BleuReport,
    bleu,
    bleu_tokenize,
    centroid_separation,
    export_token_vectors,
    homograph_prf,
    pca_project,
    similarity_heatmap,
)
from hdrnmt.pretrain import build_encoder


def reference_bleu(hypotheses, references):
    """Independent from-definition corpus BLEU used as the cross-check oracle.

    Plain-split tokenization (inputs in these tests carry no punctuation),
    per-sentence clipped n-gram counting, exponential smoothing where the
    k-th zero-match order scores 1/(2^k * total), brevity penalty
    exp(1 - r/c) for short output.
    """
    match = {1: 0, 2: 0, 3: 0, 4: 0}
    seen = {1: 0, 2: 0, 3: 0, 4: 0}
    c_len = r_len = 0
    for hyp, ref in zip(hypotheses, references):
        h = hyp.split()
        r = ref.split()
        c_len += len(h)
        r_len += len(r)
        for n in (1, 2, 3, 4):
            h_counts = Counter(zip(*[h[i:] for i in range(n)])) if len(h) >= n else Counter()
            r_counts = Counter(zip(*[r[i:] for i in range(n)])) if len(r) >= n else Counter()
            seen[n] += max(len(h) - n + 1, 0)
            for gram, cnt in h_counts.items():
                match[n] += min(cnt, r_counts.get(gram, 0))
    fractions = []
    zeros = 0
    for n in (1, 2, 3, 4):
        if seen[n] == 0:
            return 0.0
        if match[n] == 0:
            zeros += 1
            fractions.append(1.0 / (2 ** zeros * seen[n]))
        else:
            fractions.append(match[n] / seen[n])
    if c_len == 0:
        return 0.0
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * bp * math.exp(sum(math.log(f) for f in fractions) / 4.0)


def random_corpus(rng, n_sentences, overlap):
    vocab = list("abcdefgh")
    hyps, refs = [], []
    for _ in range(n_sentences):
        ref = [vocab[k] for k in rng.integers(0, len(vocab), rng.integers(4, 13))]
        if rng.random() < overlap:
            hyp = list(ref)
            for _ in range(int(rng.integers(0, 4))):
                hyp[int(rng.integers(0, len(hyp)))] = vocab[int(rng.integers(0, len(vocab)))]
        else:
            hyp = [vocab[k] for k in rng.integers(0, len(vocab), rng.integers(1, 13))]
        hyps.append(" ".join(hyp))
        refs.append(" ".join(ref))
    return hyps, refs


class TestBleu:
    def test_perfect_match_is_100(self):
        refs = ["the cat sat on the mat", "a stitch in time saves nine"]
        report = bleu(refs, refs)
        assert report.score == pytest.approx(100.0, abs=1e-9)
        assert report.brevity_penalty == 1.0

    def test_hand_case(self):
        report = bleu(["a b c d"], ["a b c d e"])
        assert report.precisions == [100.0, 100.0, 100.0, 100.0]
        assert report.brevity_penalty == pytest.approx(math.exp(1 - 5 / 4), abs=1e-9)
        assert report.score == pytest.approx(77.88, abs=0.01)

    def test_count_mismatch(self):
        with pytest.raises(AlignmentError):
            bleu(["a"], ["a", "b"])

    def test_matches_independent_oracle_on_random_cases(self):
        rng = np.random.default_rng(1234)
        for case in range(20):
            hyps, refs = random_corpus(rng, int(rng.integers(1, 8)),
                                       overlap=float(rng.random()))
            ours = bleu(hyps, refs).score
            want = reference_bleu(hyps, refs)
            assert ours == pytest.approx(want, abs=0.1), f"case {case}"

    def test_score_recomputable_from_fields(self):
        rng = np.random.default_rng(7)
        hyps, refs = random_corpus(rng, 5, overlap=0.8)
        r = bleu(hyps, refs)
        if all(p > 0 for p in r.precisions):
            recomputed = r.brevity_penalty * math.exp(
                sum(math.log(p) for p in r.precisions) / 4
            )
            assert r.score == pytest.approx(recomputed, abs=1e-9)

    def test_range_and_reference_replacement_monotonicity(self):
        rng = np.random.default_rng(99)
        for _ in range(30):
            hyps, refs = random_corpus(rng, int(rng.integers(2, 6)),
                                       overlap=float(rng.random()))
            base = bleu(hyps, refs).score
            assert 0.0 <= base <= 100.0
            k = int(rng.integers(0, len(hyps)))
            better = list(hyps)
            better[k] = refs[k]
            assert bleu(better, refs).score >= base - 1e-9

    def test_zero_overlap_smoothing(self):
        report = bleu(["x y z w q"], ["a b c d e"])
        assert 0.0 < report.score < 10.0  # smoothed floor, not exactly zero
        # k-th successive zero-match order scores 1/(2^k * total)
        assert report.precisions == pytest.approx(
            [100 / (2 * 5), 100 / (4 * 4), 100 / (8 * 3), 100 / (16 * 2)]
        )

    def test_tokenizer_splits_punctuation_keeps_case(self):
        assert bleu_tokenize("Hello, world!") == ["Hello", ",", "world", "!"]
        assert bleu_tokenize("3.5 items") == ["3.5", "items"]  # decimal kept
        assert bleu_tokenize("pre-war") == ["pre-war"]  # letter hyphen kept
        assert bleu_tokenize("3-4") == ["3", "-", "4"]  # digit hyphen split


def make_eval_list():
    ev = EvalHomographList()
    ev.add("hw", [Sense("hw.a", ["la"]), Sense("hw.b", ["lb"])])
    return ev


def occurrence(synset="hw.a"):
    return HomographAnnotation(["c", "hw", "z"], [Mark(1, synset)])


class TestHomographPrf:
    def test_protocol_arithmetic_6_2_2(self):
        ev = make_eval_list()
        hyps = ["la out"] * 6 + ["lb only"] * 2 + ["nothing here"] * 2
        anns = [occurrence() for _ in range(10)]
        srcs = ["c hw z"] * 10
        report = homograph_prf(hyps, srcs, anns, ev)
        assert report.precision == pytest.approx(0.75, abs=1e-9)
        assert report.recall == pytest.approx(0.6, abs=1e-9)
        assert report.f1 == pytest.approx(0.6667, abs=1e-4)

    def test_all_correct(self):
        ev = make_eval_list()
        report = homograph_prf(["la"] * 4, ["c hw z"] * 4,
                               [occurrence() for _ in range(4)], ev)
        assert report.precision == report.recall == report.f1 == 1.0

    def test_both_senses_present_counts_correct(self):
        ev = make_eval_list()
        report = homograph_prf(["la lb"], ["c hw z"], [occurrence()], ev)
        assert report.correct == 1 and report.wrong_sense == 0

    def test_unknown_homograph_skipped_and_counted(self):
        ev = make_eval_list()
        ann = HomographAnnotation(["other", "word"], [Mark(0, "other.a")])
        report = homograph_prf(["anything"], ["other word"], [ann], ev)
        assert report.skipped == 1 and report.correct == 0

    def test_counts_partition_scored_occurrences(self):
        ev = make_eval_list()
        hyps = ["la", "lb", "none", "la lb"]
        anns = [occurrence() for _ in range(4)]
        report = homograph_prf(hyps, ["c hw z"] * 4, anns, ev)
        assert report.correct + report.wrong_sense + report.missed == 4

    def test_raw_substring_for_unsegmented_script(self):
        ev = EvalHomographList()
        ev.add("interest", [Sense("i.a", ["利息"]), Sense("i.b", ["兴趣"])])
        ann = HomographAnnotation(["the", "interest", "rate"], [Mark(1, "i.a")])
        report = homograph_prf(["年利息很高"], ["the interest rate"], [ann], ev)
        assert report.correct == 1

    def test_phrase_lexeme_matches_token_subsequence(self):
        ev = EvalHomographList()
        ev.add("hw", [Sense("hw.a", ["big bank"]), Sense("hw.b", ["river side"])])
        ann = HomographAnnotation(["c", "hw"], [Mark(1, "hw.a")])
        assert homograph_prf(["a big bank here"], ["c hw"], [ann], ev).correct == 1
        assert homograph_prf(["a big riverbank"], ["c hw"], [ann], ev).missed == 1

    def test_alignment_check(self):
        with pytest.raises(AlignmentError):
            homograph_prf(["a"], ["b", "c"], [occurrence()], make_eval_list())


def heatmap_setup(seed=0):
    sentences = ["cue0 f1 hw f2", "cue0 f3 hw f1", "cue1 f2 hw f4"]
    vocab = build_vocab(sentences)
    encoder = build_encoder(len(vocab), d_model=16, n_heads=2, n_layers=1,
                            d_ff=32, max_len=8, dropout=0.0, seed=seed)
    return sentences, vocab, encoder


class TestHeatmap:
    def test_single_sentence(self):
        sentences, vocab, encoder = heatmap_setup()
        mat, labels = similarity_heatmap(encoder, vocab, sentences[:1], "hw")
        np.testing.assert_allclose(mat, [[1.0]], atol=1e-6)
        assert labels == ["s1"]

    def test_symmetric_unit_diagonal(self):
        sentences, vocab, encoder = heatmap_setup()
        mat, _ = similarity_heatmap(encoder, vocab, sentences, "hw")
        np.testing.assert_allclose(mat, mat.T, atol=1e-6)
        np.testing.assert_allclose(np.diag(mat), 1.0, atol=1e-6)

    def test_positive_semidefinite(self):
        sentences, vocab, encoder = heatmap_setup(seed=3)
        mat, _ = similarity_heatmap(encoder, vocab, sentences, "hw")
        eigvals = np.linalg.eigvalsh(mat)
        assert eigvals.min() > -1e-6

    def test_absent_lemma_names_sentence(self):
        sentences, vocab, encoder = heatmap_setup()
        with pytest.raises(DataError) as err:
            similarity_heatmap(encoder, vocab, ["no match here"], "hw")
        assert "no match here" in str(err.value)


class TestExportVectors:
    def test_one_record_per_sentence_with_synsets(self):
        sentences, vocab, encoder = heatmap_setup()
        anns = [
            HomographAnnotation(s.split(), [Mark(2, f"hw.x.{s.split()[0][-1]}")])
            for s in sentences
        ]
        records, points = export_token_vectors(encoder, vocab, sentences, "hw",
                                               annotations=anns, project=True)
        assert len(records) == 3
        assert [r["synset_id"] for r in records] == ["hw.x.0", "hw.x.0", "hw.x.1"]
        assert points.shape == (3, 2)

    def test_identical_vectors_project_identically(self):
        vecs = np.vstack([np.ones(8), np.ones(8), np.zeros(8)])
        pts = pca_project(vecs)
        np.testing.assert_allclose(pts[0], pts[1], atol=1e-9)

    def test_projection_keeps_separated_centroids_apart(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(20, 16)) + 4.0
        b = rng.normal(size=(20, 16)) - 4.0
        vectors = np.vstack([a, b])
        groups = [0] * 20 + [1] * 20
        full = centroid_separation(vectors, groups)
        projected = centroid_separation(pca_project(vectors), groups)
        assert projected > 0
        assert projected <= full + 1e-6

    def test_projection_is_deterministic(self):
        rng = np.random.default_rng(6)
        v = rng.normal(size=(10, 8))
        np.testing.assert_array_equal(pca_project(v), pca_project(v))
