"""Corpus BLEU, the homograph sense-accuracy protocol, and vector emitters."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import (
    EvalHomographList,
    HomographAnnotation,
    Vocab,
    locate_homograph_index,
    tokenize,
)
from .errors import AlignmentError, DataError

MAX_ORDER = 4


def bleu_tokenize(line: str) -> List[str]:
    """International tokenization: split punctuation, keep case, keep numbers."""
    line = line.replace("<skipped>", "")
    line = line.replace("&quot;", '"').replace("&amp;", "&")
    line = line.replace("&lt;", "<").replace("&gt;", ">")
    line = f" {line} "
    line = re.sub(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])", r" \1 ", line)
    line = re.sub(r"([^0-9])([\.,])", r"\1 \2 ", line)
    line = re.sub(r"([\.,])([^0-9])", r" \1 \2", line)
    line = re.sub(r"([0-9])(-)", r"\1 - ", line)
    return line.split()


@dataclass
class BleuReport:
    """Corpus BLEU-4 with exponential smoothing of zero-match precisions.

    Precisions are percentages, so score = bp * exp(mean(log(precisions)))
    whenever every n-gram order has a nonzero total.
    """

    score: float
    precisions: List[float]
    brevity_penalty: float
    sys_len: int
    ref_len: int


def bleu(hypotheses: Sequence[str], references: Sequence[str]) -> BleuReport:
    """Corpus BLEU against a single reference per hypothesis."""
    if len(hypotheses) != len(references):
        raise AlignmentError(
            f"hypothesis/reference counts differ: {len(hypotheses)} vs {len(references)}"
        )
    correct = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    sys_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens = bleu_tokenize(hyp)
        ref_tokens = bleu_tokenize(ref)
        sys_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, MAX_ORDER + 1):
            hyp_ngrams = Counter(
                tuple(hyp_tokens[i:i + n]) for i in range(len(hyp_tokens) - n + 1)
            )
            ref_ngrams = Counter(
                tuple(ref_tokens[i:i + n]) for i in range(len(ref_tokens) - n + 1)
            )
            total[n - 1] += sum(hyp_ngrams.values())
            correct[n - 1] += sum(
                min(c, ref_ngrams[g]) for g, c in hyp_ngrams.items()
            )

    precisions = [0.0] * MAX_ORDER
    smooth = 1.0
    zero_total = False
    for n in range(MAX_ORDER):
        if total[n] == 0:
            zero_total = True
            break
        if correct[n] == 0:
            smooth *= 2.0
            precisions[n] = 100.0 / (smooth * total[n])
        else:
            precisions[n] = 100.0 * correct[n] / total[n]

    if sys_len == 0:
        bp = 0.0
    elif sys_len >= ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / sys_len)

    if zero_total or any(p == 0.0 for p in precisions):
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(score=score, precisions=precisions, brevity_penalty=bp,
                      sys_len=sys_len, ref_len=ref_len)


# ---------------------------------------------------------------------------
# homograph sense accuracy
# ---------------------------------------------------------------------------

_SEGMENTED_SCRIPT_RE = re.compile(r"[a-zA-Z0-9]")


def _lexeme_present(hyp_text: str, hyp_tokens: List[str], lexeme: str) -> bool:
    """Space-delimited lexemes match as token subsequences; non-segmented
    scripts match as raw substrings."""
    if not _SEGMENTED_SCRIPT_RE.search(lexeme):
        return lexeme in hyp_text
    lex_tokens = tokenize(lexeme)
    if not lex_tokens:
        return False
    k = len(lex_tokens)
    return any(hyp_tokens[i:i + k] == lex_tokens for i in range(len(hyp_tokens) - k + 1))


@dataclass
class HomographCounts:
    correct: int = 0
    wrong_sense: int = 0
    missed: int = 0

    @property
    def scored(self) -> int:
        return self.correct + self.wrong_sense + self.missed


def _prf(correct: int, wrong: int, missed: int) -> Tuple[float, float, float]:
    precision = correct / (correct + wrong) if correct + wrong else 0.0
    recall = correct / (correct + wrong + missed) if correct + wrong + missed else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class DisambiguationReport:
    per_homograph: Dict[str, HomographCounts] = field(default_factory=dict)
    correct: int = 0
    wrong_sense: int = 0
    missed: int = 0
    skipped: int = 0

    @property
    def precision(self) -> float:
        return _prf(self.correct, self.wrong_sense, self.missed)[0]

    @property
    def recall(self) -> float:
        return _prf(self.correct, self.wrong_sense, self.missed)[1]

    @property
    def f1(self) -> float:
        return _prf(self.correct, self.wrong_sense, self.missed)[2]

    def to_dict(self) -> dict:
        return {
            "correct": self.correct,
            "wrong_sense": self.wrong_sense,
            "missed": self.missed,
            "skipped": self.skipped,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_homograph": {
                k: {"correct": v.correct, "wrong_sense": v.wrong_sense,
                    "missed": v.missed}
                for k, v in self.per_homograph.items()
            },
        }


def homograph_prf(
    hypotheses: Sequence[str],
    sources: Sequence[str],
    annotations: Sequence[HomographAnnotation],
    eval_list: EvalHomographList,
) -> DisambiguationReport:
    """Score every annotated homograph occurrence against the hypothesis.

    An occurrence is correct when any acceptable lexeme of the gold sense
    appears (this dominates even if other senses' lexemes also appear),
    wrong_sense when only another sense's lexeme appears, missed otherwise.
    Occurrences outside the eval list are skipped and counted.
    """
    if not (len(hypotheses) == len(sources) == len(annotations)):
        raise AlignmentError(
            "hypotheses, sources, and annotations must align: "
            f"{len(hypotheses)}/{len(sources)}/{len(annotations)}"
        )
    report = DisambiguationReport()
    for hyp, ann in zip(hypotheses, annotations):
        hyp_tokens = tokenize(hyp)
        for mark in ann.marks:
            lemma = ann.tokens[mark.index].lower()
            if lemma not in eval_list:
                report.skipped += 1
                continue
            senses = eval_list.senses(lemma)
            gold = [s for s in senses if s.synset_id == mark.synset_id]
            if not gold:
                report.skipped += 1
                continue
            counts = report.per_homograph.setdefault(lemma, HomographCounts())
            gold_hit = any(
                _lexeme_present(hyp, hyp_tokens, lx) for lx in gold[0].targets
            )
            if gold_hit:
                counts.correct += 1
                report.correct += 1
                continue
            other_hit = any(
                _lexeme_present(hyp, hyp_tokens, lx)
                for s in senses if s.synset_id != mark.synset_id
                for lx in s.targets
            )
            if other_hit:
                counts.wrong_sense += 1
                report.wrong_sense += 1
            else:
                counts.missed += 1
                report.missed += 1
    return report


# ---------------------------------------------------------------------------
# representation emitters
# ---------------------------------------------------------------------------

def _homograph_state(encoder, vocab: Vocab, sentence: str, lemma: str) -> np.ndarray:
    tokens = tokenize(sentence)
    idx = locate_homograph_index(tokens, lemma)
    if idx is None:
        raise DataError(f"lemma {lemma!r} not found in sentence: {sentence!r}")
    out = encoder.encode(vocab.encode(tokens))
    return out.states.data[idx].astype(np.float64)


def similarity_heatmap(encoder, vocab: Vocab, sentences: Sequence[str],
                       lemma: str) -> Tuple[np.ndarray, List[str]]:
    """Pairwise cosine similarity of the lemma's hidden states across sentences."""
    vectors = [_homograph_state(encoder, vocab, s, lemma) for s in sentences]
    mat = np.stack(vectors)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    unit = mat / np.maximum(norms, 1e-12)
    sim = unit @ unit.T
    labels = [f"s{i + 1}" for i in range(len(sentences))]
    return sim, labels


def export_token_vectors(
    encoder,
    vocab: Vocab,
    sentences: Sequence[str],
    lemma: str,
    annotations: Optional[Sequence[HomographAnnotation]] = None,
    project: bool = False,
):
    """One record per located occurrence; optional 2-D principal-component
    projection of the centered vectors."""
    records = []
    for i, sent in enumerate(sentences):
        vec = _homograph_state(encoder, vocab, sent, lemma)
        synset_id = None
        if annotations is not None:
            tokens = tokenize(sent)
            idx = locate_homograph_index(tokens, lemma)
            for mark in annotations[i].marks:
                if mark.index == idx:
                    synset_id = mark.synset_id
                    break
        records.append({"sentence_id": i, "synset_id": synset_id, "vector": vec})
    points = None
    if project:
        points = pca_project(np.stack([r["vector"] for r in records]))
    return records, points


def pca_project(vectors: np.ndarray, k: int = 2) -> np.ndarray:
    """Top-k principal components with a deterministic sign convention."""
    centered = vectors - vectors.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:k]
    for row in range(comps.shape[0]):
        pivot = np.argmax(np.abs(comps[row]))
        if comps[row, pivot] < 0:
            comps[row] = -comps[row]
    proj = centered @ comps.T
    if proj.shape[1] < k:
        proj = np.pad(proj, ((0, 0), (0, k - proj.shape[1])))
    return proj


def centroid_separation(vectors: np.ndarray, groups: Sequence) -> float:
    """Distance between the two group centroids (diagnostic for projections)."""
    labels = sorted(set(groups))
    if len(labels) != 2:
        raise DataError(f"centroid separation needs exactly 2 groups, got {len(labels)}")
    groups = np.asarray(groups)
    a = vectors[groups == labels[0]].mean(axis=0)
    b = vectors[groups == labels[1]].mean(axis=0)
    return float(np.linalg.norm(a - b))
