"""Corpus ingestion, vocabulary, synset pairing, and synthetic corpora.

File formats (all UTF-8):
  parallel corpus    two one-sentence-per-line files, or one TSV (source TAB target)
  NLI                TSV: premise TAB hypothesis TAB label
  mini lexicon       JSONL: {"synset_id": ..., "lemmas": [...], "examples": [...]}
  annotations        JSONL: {"sentence": ..., "marks": [{"index": i, "synset_id": ...}]}
                     (indices are 0-based token positions)
  eval list          JSONL: {"homograph": ..., "senses": [{"synset_id": ..., "targets": [...]}]}
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import AlignmentError, CapacityError, DataError, LexiconError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

NLI_LABELS = ("entailment", "neutral", "contradiction")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> List[str]:
    """Lowercased whitespace tokens with punctuation detached."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Token/id bijection with reserved ids pad=0, unk=1, bos=2, eos=3."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: List[str] = list(RESERVED) + [
            t for t in tokens if t not in RESERVED
        ]
        self.token_to_id: Dict[str, int] = {
            t: i for i, t in enumerate(self.id_to_token)
        }
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.token(i) for i in ids]

    def to_list(self) -> List[str]:
        return list(self.id_to_token)

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocab":
        if list(tokens[:4]) != list(RESERVED):
            raise DataError("vocabulary list must start with the reserved tokens")
        return cls(tokens[4:])


def build_vocab(corpus: Iterable, min_count: int = 1,
                max_size: Optional[int] = None) -> Vocab:
    """Frequency-ranked vocabulary; ties broken lexicographically."""
    counts: Dict[str, int] = {}
    empty = True
    for sentence in corpus:
        empty = False
        tokens = tokenize(sentence) if isinstance(sentence, str) else sentence
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
    if empty:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    if max_size is not None:
        ranked = ranked[: max(0, max_size - len(RESERVED))]
    return Vocab(ranked)


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

def _read_lines(path) -> List[str]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    return p.read_text(encoding="utf-8").splitlines()


def load_parallel(src_path=None, tgt_path=None, tsv_path=None
                  ) -> List[Tuple[List[str], List[str]]]:
    """Aligned, tokenized sentence pairs from two files or one TSV."""
    if tsv_path is not None:
        pairs = []
        for n, line in enumerate(_read_lines(tsv_path), start=1):
            if not line.strip():
                raise DataError(f"{tsv_path}:{n}: empty line")
            cols = line.split("\t")
            if len(cols) != 2:
                raise DataError(f"{tsv_path}:{n}: expected 2 tab-separated columns")
            src, tgt = (c.strip() for c in cols)
            if not src or not tgt:
                raise DataError(f"{tsv_path}:{n}: empty side")
            pairs.append((tokenize(src), tokenize(tgt)))
        return pairs
    if src_path is None or tgt_path is None:
        raise DataError("load_parallel needs either tsv_path or both src/tgt paths")
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise AlignmentError(
            f"line counts differ: {src_path} has {len(src_lines)}, "
            f"{tgt_path} has {len(tgt_lines)}"
        )
    pairs = []
    for n, (s, t) in enumerate(zip(src_lines, tgt_lines), start=1):
        s, t = s.strip(), t.strip()
        if not s:
            raise DataError(f"{src_path}:{n}: empty line")
        if not t:
            raise DataError(f"{tgt_path}:{n}: empty line")
        pairs.append((tokenize(s), tokenize(t)))
    return pairs


@dataclass
class NLIExample:
    """Premise/hypothesis token sequences with a 3-way label."""

    premise: List[str]
    hypothesis: List[str]
    label: int  # index into NLI_LABELS

    def __post_init__(self):
        if not self.premise or not self.hypothesis:
            raise DataError("NLI sentences must be non-empty")
        if not 0 <= self.label < len(NLI_LABELS):
            raise DataError(f"NLI label index {self.label} out of range")


def load_nli(path) -> List[NLIExample]:
    examples = []
    for n, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise DataError(f"{path}:{n}: expected 3 tab-separated columns")
        premise, hypothesis, label = (c.strip() for c in cols)
        if label not in NLI_LABELS:
            raise DataError(f"{path}:{n}: unknown label {label!r}")
        examples.append(NLIExample(tokenize(premise), tokenize(hypothesis),
                                   NLI_LABELS.index(label)))
    return examples


# ---------------------------------------------------------------------------
# lexicon / annotations / eval list
# ---------------------------------------------------------------------------

@dataclass
class SynsetRecord:
    lemmas: List[str]
    examples: List[List[str]]


class MiniWordNet:
    """synset_id -> {lemmas, tokenized example sentences}."""

    def __init__(self):
        self.synsets: Dict[str, SynsetRecord] = {}

    def add(self, synset_id: str, lemmas: Sequence[str],
            examples: Sequence[Sequence[str]]) -> None:
        if synset_id in self.synsets:
            raise DataError(f"duplicate synset id {synset_id!r}")
        self.synsets[synset_id] = SynsetRecord(
            [l.lower() for l in lemmas], [list(e) for e in examples]
        )

    def __contains__(self, synset_id: str) -> bool:
        return synset_id in self.synsets

    def __getitem__(self, synset_id: str) -> SynsetRecord:
        if synset_id not in self.synsets:
            raise LexiconError(f"unknown synset id {synset_id!r}")
        return self.synsets[synset_id]

    def __len__(self) -> int:
        return len(self.synsets)


def load_wordnet(path) -> MiniWordNet:
    wn = MiniWordNet()
    for n, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{n}: bad JSON: {exc}") from exc
        for key in ("synset_id", "lemmas", "examples"):
            if key not in rec:
                raise DataError(f"{path}:{n}: missing key {key!r}")
        if not rec["lemmas"]:
            raise DataError(f"{path}:{n}: synset without lemmas")
        wn.add(rec["synset_id"], rec["lemmas"],
               [tokenize(e) for e in rec["examples"]])
    return wn


def save_wordnet(wn: MiniWordNet, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sid, rec in wn.synsets.items():
            f.write(json.dumps({
                "synset_id": sid,
                "lemmas": rec.lemmas,
                "examples": [" ".join(e) for e in rec.examples],
            }, ensure_ascii=False) + "\n")


@dataclass
class Mark:
    index: int
    synset_id: str


@dataclass
class HomographAnnotation:
    tokens: List[str]
    marks: List[Mark]

    def __post_init__(self):
        for m in self.marks:
            if not 0 <= m.index < len(self.tokens):
                raise DataError(
                    f"mark index {m.index} out of range for a "
                    f"{len(self.tokens)}-token sentence"
                )


def load_annotations(path) -> List[HomographAnnotation]:
    out = []
    for n, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{n}: bad JSON: {exc}") from exc
        if "sentence" not in rec or "marks" not in rec:
            raise DataError(f"{path}:{n}: missing 'sentence' or 'marks'")
        tokens = tokenize(rec["sentence"])
        try:
            marks = [Mark(int(m["index"]), str(m["synset_id"])) for m in rec["marks"]]
            out.append(HomographAnnotation(tokens, marks))
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}:{n}: malformed mark: {exc}") from exc
        except DataError as exc:
            raise DataError(f"{path}:{n}: {exc}") from exc
    return out


def save_annotations(annotations: Sequence[HomographAnnotation], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for a in annotations:
            f.write(json.dumps({
                "sentence": " ".join(a.tokens),
                "marks": [{"index": m.index, "synset_id": m.synset_id} for m in a.marks],
            }, ensure_ascii=False) + "\n")


@dataclass
class Sense:
    synset_id: str
    targets: List[str]


class EvalHomographList:
    """homograph lemma -> senses with acceptable target lexemes."""

    def __init__(self):
        self.entries: Dict[str, List[Sense]] = {}

    def add(self, lemma: str, senses: Sequence[Sense]) -> None:
        if len(senses) < 2:
            raise DataError(f"homograph {lemma!r} needs at least 2 senses")
        for s in senses:
            if not s.targets:
                raise DataError(f"sense {s.synset_id!r} has no target lexemes")
        self.entries[lemma.lower()] = list(senses)

    def __contains__(self, lemma: str) -> bool:
        return lemma.lower() in self.entries

    def senses(self, lemma: str) -> List[Sense]:
        return self.entries[lemma.lower()]


def load_eval_list(path) -> EvalHomographList:
    ev = EvalHomographList()
    for n, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{n}: bad JSON: {exc}") from exc
        if "homograph" not in rec or "senses" not in rec:
            raise DataError(f"{path}:{n}: missing 'homograph' or 'senses'")
        try:
            senses = [Sense(s["synset_id"], list(s["targets"])) for s in rec["senses"]]
            ev.add(rec["homograph"], senses)
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}:{n}: malformed sense: {exc}") from exc
        except DataError as exc:
            raise DataError(f"{path}:{n}: {exc}") from exc
    return ev


def save_eval_list(ev: EvalHomographList, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for lemma, senses in ev.entries.items():
            f.write(json.dumps({
                "homograph": lemma,
                "senses": [{"synset_id": s.synset_id, "targets": s.targets}
                           for s in senses],
            }, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# synset pairing
# ---------------------------------------------------------------------------

@dataclass
class SynsetPair:
    """One original/example sentence pair sharing a homograph occurrence."""

    original: List[str]
    example: List[str]
    i: int  # homograph position in original (0-based)
    j: int  # homograph position in example (0-based)
    synset_id: str

    def __post_init__(self):
        if not 0 <= self.i < len(self.original):
            raise DataError(f"pair index i={self.i} out of range")
        if not 0 <= self.j < len(self.example):
            raise DataError(f"pair index j={self.j} out of range")
        if self.original[self.i].lower() != self.example[self.j].lower():
            raise DataError(
                f"surface lemma mismatch: {self.original[self.i]!r} vs "
                f"{self.example[self.j]!r}"
            )


def locate_homograph_index(example: Sequence[str], lemmas) -> Optional[int]:
    """First 0-based index whose lowercased token equals any lemma; None if absent."""
    if isinstance(lemmas, str):
        lemmas = [lemmas]
    wanted = {l.lower() for l in lemmas}
    for idx, tok in enumerate(example):
        if tok.lower() in wanted:
            return idx
    return None


def prepare_disambiguation_set(
    annotations: Sequence[HomographAnnotation],
    wn: MiniWordNet,
) -> Tuple[List[SynsetPair], int]:
    """Pair every marked homograph occurrence with every example of its synset.

    Returns (pairs, skipped) where skipped counts examples in which the
    homograph's surface form could not be located.
    """
    pairs: List[SynsetPair] = []
    skipped = 0
    for ann in annotations:
        for mark in ann.marks:
            record = wn[mark.synset_id]  # LexiconError when unknown
            surface = ann.tokens[mark.index]
            for example in record.examples:
                j = locate_homograph_index(example, surface)
                if j is None:
                    skipped += 1
                    continue
                pairs.append(SynsetPair(ann.tokens, example, mark.index, j,
                                        mark.synset_id))
    return pairs, skipped


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def batch_by_tokens(examples: Sequence, max_tokens: int) -> List[List]:
    """Greedy packing by source+target token count after a stable length sort."""
    def cost(ex) -> int:
        a, b = ex[0], ex[1]
        return len(a) + len(b)

    for ex in examples:
        if cost(ex) > max_tokens:
            raise CapacityError(
                f"example of {cost(ex)} tokens exceeds the {max_tokens}-token budget"
            )
    ordered = sorted(examples, key=cost)
    batches: List[List] = []
    current: List = []
    used = 0
    for ex in ordered:
        c = cost(ex)
        if current and used + c > max_tokens:
            batches.append(current)
            current, used = [], 0
        current.append(ex)
        used += c
    if current:
        batches.append(current)
    return batches


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

@dataclass
class SyntheticCorpus:
    src_sentences: List[str]
    tgt_sentences: List[str]
    annotations: List[HomographAnnotation]
    wordnet: MiniWordNet
    eval_list: EvalHomographList
    homographs: List[str] = field(default_factory=list)


def generate_synthetic_homograph_corpus(
    n_pairs: int,
    n_homographs: int,
    seed: int,
    n_fillers: int = 120,
    examples_per_synset: int = 3,
) -> SyntheticCorpus:
    """Deterministic cue-driven parallel corpus for desk-scale verification.

    Every source sentence follows "CUE fillers HOMOGRAPH fillers"; each
    homograph has two senses, each bound to a unique cue word and a unique
    target lexeme; the target is a word-for-word mapping with the homograph
    rendered as the lexeme of the cue-matched sense.
    """
    if n_homographs < 1:
        raise DataError("need at least one homograph")
    rng = np.random.default_rng(seed)
    fillers = [f"f{k}" for k in range(n_fillers)]

    homographs = [f"hw{h}" for h in range(n_homographs)]
    senses = {}
    wn = MiniWordNet()
    ev = EvalHomographList()
    for h, hw in enumerate(homographs):
        entry = []
        for tag in ("a", "b"):
            sid = f"{hw}.x.{tag}"
            senses[(hw, tag)] = {
                "synset_id": sid,
                "cue": f"cue{h}{tag}",
                "lexeme": f"lex{h}{tag}",
            }
            entry.append(Sense(sid, [f"lex{h}{tag}"]))
        ev.add(hw, entry)

    def sample_sentence(hw: str, tag: str) -> Tuple[List[str], int]:
        sense = senses[(hw, tag)]
        pre = rng.integers(3, 8)
        post = rng.integers(2, 6)
        body = [sense["cue"]]
        body += [fillers[k] for k in rng.integers(0, n_fillers, size=pre)]
        hw_index = len(body)
        body.append(hw)
        body += [fillers[k] for k in rng.integers(0, n_fillers, size=post)]
        return body, hw_index

    # lexicon examples first so corpus sampling is independent of their count
    for h, hw in enumerate(homographs):
        for tag in ("a", "b"):
            sense = senses[(hw, tag)]
            examples = [" ".join(sample_sentence(hw, tag)[0])
                        for _ in range(examples_per_synset)]
            wn.add(sense["synset_id"], [hw], [tokenize(e) for e in examples])

    def translate_token(tok: str, lexeme: str, hw: str) -> str:
        return lexeme if tok == hw else "t" + tok

    src_sentences, tgt_sentences, annotations = [], [], []
    for _ in range(n_pairs):
        h = int(rng.integers(0, n_homographs))
        tag = "a" if rng.integers(0, 2) == 0 else "b"
        hw = homographs[h]
        sense = senses[(hw, tag)]
        tokens, hw_index = sample_sentence(hw, tag)
        tgt = [translate_token(t, sense["lexeme"], hw) for t in tokens]
        src_sentences.append(" ".join(tokens))
        tgt_sentences.append(" ".join(tgt))
        annotations.append(HomographAnnotation(
            tokens, [Mark(hw_index, sense["synset_id"])]
        ))
    return SyntheticCorpus(src_sentences, tgt_sentences, annotations, wn, ev,
                           homographs)


NLI_MARKERS = {"entailment": "certainly", "neutral": "possibly",
               "contradiction": "never"}


def generate_synthetic_nli(n_examples: int, seed: int,
                           n_fillers: int = 30) -> List[NLIExample]:
    """Balanced, linearly separable NLI triples: the hypothesis repeats the
    premise plus one label-revealing marker token."""
    rng = np.random.default_rng(seed)
    fillers = [f"w{k}" for k in range(n_fillers)]
    out = []
    for i in range(n_examples):
        label = i % len(NLI_LABELS)
        length = int(rng.integers(4, 9))
        premise = [fillers[k] for k in rng.integers(0, n_fillers, size=length)]
        hypothesis = list(premise)
        pos = int(rng.integers(0, len(hypothesis) + 1))
        hypothesis.insert(pos, NLI_MARKERS[NLI_LABELS[label]])
        out.append(NLIExample(premise, hypothesis, label))
    return out


def write_nli(examples: Sequence[NLIExample], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write("\t".join([" ".join(ex.premise), " ".join(ex.hypothesis),
                               NLI_LABELS[ex.label]]) + "\n")


def write_lines(lines: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")
