"""Two-stage pre-training of the disambiguation encoder.

Stage 1 (sentence level): classify inference-pair labels from the
elementwise |h_A - h_B| of sum-pooled sentence vectors, both sentences
encoded by the same encoder.

Stage 2 (word level): minimize the cosine distance between the hidden
states of the shared homograph token in original/example sentence pairs;
gradients flow through both sentences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import PAD, NLIExample, SynsetPair, Vocab
from .errors import DataError
from .layers import Module, padding_mask, _uniform_init
from .model import Encoder
from .optim import Adam, EarlyStopper, Parameter
from .tensor import Tensor


def build_encoder(vocab_size: int, d_model: int = 64, n_heads: int = 4,
                  n_layers: int = 2, d_ff: int = 256, max_len: int = 64,
                  dropout: float = 0.1, seed: int = 0) -> Encoder:
    """Fresh randomly initialized encoder for the pre-training stages."""
    return Encoder(vocab_size, d_model, n_heads, n_layers, d_ff, max_len,
                   dropout, np.random.default_rng(seed))


def sum_pool(states: Tensor) -> Tensor:
    """Sum over the sequence axis of [T, d_model] states."""
    if states.ndim != 2:
        raise DataError(f"sum_pool expects [T, d] states, got shape {states.shape}")
    if states.shape[0] == 0:
        raise DataError("sum_pool of an empty sequence")
    return T.tsum(states, axis=0)


class SrHead(Module):
    """Linear classifier from the pair feature vector to the 3 labels."""

    def __init__(self, feature_dim: int, rng: np.random.Generator):
        self.w = Parameter(_uniform_init(rng, feature_dim, 3))
        self.b = Parameter(np.zeros(3, dtype=np.float32))

    def __call__(self, feature: Tensor) -> Tensor:
        return T.add(T.matmul(feature, self.w.tensor), self.b.tensor)


def _pad_batch(seqs: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs])
    ids = np.full((len(seqs), int(lengths.max())), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return ids, lengths


def _encode_pooled(encoder: Encoder, seqs, train, rng) -> Tensor:
    """Encode a batch of id sequences and sum-pool the non-pad positions."""
    ids, lengths = _pad_batch(seqs)
    mask = padding_mask(lengths, ids.shape[1])
    states = encoder.forward(ids, mask, train, rng)
    keep = (np.arange(ids.shape[1])[None, :] < lengths[:, None]).astype(states.dtype)
    return T.tsum(T.mul(states, Tensor(keep[:, :, None])), axis=1)


def _sr_batch(examples: Sequence[NLIExample], encoder: Encoder, head: SrHead,
              vocab: Vocab, concat_feature: bool, train=False, rng=None):
    premises = [vocab.encode(ex.premise) for ex in examples]
    hypotheses = [vocab.encode(ex.hypothesis) for ex in examples]
    labels = np.array([ex.label for ex in examples])
    h_a = _encode_pooled(encoder, premises, train, rng)
    h_b = _encode_pooled(encoder, hypotheses, train, rng)
    feature = T.absolute(T.sub(h_a, h_b))
    if concat_feature:
        feature = T.concat_last([feature, h_a, h_b])
    logits = head(feature)
    loss = T.cross_entropy(logits, labels)
    return logits, loss, labels


def sr_forward(ex: NLIExample, encoder: Encoder, head: SrHead, vocab: Vocab,
               concat_feature: bool = False):
    """Single-example forward pass -> (logits[3], loss tensor)."""
    logits, loss, _ = _sr_batch([ex], encoder, head, vocab, concat_feature)
    return T.reshape(logits, (3,)), loss


@dataclass
class SrResult:
    history: List[dict]
    best_heldout_loss: float


def sr_train(
    examples: Sequence[NLIExample],
    encoder: Encoder,
    head: SrHead,
    vocab: Vocab,
    epochs: int,
    seed: int,
    lr: float = 1e-3,
    batch_size: int = 16,
    patience: Optional[int] = 3,
    concat_feature: bool = False,
) -> SrResult:
    """Minimize the label cross-entropy; per-epoch held-out accuracy with
    early stopping on held-out loss (deterministic 90/10 split by seed)."""
    if not examples:
        raise DataError("sentence-stage training needs a non-empty corpus")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(examples))
    cut = max(1, int(round(len(examples) * 0.9)))
    if cut == len(examples):
        cut = len(examples) - 1
    train_set = [examples[i] for i in order[:cut]]
    heldout = [examples[i] for i in order[cut:]]

    opt = Adam(list(encoder.parameters()) + list(head.parameters()), lr=lr)
    stopper = EarlyStopper(patience)
    history: List[dict] = []
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(train_set))
        losses = []
        for lo in range(0, len(train_set), batch_size):
            batch = [train_set[i] for i in perm[lo:lo + batch_size]]
            _, loss, _ = _sr_batch(batch, encoder, head, vocab, concat_feature,
                                   train=True, rng=rng)
            loss.backward()
            losses.append(loss.item())
            opt.step()
        held_loss, held_acc = sr_evaluate(heldout, encoder, head, vocab,
                                          concat_feature)
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "heldout_loss": held_loss,
            "heldout_accuracy": held_acc,
        })
        if stopper.update(held_loss):
            break
    return SrResult(history=history, best_heldout_loss=stopper.best)


def sr_evaluate(examples, encoder, head, vocab, concat_feature=False,
                batch_size: int = 64) -> Tuple[float, float]:
    if not examples:
        raise DataError("cannot evaluate on an empty set")
    losses, hits, n = [], 0, 0
    with T.no_grad():
        for lo in range(0, len(examples), batch_size):
            batch = examples[lo:lo + batch_size]
            logits, loss, labels = _sr_batch(batch, encoder, head, vocab,
                                             concat_feature)
            losses.append(loss.item() * len(batch))
            hits += int((logits.data.argmax(axis=1) == labels).sum())
            n += len(batch)
    return float(np.sum(losses) / n), hits / n


# ---------------------------------------------------------------------------
# word-level stage
# ---------------------------------------------------------------------------

def wdr_loss(pairs: Sequence[SynsetPair], encoder: Encoder, vocab: Vocab,
             train=False, rng=None) -> Tensor:
    """Mean cosine distance between the paired homograph hidden states."""
    if not pairs:
        raise DataError("word-stage loss needs a non-empty pair batch")
    originals = [vocab.encode(p.original) for p in pairs]
    examples = [vocab.encode(p.example) for p in pairs]
    ids_o, len_o = _pad_batch(originals)
    ids_e, len_e = _pad_batch(examples)
    states_o = encoder.forward(ids_o, padding_mask(len_o, ids_o.shape[1]), train, rng)
    states_e = encoder.forward(ids_e, padding_mask(len_e, ids_e.shape[1]), train, rng)
    h_i = T.take_positions(states_o, np.array([p.i for p in pairs]))
    h_j = T.take_positions(states_e, np.array([p.j for p in pairs]))
    return T.tmean(T.paired_cosine_distance(h_i, h_j))


@dataclass
class WdrResult:
    loss_curve: List[float]
    diagnostics: Dict[str, float]


def wdr_train(
    pairs: Sequence[SynsetPair],
    encoder: Encoder,
    vocab: Vocab,
    steps: int,
    seed: int,
    lr: float = 1e-3,
    batch_size: int = 16,
) -> WdrResult:
    """Epochs over the disambiguation set until `steps` updates are spent."""
    if not pairs:
        raise DataError("word-stage training needs a non-empty disambiguation set")
    rng = np.random.default_rng(seed)
    opt = Adam(encoder.parameters(), lr=lr)
    curve: List[float] = []
    done = 0
    while done < steps:
        perm = rng.permutation(len(pairs))
        for lo in range(0, len(pairs), batch_size):
            if done >= steps:
                break
            batch = [pairs[i] for i in perm[lo:lo + batch_size]]
            loss = wdr_loss(batch, encoder, vocab, train=True, rng=rng)
            loss.backward()
            curve.append(loss.item())
            opt.step()
            done += 1
    return WdrResult(loss_curve=curve,
                     diagnostics=representation_diagnostics(pairs, encoder, vocab))


def homograph_states_by_synset(pairs, encoder, vocab) -> Dict[str, List[np.ndarray]]:
    """Hidden state of each pair's original-sentence homograph, keyed by synset."""
    grouped: Dict[str, List[np.ndarray]] = {}
    with T.no_grad():
        for p in pairs:
            out = encoder.encode(vocab.encode(p.original))
            grouped.setdefault(p.synset_id, []).append(
                out.states.data[p.i].astype(np.float64)
            )
    return grouped


def _mean_cosine(a: List[np.ndarray], b: Optional[List[np.ndarray]] = None) -> float:
    def unit(v):
        return v / max(np.linalg.norm(v), 1e-12)

    sims = []
    if b is None:
        for i in range(len(a)):
            for j in range(i + 1, len(a)):
                sims.append(float(unit(a[i]) @ unit(a[j])))
    else:
        for x in a:
            for y in b:
                sims.append(float(unit(x) @ unit(y)))
    return float(np.mean(sims)) if sims else float("nan")


def representation_diagnostics(pairs, encoder, vocab,
                               max_states_per_synset: int = 20) -> Dict[str, float]:
    """Within/cross-sense homograph-state similarity plus a collapse probe
    (mean similarity between unrelated non-homograph tokens)."""
    grouped = homograph_states_by_synset(pairs, encoder, vocab)
    for k in grouped:
        grouped[k] = grouped[k][:max_states_per_synset]
    keys = sorted(grouped)
    within = [_mean_cosine(grouped[k]) for k in keys if len(grouped[k]) > 1]
    cross = []
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            cross.append(_mean_cosine(grouped[keys[i]], grouped[keys[j]]))

    unrelated = []
    with T.no_grad():
        seen = 0
        for p in pairs:
            if seen >= 10:
                break
            out = encoder.encode(vocab.encode(p.original))
            for idx in range(len(p.original)):
                if idx != p.i:
                    unrelated.append(out.states.data[idx].astype(np.float64))
                    break
            seen += 1
    return {
        "within_sense_similarity": float(np.nanmean(within)) if within else float("nan"),
        "cross_sense_similarity": float(np.nanmean(cross)) if cross else float("nan"),
        "unrelated_token_similarity": _mean_cosine(unrelated),
    }
