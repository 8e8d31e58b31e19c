"""NMT training: token batching, label smoothing, freezing, warm starts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import BOS, EOS, PAD, Vocab, batch_by_tokens, build_vocab, tokenize
from .errors import ConfigError
from .evaluation import bleu
from .layers import padding_mask
from .model import ModelConfig, Seq2SeqModel
from .optim import Adam, EarlyStopper, WarmupInverseSqrt


@dataclass
class TrainSettings:
    steps: int = 2000
    max_tokens: int = 1024
    lr: float = 1e-3
    warmup: int = 400
    label_smoothing: float = 0.1
    eval_every: Optional[int] = None  # None -> once per epoch
    patience: Optional[int] = 3  # None disables early stopping
    heldout_fraction: float = 0.1
    bleu_cap: int = 200
    seed: int = 0
    min_count: int = 1


@dataclass
class TrainResult:
    model: Seq2SeqModel
    src_vocab: Vocab
    tgt_vocab: Vocab
    records: List[dict]
    init_report: Dict[str, int] = field(default_factory=dict)


def _split_pairs(pairs, fraction: float, rng: np.random.Generator):
    order = rng.permutation(len(pairs))
    n_held = max(1, int(round(len(pairs) * fraction)))
    if n_held >= len(pairs):
        n_held = len(pairs) - 1
    held_idx = set(order[:n_held].tolist())
    train = [pairs[i] for i in range(len(pairs)) if i not in held_idx]
    held = [pairs[i] for i in sorted(held_idx)]
    return train, held


def _batch_arrays(batch, pad=PAD):
    """Pack (src_ids, tgt_ids) pairs into padded teacher-forcing arrays."""
    b = len(batch)
    src_lens = np.array([len(s) for s, _ in batch])
    tgt_lens = np.array([len(t) + 1 for _, t in batch])  # +1 for bos/eos shift
    src = np.full((b, int(src_lens.max())), pad, dtype=np.int64)
    tgt_in = np.full((b, int(tgt_lens.max())), pad, dtype=np.int64)
    tgt_out = np.full((b, int(tgt_lens.max())), pad, dtype=np.int64)
    for i, (s, t) in enumerate(batch):
        src[i, : len(s)] = s
        tgt_in[i, 0] = BOS
        tgt_in[i, 1 : len(t) + 1] = t
        tgt_out[i, : len(t)] = t
        tgt_out[i, len(t)] = EOS
    return src, src_lens, tgt_in, tgt_out, tgt_lens


def _loss_on_batch(model: Seq2SeqModel, batch, label_smoothing, train, rng):
    src, src_lens, tgt_in, tgt_out, tgt_lens = _batch_arrays(batch)
    logits = model.forward_logits(src, src_lens, tgt_in, tgt_lens, train, rng)
    flat = T.reshape(logits, (-1, model.cfg.tgt_vocab))
    return T.cross_entropy(flat, tgt_out.reshape(-1),
                           label_smoothing=label_smoothing, ignore_index=PAD)


def heldout_loss(model: Seq2SeqModel, pairs, label_smoothing=0.0,
                 max_tokens=1024) -> float:
    """Token-weighted mean loss over the held-out pairs (dropout off)."""
    total, weight = 0.0, 0
    with T.no_grad():
        for batch in batch_by_tokens(pairs, max_tokens):
            loss = _loss_on_batch(model, batch, label_smoothing, False, None)
            n_tokens = sum(len(t) + 1 for _, t in batch)
            total += loss.item() * n_tokens
            weight += n_tokens
    return total / weight


def heldout_bleu(model: Seq2SeqModel, pairs, tgt_vocab: Vocab, cap=200) -> float:
    subset = pairs[:cap]
    hyps_ids = model.translate_batch([s for s, _ in subset], BOS, EOS, PAD)
    hyps = [" ".join(tgt_vocab.decode(h)) for h in hyps_ids]
    refs = [" ".join(tgt_vocab.decode(t)) for _, t in subset]
    return bleu(hyps, refs).score


def _load_named(model: Seq2SeqModel, state: Dict[str, np.ndarray],
                prefix: str = "", strict_prefix: Optional[str] = None) -> Dict[str, int]:
    """Copy checkpoint arrays into same-named parameters; report the overlap."""
    params = dict(model.named_parameters())
    loaded = skipped = 0
    for name, array in state.items():
        target_name = prefix + name
        p = params.get(target_name)
        if p is None or p.data.shape != array.shape:
            skipped += 1
            continue
        if strict_prefix and not target_name.startswith(strict_prefix):
            skipped += 1
            continue
        p.tensor.data = array.astype(p.tensor.data.dtype).copy()
        loaded += 1
    fresh = len(params) - loaded
    return {"loaded": loaded, "fresh": fresh, "skipped": skipped}


def train_nmt(
    pairs: Sequence[Tuple[List[str], List[str]]],
    config: ModelConfig,
    settings: TrainSettings,
    hdr_state: Optional[Dict[str, np.ndarray]] = None,
    hdr_vocab: Optional[List[str]] = None,
    init_state: Optional[Dict[str, np.ndarray]] = None,
    vocabs: Optional[Tuple[Vocab, Vocab]] = None,
) -> TrainResult:
    """Train a translation model; the disambiguation encoder stays frozen.

    `hdr_state` holds pretrained encoder parameters (required when the scheme
    uses a second encoder with source 'hdr_pretrained'); `init_state` warm
    starts every same-named parameter from a previous model checkpoint.
    """
    if vocabs is not None:
        src_vocab, tgt_vocab = vocabs
    else:
        src_vocab = build_vocab([s for s, _ in pairs], min_count=settings.min_count)
        tgt_vocab = build_vocab([t for _, t in pairs], min_count=settings.min_count)
    config.src_vocab = len(src_vocab)
    config.tgt_vocab = len(tgt_vocab)
    config.validate()

    needs_hdr = config.uses_second_encoder and config.second_encoder_source == "hdr_pretrained"
    if needs_hdr and hdr_state is None:
        raise ConfigError(
            "second_encoder_source 'hdr_pretrained' requires a pretrained checkpoint"
        )

    model = Seq2SeqModel(config, seed=settings.seed)
    init_report: Dict[str, int] = {}
    if config.uses_second_encoder:
        if config.second_encoder_source == "hdr_pretrained":
            if hdr_vocab is not None and hdr_vocab != src_vocab.to_list():
                raise ConfigError(
                    "pretrained encoder vocabulary does not match the source side"
                )
            report = _load_named(model, hdr_state, prefix="second_encoder.")
            if report["loaded"] == 0:
                raise ConfigError("pretrained encoder checkpoint matched no parameters")
            init_report["hdr_loaded"] = report["loaded"]
            model.second_encoder.freeze()
        elif config.second_encoder_source == "random":
            model.second_encoder.freeze()
        elif config.second_encoder_source == "nmt_copy":
            # joint-training ablation: start as an exact copy of the
            # translation encoder, then train both
            primary = dict(model.encoder.named_parameters())
            for name, p in model.second_encoder.named_parameters():
                p.tensor.data = primary[name].tensor.data.copy()
    if init_state is not None:
        warm = _load_named(model, init_state)
        init_report.update({f"warm_{k}": v for k, v in warm.items()})

    rng = np.random.default_rng(settings.seed + 1)
    # length filter: drop pairs the position tables cannot hold
    fits = lambda s, t: len(s) <= config.max_len and len(t) + 1 <= config.max_len
    encoded = [
        (src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in pairs if fits(s, t)
    ]
    if not encoded:
        raise ConfigError("every pair exceeds max_len; nothing to train on")
    train_pairs, held_pairs = _split_pairs(encoded, settings.heldout_fraction, rng)
    batches = batch_by_tokens(train_pairs, settings.max_tokens)
    eval_every = settings.eval_every or max(1, len(batches))

    opt = Adam(model.parameters(), lr=settings.lr)
    schedule = WarmupInverseSqrt(settings.lr, settings.warmup)
    stopper = EarlyStopper(settings.patience)

    records: List[dict] = []

    def evaluate(step: int, train_loss: Optional[float]) -> float:
        h_loss = heldout_loss(model, held_pairs, settings.label_smoothing,
                              settings.max_tokens)
        h_bleu = heldout_bleu(model, held_pairs, tgt_vocab, settings.bleu_cap)
        records.append({
            "step": step,
            "train_loss": train_loss,
            "heldout_loss": h_loss,
            "heldout_bleu": h_bleu,
        })
        return h_loss

    evaluate(0, None)

    step = 0
    window: List[float] = []
    stop = False
    while step < settings.steps and not stop:
        for bi in rng.permutation(len(batches)):
            if step >= settings.steps:
                break
            step += 1
            opt.lr = schedule(step)
            loss = _loss_on_batch(model, batches[bi], settings.label_smoothing,
                                  True, rng)
            loss.backward()
            T.check_finite(loss, "training loss")
            window.append(loss.item())
            opt.step()
            if step % eval_every == 0 or step == settings.steps:
                h_loss = evaluate(step, float(np.mean(window)))
                window = []
                if stopper.update(h_loss):
                    stop = True
                    break
    if not records or records[-1]["step"] != step:
        evaluate(step, float(np.mean(window)) if window else None)
    return TrainResult(model, src_vocab, tgt_vocab, records, init_report)


def translate(
    model: Seq2SeqModel,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    sentences: Sequence[str],
    strategy: str = "greedy",
    beam_width: int = 4,
) -> List[str]:
    """Sentence-in, sentence-out decoding with whitespace detokenization."""
    if not sentences:
        return []
    encoded = [src_vocab.encode(tokenize(s)) for s in sentences]
    if strategy == "greedy":
        out_ids = model.translate_batch(encoded, BOS, EOS, PAD)
    elif strategy == "beam":
        out_ids = [
            model.decode_sequence(ids, BOS, EOS, strategy="beam",
                                  beam_width=beam_width)
            for ids in encoded
        ]
    else:
        raise ConfigError(f"unknown decoding strategy {strategy!r}")
    return [" ".join(tgt_vocab.decode(ids)) for ids in out_ids]
