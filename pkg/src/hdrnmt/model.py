"""Encoder/decoder stacks, the dual-encoder seq2seq model, and decoding."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, LengthError, VocabularyError
from .fusion import GateConfig, build_decoder_layer, FUSION_SCHEMES
from .layers import (
    Embedding,
    FeedForward,
    LayerNorm,
    Module,
    ModuleList,
    MultiHeadAttention,
    causal_mask,
    padding_mask,
    sinusoidal_positions,
    _uniform_init,
)
from .optim import Parameter
from .tensor import Tensor

SECOND_ENCODER_SOURCES = ("hdr_pretrained", "random", "nmt_copy")


@dataclass
class ModelConfig:
    """Architecture hyperparameters for the toolkit's models."""

    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    src_vocab: int = 0
    tgt_vocab: int = 0
    max_len: int = 64
    dropout: float = 0.1
    fusion_scheme: str = "baseline"
    gate_mode: str = "fixed:0.5"
    second_encoder_source: str = "hdr_pretrained"
    identity_mode: bool = False

    def validate(self) -> "ModelConfig":
        if self.d_model <= 0 or self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be positive and even, got {self.d_model}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")
        if self.fusion_scheme not in FUSION_SCHEMES:
            raise ConfigError(f"unknown fusion scheme {self.fusion_scheme!r}")
        if self.fusion_scheme != "baseline" and self.second_encoder_source not in SECOND_ENCODER_SOURCES:
            raise ConfigError(
                f"unknown second encoder source {self.second_encoder_source!r}"
            )
        GateConfig.parse(self.gate_mode)
        return self

    @property
    def gate(self) -> GateConfig:
        return GateConfig.parse(self.gate_mode)

    @property
    def uses_second_encoder(self) -> bool:
        return self.fusion_scheme != "baseline"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d).validate()


@dataclass
class EncoderOutput:
    """States [T_src, d_model] for one encoded source sentence."""

    states: Tensor
    token_ids: Tuple[int, ...]


class EncoderLayer(Module):
    def __init__(self, d_model, n_heads, d_ff, dropout, rng, identity=False):
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln_attn = LayerNorm(d_model, identity=identity)
        self.ffn = FeedForward(d_model, d_ff, rng, identity=identity)
        self.ln_ffn = LayerNorm(d_model, identity=identity)
        self.p = 0.0 if identity else dropout

    def __call__(self, x, mask, train=False, rng=None):
        a = T.dropout(self.self_attn(x, x, x, mask), self.p, rng, train)
        x = self.ln_attn(x + a)
        f = T.dropout(self.ffn(x), self.p, rng, train)
        return self.ln_ffn(x + f)


class Encoder(Module):
    """Embedding + positions + a stack of self-attention/FFN layers."""

    def __init__(self, vocab_size, d_model, n_heads, n_layers, d_ff, max_len,
                 dropout, rng, identity=False):
        self.emb = Embedding(vocab_size, d_model, rng)
        self.layers = ModuleList(
            EncoderLayer(d_model, n_heads, d_ff, dropout, rng, identity)
            for _ in range(n_layers)
        )
        self.positions = sinusoidal_positions(max_len, d_model)
        self.d_model = d_model
        self.max_len = max_len
        self.vocab_size = vocab_size
        self.p = 0.0 if identity else dropout

    def _check_ids(self, ids: np.ndarray) -> None:
        if ids.shape[-1] > self.max_len:
            raise LengthError(
                f"sequence length {ids.shape[-1]} exceeds max_len {self.max_len}"
            )
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise VocabularyError(
                f"token id outside vocabulary of size {self.vocab_size}"
            )

    def forward(self, ids: np.ndarray, mask=None, train=False, rng=None) -> Tensor:
        """ids [B, T] -> states [B, T, d_model]."""
        ids = np.asarray(ids)
        self._check_ids(ids)
        t = ids.shape[-1]
        x = T.mul(self.emb(ids), float(np.sqrt(self.d_model)))
        x = T.add(x, Tensor(self.positions.data[:t]))
        x = T.dropout(x, self.p, rng, train)
        for layer in self.layers:
            x = layer(x, mask, train, rng)
        return x

    def encode(self, tokens: Sequence[int]) -> EncoderOutput:
        """Single-sentence convenience wrapper (inference, dropout off)."""
        ids = np.asarray(list(tokens), dtype=np.int64)[None, :]
        with T.no_grad():
            states = self.forward(ids)
        return EncoderOutput(states=T.reshape(states, states.shape[1:]),
                             token_ids=tuple(int(i) for i in tokens))


class Decoder(Module):
    """Target embedding + fused decoder layers + output projection."""

    def __init__(self, cfg: ModelConfig, rng):
        self.emb = Embedding(cfg.tgt_vocab, cfg.d_model, rng)
        gate = cfg.gate if cfg.fusion_scheme == "gate" else None
        self.layers = ModuleList(
            build_decoder_layer(cfg.fusion_scheme, cfg.d_model, cfg.n_heads,
                                cfg.d_ff, cfg.dropout, rng, gate,
                                cfg.identity_mode)
            for _ in range(cfg.n_dec_layers)
        )
        self.out_w = Parameter(_uniform_init(rng, cfg.d_model, cfg.tgt_vocab))
        self.out_b = Parameter(np.zeros(cfg.tgt_vocab, dtype=np.float32))
        self.positions = sinusoidal_positions(cfg.max_len, cfg.d_model)
        self.cfg = cfg
        self.p = 0.0 if cfg.identity_mode else cfg.dropout

    def forward(self, tgt_ids: np.ndarray, enc_h, enc_n, self_mask, cross_mask,
                train=False, rng=None) -> Tensor:
        """tgt_ids [B, T] -> logits [B, T, tgt_vocab]."""
        tgt_ids = np.asarray(tgt_ids)
        t = tgt_ids.shape[-1]
        if t > self.cfg.max_len:
            raise LengthError(f"target length {t} exceeds max_len {self.cfg.max_len}")
        x = T.mul(self.emb(tgt_ids), float(np.sqrt(self.cfg.d_model)))
        x = T.add(x, Tensor(self.positions.data[:t]))
        x = T.dropout(x, self.p, rng, train)
        for layer in self.layers:
            x = layer(x, enc_h, enc_n, self_mask, cross_mask, train, rng)
        return T.add(T.matmul(x, self.out_w.tensor), self.out_b.tensor)


class Seq2SeqModel(Module):
    """Encoder(s) + decoder. The second encoder feeds the fusion layers."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        if cfg.src_vocab <= 0 or cfg.tgt_vocab <= 0:
            raise ConfigError("src_vocab and tgt_vocab must be set before building")
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = Encoder(cfg.src_vocab, cfg.d_model, cfg.n_heads,
                               cfg.n_enc_layers, cfg.d_ff, cfg.max_len,
                               cfg.dropout, rng, cfg.identity_mode)
        if cfg.uses_second_encoder:
            self.second_encoder = Encoder(cfg.src_vocab, cfg.d_model, cfg.n_heads,
                                          cfg.n_enc_layers, cfg.d_ff, cfg.max_len,
                                          cfg.dropout, rng, cfg.identity_mode)
        else:
            self.second_encoder = None
        self.decoder = Decoder(cfg, rng)
        self.name_parameters()

    def name_parameters(self) -> dict:
        return dict(self.named_parameters())

    # ---------------- encoding ----------------

    def encode_source(self, src_ids: np.ndarray, src_mask=None, train=False, rng=None):
        """Returns (translation states, disambiguation states or None)."""
        enc_n = self.encoder.forward(src_ids, src_mask, train, rng)
        enc_h = None
        if self.second_encoder is not None:
            frozen = all(p.frozen for p in self.second_encoder.parameters())
            if frozen:
                with T.no_grad():
                    enc_h = self.second_encoder.forward(src_ids, src_mask, False, None)
            else:
                enc_h = self.second_encoder.forward(src_ids, src_mask, train, rng)
        return enc_n, enc_h

    # ---------------- training forward ----------------

    def forward_logits(self, src_ids, src_lengths, tgt_in, tgt_lengths,
                       train=False, rng=None) -> Tensor:
        src_ids = np.asarray(src_ids)
        tgt_in = np.asarray(tgt_in)
        b, ts = src_ids.shape
        tt = tgt_in.shape[1]
        src_mask = padding_mask(src_lengths, ts)
        enc_n, enc_h = self.encode_source(src_ids, src_mask, train, rng)
        self_mask = causal_mask(tt) & padding_mask(tgt_lengths, tt)
        return self.decoder.forward(tgt_in, enc_h, enc_n, self_mask, src_mask,
                                    train, rng)

    # ---------------- incremental decoding ----------------

    def decode_step(self, tgt_prefix: Sequence[int], enc_a: EncoderOutput,
                    enc_b: Optional[EncoderOutput] = None) -> np.ndarray:
        """Next-token logits [tgt_vocab] for a single prefix (inference)."""
        if self.cfg.uses_second_encoder and enc_b is None:
            raise ConfigError(
                f"scheme {self.cfg.fusion_scheme!r} needs two encoder outputs"
            )
        if not self.cfg.uses_second_encoder and enc_b is not None:
            raise ConfigError("baseline scheme takes a single encoder output")
        prefix = np.asarray(list(tgt_prefix), dtype=np.int64)[None, :]
        t = prefix.shape[1]
        enc_n = T.reshape(enc_a.states, (1,) + enc_a.states.shape)
        enc_h = None if enc_b is None else T.reshape(enc_b.states, (1,) + enc_b.states.shape)
        with T.no_grad():
            logits = self.decoder.forward(prefix, enc_h, enc_n,
                                          causal_mask(t), None, False, None)
        return logits.data[0, -1]

    def _encode_for_decoding(self, src_tokens: Sequence[int]):
        enc_a = self.encoder.encode(src_tokens)
        enc_b = None
        if self.second_encoder is not None:
            enc_b = self.second_encoder.encode(src_tokens)
        return enc_a, enc_b

    def decode_sequence(self, src_tokens: Sequence[int], bos: int, eos: int,
                        strategy: str = "greedy", beam_width: int = 4,
                        max_len: Optional[int] = None) -> List[int]:
        """Decode one source sentence to target ids (without bos/eos)."""
        if strategy not in ("greedy", "beam"):
            raise ConfigError(f"unknown decoding strategy {strategy!r}")
        limit = min(max_len or self.cfg.max_len, self.cfg.max_len)
        enc_a, enc_b = self._encode_for_decoding(src_tokens)
        if strategy == "greedy" or beam_width == 1:
            return self._greedy(enc_a, enc_b, bos, eos, limit)
        return self._beam(enc_a, enc_b, bos, eos, limit, beam_width)

    def _greedy(self, enc_a, enc_b, bos, eos, limit) -> List[int]:
        prefix = [bos]
        out: List[int] = []
        while len(out) < limit - 1:
            logits = self.decode_step(prefix, enc_a, enc_b)
            nxt = int(np.argmax(logits))
            if nxt == eos:
                break
            out.append(nxt)
            prefix.append(nxt)
        return out

    def _beam(self, enc_a, enc_b, bos, eos, limit, width) -> List[int]:
        live = [([bos], 0.0)]
        finished: List[Tuple[List[int], float]] = []
        for _ in range(limit - 1):
            candidates = []
            for prefix, score in live:
                logits = self.decode_step(prefix, enc_a, enc_b)
                logp = logits - _logsumexp(logits)
                top = np.argsort(logp)[::-1][:width]
                for tok in top:
                    candidates.append((prefix + [int(tok)], score + float(logp[tok])))
            candidates.sort(key=lambda c: c[1], reverse=True)
            live = []
            for prefix, score in candidates:
                if prefix[-1] == eos:
                    finished.append((prefix, score / max(1, len(prefix) - 1)))
                elif len(live) < width:
                    live.append((prefix, score))
                if len(live) >= width and len(finished) >= width:
                    break
            if not live:
                break
        if not finished:
            finished = [(p, s / max(1, len(p) - 1)) for p, s in live]
        best = max(finished, key=lambda c: c[1])[0]
        body = best[1:]
        if body and body[-1] == eos:
            body = body[:-1]
        return body

    def translate_batch(self, src_sentences: List[List[int]], bos: int, eos: int,
                        pad: int, max_len: Optional[int] = None) -> List[List[int]]:
        """Greedy decode a batch of source sentences in lockstep."""
        if not src_sentences:
            return []
        limit = min(max_len or self.cfg.max_len, self.cfg.max_len)
        b = len(src_sentences)
        lengths = np.array([len(s) for s in src_sentences])
        ts = int(lengths.max())
        src_ids = np.full((b, ts), pad, dtype=np.int64)
        for i, s in enumerate(src_sentences):
            src_ids[i, : len(s)] = s
        src_mask = padding_mask(lengths, ts)
        with T.no_grad():
            enc_n, enc_h = self.encode_source(src_ids, src_mask, False, None)
            ys = np.full((b, 1), bos, dtype=np.int64)
            done = np.zeros(b, dtype=bool)
            for _ in range(limit - 1):
                t = ys.shape[1]
                logits = self.decoder.forward(ys, enc_h, enc_n, causal_mask(t),
                                              src_mask, False, None)
                nxt = logits.data[:, -1].argmax(axis=1)
                nxt = np.where(done, eos, nxt)
                ys = np.concatenate([ys, nxt[:, None]], axis=1)
                done |= nxt == eos
                if done.all():
                    break
        outs: List[List[int]] = []
        for i in range(b):
            row = ys[i, 1:]
            stop = np.where(row == eos)[0]
            outs.append(row[: stop[0]].tolist() if stop.size else row.tolist())
        return outs


def _logsumexp(x: np.ndarray) -> float:
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))
