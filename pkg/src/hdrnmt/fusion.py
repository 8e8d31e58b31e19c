"""Decoder-layer variants that merge two encoders' states into the decoder.

Five layer types share the same self-attention front end and differ in how
the cross-attention results are combined:

  baseline  - single cross-attention over the translation encoder
  add       - two cross-attentions, separately normalized, summed through
              twin feed-forward blocks
  gate      - two cross-attentions blended by a convex gate before one
              feed-forward block
  cascade   - disambiguation cross-attention first, translation
              cross-attention stacked on its output
  selection - one cross-attention whose keys concatenate both encoders'
              key projections (feature axis) while values come from the
              translation encoder only

Every layer exposes `combine(s, a_h, a_n)` (the algebra applied to fixed
cross-attention outputs), which identity-mode tests exercise directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .layers import FeedForward, LayerNorm, Module, MultiHeadAttention, _uniform_init
from .optim import Parameter
from .tensor import Tensor

FUSION_SCHEMES = ("baseline", "add", "gate", "cascade", "selection")


@dataclass
class GateConfig:
    """Blend control for the gate scheme: a fixed value in [0, 1] or a learned
    per-position sigmoid gate."""

    mode: str = "fixed"
    value: float = 0.5

    def __post_init__(self):
        if self.mode not in ("fixed", "sigmoid"):
            raise ConfigError(f"unknown gate mode {self.mode!r}")
        if self.mode == "fixed" and not (0.0 <= self.value <= 1.0):
            raise ConfigError(f"fixed gate value {self.value} outside [0, 1]")

    @classmethod
    def parse(cls, text: str) -> "GateConfig":
        if text == "sigmoid":
            return cls(mode="sigmoid")
        if text.startswith("fixed:"):
            try:
                return cls(mode="fixed", value=float(text.split(":", 1)[1]))
            except ValueError as exc:
                raise ConfigError(f"bad gate spec {text!r}") from exc
        raise ConfigError(f"bad gate spec {text!r} (want 'fixed:<g>' or 'sigmoid')")

    def render(self) -> str:
        return "sigmoid" if self.mode == "sigmoid" else f"fixed:{self.value}"


@dataclass
class FusionInputs:
    """Self-attention output plus the two encoders' state sequences."""

    s: Tensor
    hdr_states: Tensor
    nmt_states: Tensor
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.hdr_states.shape[-2] != self.nmt_states.shape[-2]:
            raise DimensionError(
                "encoder state lengths disagree: "
                f"{self.hdr_states.shape} vs {self.nmt_states.shape}"
            )


def _check_same_length(hdr: Tensor, nmt: Tensor) -> None:
    if hdr.shape[-2] != nmt.shape[-2]:
        raise DimensionError(
            f"encoder state lengths disagree: {hdr.shape} vs {nmt.shape}"
        )


class _DecoderLayerBase(Module):
    """Shared self-attention front end."""

    def __init__(self, d_model, n_heads, dropout, rng, identity=False):
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln_self = LayerNorm(d_model, identity=identity)
        self.p = 0.0 if identity else dropout
        self.identity = identity

    def _self_block(self, x, self_mask, train, rng):
        sa = self.self_attn(x, x, x, self_mask)
        return self.ln_self(x + T.dropout(sa, self.p, rng, train))

    def __call__(self, x, enc_h, enc_n, self_mask, cross_mask, train=False, rng=None):
        s = self._self_block(x, self_mask, train, rng)
        return self.fuse(s, enc_h, enc_n, cross_mask, train, rng)


class BaselineDecoderLayer(_DecoderLayerBase):
    def __init__(self, d_model, n_heads, d_ff, dropout, rng, identity=False):
        super().__init__(d_model, n_heads, dropout, rng, identity)
        self.nmt_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln_cross = LayerNorm(d_model, identity=identity)
        self.ffn = FeedForward(d_model, d_ff, rng, identity=identity)
        self.ln_ffn = LayerNorm(d_model, identity=identity)

    def fuse(self, s, enc_h, enc_n, mask, train=False, rng=None):
        if enc_h is not None:
            raise ConfigError("baseline layer takes a single encoder")
        a_n = T.dropout(self.nmt_attn(s, enc_n, enc_n, mask), self.p, rng, train)
        s2 = self.ln_cross(s + a_n)
        return self.ln_ffn(s2 + T.dropout(self.ffn(s2), self.p, rng, train))


class AddDecoderLayer(_DecoderLayerBase):
    """Both cross-attentions normalized against s, then summed through twin
    feed-forward blocks (separate parameter sets)."""

    def __init__(self, d_model, n_heads, d_ff, dropout, rng, identity=False):
        super().__init__(d_model, n_heads, dropout, rng, identity)
        self.hdr_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.nmt_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln_h = LayerNorm(d_model, identity=identity)
        self.ln_n = LayerNorm(d_model, identity=identity)
        self.ffn_h = FeedForward(d_model, d_ff, rng, identity=identity)
        self.ffn_n = FeedForward(d_model, d_ff, rng, identity=identity)
        self.ln_out = LayerNorm(d_model, identity=identity)

    def combine(self, s, a_h, a_n, train=False, rng=None):
        s_h = self.ln_h(s + a_h)
        s_n = self.ln_n(s + a_n)
        f_h = T.dropout(self.ffn_h(s_h), self.p, rng, train)
        f_n = T.dropout(self.ffn_n(s_n), self.p, rng, train)
        return self.ln_out(f_h + f_n + s_h + s_n)

    def fuse(self, s, enc_h, enc_n, mask, train=False, rng=None):
        _check_same_length(enc_h, enc_n)
        a_h = T.dropout(self.hdr_attn(s, enc_h, enc_h, mask), self.p, rng, train)
        a_n = T.dropout(self.nmt_attn(s, enc_n, enc_n, mask), self.p, rng, train)
        return self.combine(s, a_h, a_n, train, rng)


class GateDecoderLayer(_DecoderLayerBase):
    """Convex blend g*s_H + (1-g)*s_N feeding one feed-forward block, with both
    branches kept as residuals."""

    def __init__(self, d_model, n_heads, d_ff, dropout, rng, gate: GateConfig,
                 identity=False):
        super().__init__(d_model, n_heads, dropout, rng, identity)
        self.gate = gate
        self.hdr_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.nmt_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln_h = LayerNorm(d_model, identity=identity)
        self.ln_n = LayerNorm(d_model, identity=identity)
        self.ffn = FeedForward(d_model, d_ff, rng, identity=identity)
        self.ln_out = LayerNorm(d_model, identity=identity)
        if gate.mode == "sigmoid":
            self.w_gate = Parameter(_uniform_init(rng, 2 * d_model, 1))
            self.b_gate = Parameter(np.zeros(1, dtype=np.float32))

    def gate_values(self, s_h: Tensor, s_n: Tensor):
        """Blend weight: a float for fixed mode, a [..., 1] tensor for sigmoid."""
        if self.gate.mode == "fixed":
            return self.gate.value
        joint = T.concat_last([s_h, s_n])
        return T.sigmoid(T.matmul(joint, self.w_gate.tensor) + self.b_gate.tensor)

    def blend(self, s_h: Tensor, s_n: Tensor) -> Tensor:
        """The convex combination g*s_H + (1-g)*s_N that feeds the FFN."""
        g = self.gate_values(s_h, s_n)
        if isinstance(g, float):
            if g == 1.0:
                return s_h
            if g == 0.0:
                return s_n
            return T.add(T.mul(s_h, g), T.mul(s_n, 1.0 - g))
        return T.add(T.mul(s_h, g), T.mul(s_n, T.sub(1.0, g)))

    def gate_core(self, s_h, s_n, train=False, rng=None):
        blended = self.blend(s_h, s_n)
        f = T.dropout(self.ffn(blended), self.p, rng, train)
        return self.ln_out(f + s_h + s_n)

    def combine(self, s, a_h, a_n, train=False, rng=None):
        s_h = self.ln_h(s + a_h)
        s_n = self.ln_n(s + a_n)
        return self.gate_core(s_h, s_n, train, rng)

    def fuse(self, s, enc_h, enc_n, mask, train=False, rng=None):
        _check_same_length(enc_h, enc_n)
        a_h = T.dropout(self.hdr_attn(s, enc_h, enc_h, mask), self.p, rng, train)
        a_n = T.dropout(self.nmt_attn(s, enc_n, enc_n, mask), self.p, rng, train)
        return self.combine(s, a_h, a_n, train, rng)


class CascadeDecoderLayer(_DecoderLayerBase):
    """Disambiguation cross-attention first; its normalized output queries the
    translation encoder."""

    def __init__(self, d_model, n_heads, d_ff, dropout, rng, identity=False):
        super().__init__(d_model, n_heads, dropout, rng, identity)
        self.hdr_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.nmt_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln_1 = LayerNorm(d_model, identity=identity)
        self.ln_2 = LayerNorm(d_model, identity=identity)
        self.ln_3 = LayerNorm(d_model, identity=identity)
        self.ffn = FeedForward(d_model, d_ff, rng, identity=identity)

    def _finish(self, s1, a_n, train=False, rng=None):
        x = self.ln_2(s1 + a_n)
        return self.ln_3(T.dropout(self.ffn(x), self.p, rng, train) + x)

    def combine(self, s, a_h, a_n, train=False, rng=None):
        s1 = self.ln_1(s + a_h)
        return self._finish(s1, a_n, train, rng)

    def fuse(self, s, enc_h, enc_n, mask, train=False, rng=None):
        _check_same_length(enc_h, enc_n)
        a_h = T.dropout(self.hdr_attn(s, enc_h, enc_h, mask), self.p, rng, train)
        s1 = self.ln_1(s + a_h)
        a_n = T.dropout(self.nmt_attn(s1, enc_n, enc_n, mask), self.p, rng, train)
        return self._finish(s1, a_n, train, rng)


class SelectionAttention(Module):
    """Single cross-attention with per-head keys [K_H ; K_N] (feature axis) and
    values from the translation encoder only. Queries are projected to the
    doubled key width; scores scale by the actual key width."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads != 0:
            raise DimensionError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Parameter(_uniform_init(rng, d_model, 2 * d_model))
        self.bq = Parameter(np.zeros(2 * d_model, dtype=np.float32))
        self.wk_h = Parameter(_uniform_init(rng, d_model, d_model))
        self.bk_h = Parameter(np.zeros(d_model, dtype=np.float32))
        self.wk_n = Parameter(_uniform_init(rng, d_model, d_model))
        self.bk_n = Parameter(np.zeros(d_model, dtype=np.float32))
        self.wv = Parameter(_uniform_init(rng, d_model, d_model))
        self.bv = Parameter(np.zeros(d_model, dtype=np.float32))
        self.wo = Parameter(_uniform_init(rng, d_model, d_model))
        self.bo = Parameter(np.zeros(d_model, dtype=np.float32))
        self.last_weights: Optional[np.ndarray] = None

    def __call__(self, q_in, hdr_states, nmt_states, mask=None, record_weights=False):
        _check_same_length(hdr_states, nmt_states)
        squeeze = q_in.ndim == 2
        if squeeze:
            q_in = T.reshape(q_in, (1,) + q_in.shape)
            hdr_states = T.reshape(hdr_states, (1,) + hdr_states.shape)
            nmt_states = T.reshape(nmt_states, (1,) + nmt_states.shape)
        q = T.matmul(q_in, self.wq.tensor) + self.bq.tensor
        k_h = T.matmul(hdr_states, self.wk_h.tensor) + self.bk_h.tensor
        k_n = T.matmul(nmt_states, self.wk_n.tensor) + self.bk_n.tensor
        v = T.matmul(nmt_states, self.wv.tensor) + self.bv.tensor

        scale = 1.0 / np.sqrt(2 * self.d_head)
        heads = []
        weights = []
        for h in range(self.n_heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            qh = T.slice_last(q, 2 * lo, 2 * hi)
            kh = T.concat_last([T.slice_last(k_h, lo, hi), T.slice_last(k_n, lo, hi)])
            vh = T.slice_last(v, lo, hi)
            scores = T.mul(T.matmul(qh, T.transpose_last(kh)), scale)
            attn = T.softmax(scores, axis=-1, mask=mask)
            if record_weights:
                weights.append(attn.data)
            heads.append(T.matmul(attn, vh))
        out = T.matmul(T.concat_last(heads), self.wo.tensor) + self.bo.tensor
        self.last_weights = np.stack(weights, axis=1) if record_weights else None
        if squeeze:
            out = T.reshape(out, out.shape[1:])
        return out


class SelectionDecoderLayer(_DecoderLayerBase):
    def __init__(self, d_model, n_heads, d_ff, dropout, rng, identity=False):
        super().__init__(d_model, n_heads, dropout, rng, identity)
        self.sel_attn = SelectionAttention(d_model, n_heads, rng)
        self.ln_cross = LayerNorm(d_model, identity=identity)
        self.ffn = FeedForward(d_model, d_ff, rng, identity=identity)
        self.ln_ffn = LayerNorm(d_model, identity=identity)

    def fuse(self, s, enc_h, enc_n, mask, train=False, rng=None):
        a = T.dropout(self.sel_attn(s, enc_h, enc_n, mask), self.p, rng, train)
        s2 = self.ln_cross(s + a)
        return self.ln_ffn(s2 + T.dropout(self.ffn(s2), self.p, rng, train))


def build_decoder_layer(scheme: str, d_model, n_heads, d_ff, dropout, rng,
                        gate: Optional[GateConfig] = None, identity=False):
    if scheme == "baseline":
        return BaselineDecoderLayer(d_model, n_heads, d_ff, dropout, rng, identity)
    if scheme == "add":
        return AddDecoderLayer(d_model, n_heads, d_ff, dropout, rng, identity)
    if scheme == "gate":
        return GateDecoderLayer(d_model, n_heads, d_ff, dropout, rng,
                                gate or GateConfig(), identity)
    if scheme == "cascade":
        return CascadeDecoderLayer(d_model, n_heads, d_ff, dropout, rng, identity)
    if scheme == "selection":
        return SelectionDecoderLayer(d_model, n_heads, d_ff, dropout, rng, identity)
    raise ConfigError(f"unknown fusion scheme {scheme!r}")


def fuse_add(inputs: FusionInputs, layer: AddDecoderLayer, train=False, rng=None):
    return layer.fuse(inputs.s, inputs.hdr_states, inputs.nmt_states, inputs.mask,
                      train, rng)


def fuse_gate(inputs: FusionInputs, layer: GateDecoderLayer, train=False, rng=None):
    return layer.fuse(inputs.s, inputs.hdr_states, inputs.nmt_states, inputs.mask,
                      train, rng)


def fuse_cascade(inputs: FusionInputs, layer: CascadeDecoderLayer, train=False, rng=None):
    return layer.fuse(inputs.s, inputs.hdr_states, inputs.nmt_states, inputs.mask,
                      train, rng)


def fuse_selection(inputs: FusionInputs, layer: SelectionDecoderLayer, train=False, rng=None):
    return layer.fuse(inputs.s, inputs.hdr_states, inputs.nmt_states, inputs.mask,
                      train, rng)
