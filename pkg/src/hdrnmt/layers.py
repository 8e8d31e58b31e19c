"""Transformer building blocks: attention, feed-forward, layer norm, positions."""

from __future__ import annotations

from typing import Iterator, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .optim import Parameter
from .tensor import Tensor


class Module:
    """Minimal parameter container with recursive named collection."""

    def __setattr__(self, key, value):
        if isinstance(value, (Parameter, Module)):
            registry = self.__dict__.setdefault("_registry", {})
            registry[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in self.__dict__.get("_registry", {}).items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(value, Parameter):
                value.name = path
                yield path, value
            else:
                yield from value.named_parameters(path)

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.tensor.size for p in self.parameters())

    def freeze(self) -> None:
        for p in self.parameters():
            p.frozen = True


class ModuleList(Module):
    """List of submodules that participates in parameter collection."""

    def __init__(self, items):
        self.items = list(items)
        for i, item in enumerate(self.items):
            setattr(self, str(i), item)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]


def _uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)


def sinusoidal_positions(max_len: int, d_model: int) -> Tensor:
    """Fixed sine/cosine position table [max_len, d_model]."""
    if d_model % 2 != 0:
        raise DimensionError(f"d_model must be even, got {d_model}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    dim = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, dim / d_model)
    table = np.zeros((max_len, d_model), dtype=np.float32)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return Tensor(table)


class LayerNorm(Module):
    """Affine layer norm over the last axis; identity in identity mode."""

    def __init__(self, d_model: int, eps: float = 1e-5, identity: bool = False):
        self.gamma = Parameter(np.ones(d_model, dtype=np.float32))
        self.beta = Parameter(np.zeros(d_model, dtype=np.float32))
        self.eps = eps
        self.identity = identity

    def __call__(self, x: Tensor) -> Tensor:
        if self.identity:
            return x
        return T.layer_norm(x, self.gamma.tensor, self.beta.tensor, self.eps)


class FeedForward(Module):
    """Two-layer position-wise network with ReLU; identity in identity mode."""

    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator, identity: bool = False):
        self.w1 = Parameter(_uniform_init(rng, d_model, d_ff))
        self.b1 = Parameter(np.zeros(d_ff, dtype=np.float32))
        self.w2 = Parameter(_uniform_init(rng, d_ff, d_model))
        self.b2 = Parameter(np.zeros(d_model, dtype=np.float32))
        self.identity = identity

    def __call__(self, x: Tensor) -> Tensor:
        if self.identity:
            return x
        hidden = T.relu(T.matmul(x, self.w1.tensor) + self.b1.tensor)
        return T.matmul(hidden, self.w2.tensor) + self.b2.tensor


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head slicing and output projection.

    Inputs may be [T, d_model] or [B, T, d_model]; the mask must broadcast to
    the attention matrix [B, T_q, T_kv] with True marking usable positions.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads != 0:
            raise DimensionError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Parameter(_uniform_init(rng, d_model, d_model))
        self.wk = Parameter(_uniform_init(rng, d_model, d_model))
        self.wv = Parameter(_uniform_init(rng, d_model, d_model))
        self.wo = Parameter(_uniform_init(rng, d_model, d_model))
        self.bq = Parameter(np.zeros(d_model, dtype=np.float32))
        self.bk = Parameter(np.zeros(d_model, dtype=np.float32))
        self.bv = Parameter(np.zeros(d_model, dtype=np.float32))
        self.bo = Parameter(np.zeros(d_model, dtype=np.float32))
        self.last_weights: Optional[np.ndarray] = None

    def __call__(
        self,
        q_in: Tensor,
        k_in: Tensor,
        v_in: Tensor,
        mask: Optional[np.ndarray] = None,
        record_weights: bool = False,
    ) -> Tensor:
        for name, t in (("query", q_in), ("key", k_in), ("value", v_in)):
            if t.shape[-1] != self.d_model:
                raise DimensionError(
                    f"{name} width {t.shape[-1]} does not match d_model {self.d_model}"
                )
        squeeze = q_in.ndim == 2
        if squeeze:
            q_in = T.reshape(q_in, (1,) + q_in.shape)
            k_in = T.reshape(k_in, (1,) + k_in.shape)
            v_in = T.reshape(v_in, (1,) + v_in.shape)

        q = T.matmul(q_in, self.wq.tensor) + self.bq.tensor
        k = T.matmul(k_in, self.wk.tensor) + self.bk.tensor
        v = T.matmul(v_in, self.wv.tensor) + self.bv.tensor

        scale = 1.0 / np.sqrt(self.d_head)
        heads = []
        weights = []
        for h in range(self.n_heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            qh = T.slice_last(q, lo, hi)
            kh = T.slice_last(k, lo, hi)
            vh = T.slice_last(v, lo, hi)
            scores = T.mul(T.matmul(qh, T.transpose_last(kh)), scale)
            attn = T.softmax(scores, axis=-1, mask=mask)
            if record_weights:
                weights.append(attn.data)
            heads.append(T.matmul(attn, vh))
        out = T.concat_last(heads)
        out = T.matmul(out, self.wo.tensor) + self.bo.tensor
        self.last_weights = np.stack(weights, axis=1) if record_weights else None
        if squeeze:
            out = T.reshape(out, out.shape[1:])
        return out


class Embedding(Module):
    """Token embedding table."""

    def __init__(self, vocab_size: int, d_model: int, rng: np.random.Generator):
        scale = 1.0 / np.sqrt(d_model)
        self.table = Parameter(
            rng.normal(0.0, scale, size=(vocab_size, d_model)).astype(np.float32)
        )
        self.vocab_size = vocab_size

    def __call__(self, ids: np.ndarray) -> Tensor:
        return T.embedding(self.table.tensor, ids)


def causal_mask(t: int) -> np.ndarray:
    """[1, t, t] lower-triangular keep-mask."""
    return np.tril(np.ones((t, t), dtype=bool))[None, :, :]


def padding_mask(lengths: np.ndarray, t: int) -> np.ndarray:
    """[B, 1, t] keep-mask from per-sequence lengths."""
    lengths = np.asarray(lengths)
    return (np.arange(t)[None, :] < lengths[:, None])[:, None, :]
