"""Dense rank-<=3 tensors with reverse-mode autodiff on a numpy backend.

Values are float32 by default; every op preserves the dtype of its inputs,
so gradient checks can run the same graph in float64.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateMaskError,
    DegenerateVectorError,
    DimensionError,
    LabelError,
    NumericalError,
    TrainingStateError,
)

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / data prep)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense array of rank <= 3 with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = ()):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim > 3:
            raise DimensionError(f"rank {arr.ndim} tensor exceeds the rank-3 limit")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._backward: Optional[Callable[[], None]] = None
        self._parents = _parents

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this tensor (scalar unless seed given)."""
        if not self.requires_grad:
            raise TrainingStateError("backward() called on a tensor without gradients")
        if seed is None:
            if self.size != 1:
                raise DimensionError(
                    f"backward() needs a scalar output, got shape {self.shape}"
                )
            seed = np.ones_like(self.data)
        self.grad = np.asarray(seed, dtype=self.data.dtype).reshape(self.shape)
        for node in _topo_order(self):
            if node._backward is not None:
                node._backward()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"

    # operator sugar; full implementations below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _topo_order(root: Tensor) -> list:
    """Reverse topological order of the graph above `root` (iterative)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    if arr.dtype.kind != "f":
        arr = arr.astype(dtype if dtype is not None else DEFAULT_DTYPE)
    return Tensor(arr)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _make(out_data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=track, _parents=tuple(parents) if track else ())
    if track:
        out._backward = backward_fn(out)
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad, b.shape))
        return run

    return _make(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-out.grad, b.shape))
        return run

    return _make(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad * a.data, b.shape))
        return run

    return _make(data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))
        return run

    return _make(data, (a, b), bw)


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    data = a.data ** exponent

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * exponent * a.data ** (exponent - 1))
        return run

    return _make(data, (a,), bw)


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    data = np.abs(a.data)

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * np.sign(a.data))
        return run

    return _make(data, (a,), bw)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * out.data)
        return run

    return _make(data, (a,), bw)


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad / a.data)
        return run

    return _make(data, (a,), bw)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0)

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * (a.data > 0))
        return run

    return _make(data, (a,), bw)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * out.data * (1.0 - out.data))
        return run

    return _make(data, (a,), bw)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * (1.0 - out.data * out.data))
        return run

    return _make(data, (a,), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(out):
        def run():
            if not a.requires_grad:
                return
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        return run

    return _make(data, (a,), bw)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad.reshape(a.shape))
        return run

    return _make(data, (a,), bw)


def transpose_last(a) -> Tensor:
    """Swap the last two axes (rank 2 or 3)."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose needs rank >= 2, got shape {a.shape}")
    axes = (1, 0) if a.ndim == 2 else (0, 2, 1)
    data = a.data.transpose(axes)

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad.transpose(axes))
        return run

    return _make(data, (a,), bw)


def slice_last(a, start: int, stop: int) -> Tensor:
    """Columns [start:stop] of the last axis."""
    a = _as_tensor(a)
    data = a.data[..., start:stop]

    def bw(out):
        def run():
            if a.requires_grad:
                g = np.zeros_like(a.data)
                g[..., start:stop] = out.grad
                a._accumulate(g)
        return run

    return _make(data, (a,), bw)


def concat_last(parts: Iterable) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.shape[-1] for p in parts]

    def bw(out):
        def run():
            offset = 0
            for p, w in zip(parts, widths):
                if p.requires_grad:
                    p._accumulate(out.grad[..., offset:offset + w])
                offset += w
        return run

    return _make(data, tuple(parts), bw)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids]; gradient scatter-adds into the table."""
    ids = np.asarray(ids)
    data = table.data[ids]

    def bw(out):
        def run():
            if table.requires_grad:
                g = np.zeros_like(table.data)
                np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, table.shape[-1]))
                table._accumulate(g)
        return run

    return _make(data, (table,), bw)


def take_positions(states: Tensor, positions: np.ndarray) -> Tensor:
    """Pick states[b, positions[b], :] from a [B, T, D] tensor -> [B, D]."""
    positions = np.asarray(positions)
    if states.ndim != 3:
        raise DimensionError(f"take_positions expects rank 3, got {states.shape}")
    rows = np.arange(states.shape[0])
    data = states.data[rows, positions]

    def bw(out):
        def run():
            if states.requires_grad:
                g = np.zeros_like(states.data)
                g[rows, positions] = out.grad
                states._accumulate(g)
        return run

    return _make(data, (states,), bw)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product for (2d,2d), (3d,3d) batched, and (3d,2d) cases."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    case = (a.ndim, b.ndim)
    if case not in ((2, 2), (3, 3), (3, 2)):
        raise DimensionError(f"unsupported matmul ranks: {a.shape} x {b.shape}")
    if case == (3, 3) and a.shape[0] != b.shape[0]:
        raise DimensionError(f"batched matmul batch mismatch: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bw(out):
        def run():
            g = out.grad
            if case == (2, 2):
                if a.requires_grad:
                    a._accumulate(g @ b.data.T)
                if b.requires_grad:
                    b._accumulate(a.data.T @ g)
            elif case == (3, 3):
                if a.requires_grad:
                    a._accumulate(g @ b.data.transpose(0, 2, 1))
                if b.requires_grad:
                    b._accumulate(a.data.transpose(0, 2, 1) @ g)
            else:  # (3, 2)
                if a.requires_grad:
                    a._accumulate(g @ b.data.T)
                if b.requires_grad:
                    k = a.shape[-1]
                    b._accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
        return run

    return _make(data, (a, b), bw)


# ---------------------------------------------------------------------------
# softmax / layer norm / losses
# ---------------------------------------------------------------------------

def softmax(x, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Masked softmax along `axis`; mask entries that are False become exactly 0.

    Raises DegenerateMaskError when a slice has no unmasked position.
    """
    x = _as_tensor(x)
    if mask is None:
        m = x.data.max(axis=axis, keepdims=True)
        e = np.exp(x.data - m)
        z = e.sum(axis=axis, keepdims=True)
        y = e / z
    else:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        counts = valid.sum(axis=axis)
        if np.any(counts == 0):
            raise DegenerateMaskError("softmax slice with every position masked")
        m = np.max(np.where(valid, x.data, -np.inf), axis=axis, keepdims=True)
        e = np.zeros_like(x.data)
        np.exp(x.data - m, out=e, where=valid)
        z = e.sum(axis=axis, keepdims=True)
        y = e / z

    def bw(out):
        def run():
            if x.requires_grad:
                g = out.grad
                inner = (g * out.data).sum(axis=axis, keepdims=True)
                x._accumulate(out.data * (g - inner))
        return run

    return _make(y, (x,), bw)


def layer_norm(x, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then affine."""
    x = _as_tensor(x)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)  # population variance
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    y = gamma.data * xhat + beta.data

    def bw(out):
        def run():
            g = out.grad
            if gamma.requires_grad:
                gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
            if beta.requires_grad:
                beta._accumulate(g.reshape(-1, d).sum(axis=0))
            if x.requires_grad:
                dxhat = g * gamma.data
                term = dxhat - dxhat.mean(axis=-1, keepdims=True) \
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
                x._accumulate(inv_std * term)
        return run

    return _make(y, (x, gamma, beta), bw)


def cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    label_smoothing: float = 0.0,
    ignore_index: Optional[int] = None,
) -> Tensor:
    """Mean negative log-probability of the target classes.

    With label_smoothing s, the target distribution is (1-s)*onehot + s/C.
    Rows whose target equals ignore_index contribute nothing.
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [n, c] logits, got {logits.shape}")
    targets = np.asarray(targets)
    n, c = logits.shape
    if targets.shape != (n,):
        raise DimensionError(f"targets shape {targets.shape} does not match {n} rows")
    keep = np.ones(n, dtype=bool) if ignore_index is None else targets != ignore_index
    if not keep.any():
        raise LabelError("cross_entropy: every row is ignored")
    checked = targets[keep]
    if checked.min() < 0 or checked.max() >= c:
        bad = checked[(checked < 0) | (checked >= c)][0]
        raise LabelError(f"target index {bad} outside [0, {c})")

    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=1, keepdims=True))
    safe_targets = np.where(keep, targets, 0)
    nll = lse[:, 0] - x[np.arange(n), safe_targets]
    if label_smoothing > 0.0:
        uniform = (lse[:, 0] - x.mean(axis=1))
        per_row = (1.0 - label_smoothing) * nll + label_smoothing * uniform
    else:
        per_row = nll
    n_kept = int(keep.sum())
    loss = per_row[keep].sum() / n_kept

    def bw(out):
        def run():
            if not logits.requires_grad:
                return
            p = np.exp(x - lse)
            q = np.zeros_like(x)
            q[np.arange(n), safe_targets] = 1.0 - label_smoothing
            q += label_smoothing / c
            d = (p - q) * (out.grad.reshape(-1)[0] / n_kept)
            d[~keep] = 0.0
            logits._accumulate(d.astype(x.dtype))
        return run

    return _make(np.asarray(loss, dtype=x.dtype), (logits,), bw)


def cosine_distance(a: Tensor, b: Tensor) -> Tensor:
    """1 - cos(a, b) for two vectors; raises on zero-norm inputs."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"cosine_distance expects equal-shape vectors, got {a.shape}, {b.shape}")
    if not np.linalg.norm(a.data) or not np.linalg.norm(b.data):
        raise DegenerateVectorError("cosine distance of a zero-norm vector")
    num = tsum(mul(a, b))
    denom = mul(power(tsum(mul(a, a)), 0.5), power(tsum(mul(b, b)), 0.5))
    return sub(1.0, div(num, denom))


def paired_cosine_distance(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise 1 - cos for [N, D] pairs -> [N]."""
    if a.ndim != 2 or a.shape != b.shape:
        raise DimensionError(f"paired_cosine_distance expects matching [N, D], got {a.shape}, {b.shape}")
    norms_a = np.linalg.norm(a.data, axis=1)
    norms_b = np.linalg.norm(b.data, axis=1)
    if np.any(norms_a == 0) or np.any(norms_b == 0):
        raise DegenerateVectorError("cosine distance of a zero-norm hidden state")
    num = tsum(mul(a, b), axis=1)
    denom = mul(power(tsum(mul(a, a), axis=1), 0.5), power(tsum(mul(b, b), axis=1), 0.5))
    return sub(1.0, div(num, denom))


def dropout(x: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def bw(out):
        def run():
            if x.requires_grad:
                x._accumulate(out.grad * keep)
        return run

    return _make(x.data * keep, (x,), bw)


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite values in {what}")
    return t


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-3,
) -> float:
    """Worst elementwise relative error between reverse-mode and central differences.

    `f` must be a pure scalar-valued map of its tensor argument. Run it on a
    float64 tensor for a tight check; float32 inputs give a noisier estimate.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise DimensionError(f"finite_difference_check needs a scalar map, got {out.shape}")
    if not np.isfinite(out.data).all():
        raise NumericalError("non-finite output in finite_difference_check")
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    numeric = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(f(Tensor(probe.data.copy())).data)
            flat[i] = orig - h
            lo = float(f(Tensor(probe.data.copy())).data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericalError("non-finite evaluation while perturbing input")
            num_flat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom))
