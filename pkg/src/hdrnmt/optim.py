"""Parameters and the adaptive-moment optimizer with warmup scheduling."""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from .errors import TrainingStateError
from .tensor import Tensor


class Parameter:
    """A named, trainable (unless frozen) tensor."""

    def __init__(self, data, frozen: bool = False, name: str = ""):
        self.tensor = Tensor(np.asarray(data), requires_grad=not frozen)
        self.name = name
        self._frozen = frozen

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self._frozen = bool(value)
        self.tensor.requires_grad = not self._frozen
        if self._frozen:
            self.tensor.grad = None

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self) -> str:
        tag = ", frozen" if self._frozen else ""
        return f"Parameter({self.name!r}, shape={self.tensor.shape}{tag})"


class Adam:
    """Adam with bias correction; moment buffers only for non-frozen parameters.

    The learning rate is a plain attribute so a schedule can set it per step.
    """

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-3,
        betas: tuple = (0.9, 0.98),
        eps: float = 1e-9,
    ):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {i: np.zeros_like(p.data) for i, p in enumerate(self.params) if not p.frozen}
        self.v = {i: np.zeros_like(p.data) for i, p in enumerate(self.params) if not p.frozen}

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.grad = None

    def step(self) -> None:
        """One update; frozen parameters are untouched, gradients cleared after."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            if p.frozen:
                continue
            g = p.tensor.grad
            if g is None:
                raise TrainingStateError(f"missing gradient for parameter {p.name!r}")
            m = self.m[i]
            v = self.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.tensor.data -= (self.lr * update).astype(p.tensor.data.dtype)
            p.tensor.grad = None


class WarmupInverseSqrt:
    """Linear warmup to base_lr, then inverse-square-root decay."""

    def __init__(self, base_lr: float = 1e-3, warmup_steps: int = 400):
        self.base_lr = base_lr
        self.warmup_steps = max(1, int(warmup_steps))

    def __call__(self, step: int) -> float:
        step = max(1, int(step))
        scale = min(step / self.warmup_steps, (self.warmup_steps / step) ** 0.5)
        return self.base_lr * scale


class EarlyStopper:
    """Stop after `patience` evaluations without held-out loss improvement."""

    def __init__(self, patience: Optional[int] = 3, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best: Optional[float] = None
        self.bad_evals = 0

    def update(self, loss: float) -> bool:
        """Record one evaluation; returns True when training should stop."""
        if self.patience is None:
            return False
        if self.best is None or loss < self.best - self.min_delta:
            self.best = loss
            self.bad_evals = 0
            return False
        self.bad_evals += 1
        return self.bad_evals >= self.patience
