"""SGD with momentum, weight decay and gradient accumulation over ``iter_size`` passes."""
from __future__ import annotations

from typing import Iterable

from semedge.errors import UsageError
from semedge.kernel.tensor import Parameter


class SGD:
    def __init__(self, params: Iterable[Parameter], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0005, iter_size: int = 10):
        if iter_size < 1:
            raise UsageError("iter_size must be >= 1")
        self.params = [p for p in params if not p.frozen]
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.iter_size = iter_size
        self.pending = 0
        self.steps = 0

    def accumulated(self) -> None:
        """Mark that one more backward pass has been added into the gradients."""
        self.pending += 1

    def ready(self) -> bool:
        return self.pending >= self.iter_size

    def step(self) -> None:
        """v <- m*v + lr*(mean_grad + wd*w); w <- w - v; then zero the gradients."""
        if self.pending != self.iter_size:
            raise UsageError(f"step() after {self.pending} accumulations; expected {self.iter_size}")
        scale = 1.0 / self.iter_size
        for p in self.params:
            g = p.grad * scale + self.weight_decay * p.data
            p.momentum *= self.momentum
            p.momentum += self.lr * g
            p.data -= p.momentum
            p.zero_grad()
        self.pending = 0
        self.steps += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
        self.pending = 0


def step_lr(base_lr: float, step: int, step_size: int, gamma: float) -> float:
    """Step decay: base_lr * gamma ** (step // step_size)."""
    if step_size <= 0:
        return base_lr
    return base_lr * gamma ** (step // step_size)
