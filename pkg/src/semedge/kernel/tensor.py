"""Tensors, parameters and the recording tape.

A ``Tensor`` wraps a rank-4 numpy array laid out as (batch, channel, height,
width). Ops in :mod:`semedge.kernel.ops` append a record to the active
``Tape`` (if any); ``Tape.backward`` replays the records in reverse.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from semedge.errors import ConfigError, NumericError

DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "name")

    def __init__(self, data, name: str | None = None):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ConfigError(f"tensor must be rank 4 (n, c, h, w), got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DTYPE)
        self.data = arr
        self.name = name

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"


class Parameter(Tensor):
    """A trainable tensor with its gradient and momentum buffer.

    Frozen parameters (e.g. fixed bilinear kernels) take part in the forward
    pass but never receive gradients or updates.
    """

    __slots__ = ("grad", "momentum", "frozen")

    def __init__(self, data, name: str | None = None, frozen: bool = False):
        super().__init__(data, name)
        self.frozen = frozen
        self.grad = np.zeros_like(self.data)
        self.momentum = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def astype(self, dtype) -> None:
        """Convert value, grad and momentum in place (used by 64-bit gradient checks)."""
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.momentum = self.momentum.astype(dtype)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


@dataclass
class Tape:
    """Ordered log of executed ops.

    Used as a context manager; ops executed inside the ``with`` block are
    recorded. Outside any tape, ops run forward-only.
    """

    records: list[_Record] = field(default_factory=list)
    grads: dict[int, np.ndarray] = field(default_factory=dict)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: BackwardFn) -> None:
        self.records.append(_Record(out, tuple(inputs), backward))

    def backward(self, seeds: dict[Tensor, np.ndarray] | Sequence[tuple[Tensor, np.ndarray]]) -> None:
        """Propagate output gradients back to every reachable Parameter.

        ``seeds`` maps output tensors to dL/d(output). Parameter gradients
        are *added* to ``Parameter.grad`` so repeated calls accumulate.
        """
        items = seeds.items() if isinstance(seeds, dict) else seeds
        grads = self.grads
        grads.clear()
        for t, g in items:
            g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
            _accumulate(grads, t, g)
        params: dict[int, Parameter] = {}
        for rec in reversed(self.records):
            g_out = grads.get(id(rec.out))
            if g_out is None:
                continue
            in_grads = rec.backward(g_out)
            for t, g in zip(rec.inputs, in_grads):
                if g is None:
                    continue
                if isinstance(t, Parameter):
                    if t.frozen:
                        continue
                    params[id(t)] = t
                _accumulate(grads, t, g)
        for pid, p in params.items():
            g = grads[pid]
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {p.name!r}")
            p.grad += g

    def grad_of(self, t: Tensor) -> np.ndarray | None:
        """Gradient of the last ``backward`` call w.r.t. any recorded tensor."""
        return self.grads.get(id(t))


def _accumulate(grads: dict[int, np.ndarray], t: Tensor, g: np.ndarray) -> None:
    key = id(t)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


_ACTIVE: list[Tape] = []


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in output of {what}")
    return arr
