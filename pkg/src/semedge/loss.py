"""Multi-label reweighted sigmoid cross-entropy, the reweighted softmax baseline
and the binary edge loss, each returning the loss and dL/d(activations).

All losses are sums over classes and pixels (not means). Arithmetic is in
float64; gradients are returned in the activation dtype.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from semedge.errors import ConfigError, DataError, NumericError


@dataclass
class LossValue:
    scalar: float
    breakdown: dict[str, float] = field(default_factory=dict)

    @classmethod
    def single(cls, name: str, value: float) -> "LossValue":
        return cls(float(value), {name: float(value)})

    def __add__(self, other: "LossValue") -> "LossValue":
        merged = dict(self.breakdown)
        for k, v in other.breakdown.items():
            merged[k] = merged.get(k, 0.0) + v
        return LossValue(self.scalar + other.scalar, merged)


@dataclass(frozen=True)
class BetaStat:
    beta: float


def compute_beta(gt: np.ndarray) -> BetaStat:
    """Fraction of non-edge entries over all K label maps of one image."""
    gt = np.asarray(gt)
    if gt.size == 0:
        raise ConfigError("cannot compute beta of an empty label stack")
    return BetaStat(1.0 - float(np.count_nonzero(gt)) / gt.size)


def _softplus(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0) + np.log1p(np.exp(-np.abs(a)))


def _sigmoid64(a: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _prepare(activations, gt, what: str) -> tuple[np.ndarray, np.ndarray]:
    act = np.asarray(activations)
    gt = np.asarray(gt)
    if act.size != gt.size:
        raise ConfigError(f"{what}: activations {act.shape} do not match labels {gt.shape}")
    a = act.astype(np.float64).reshape(gt.shape)
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{what}: non-finite activations")
    return a, gt.astype(np.float64)


def sigmoid_ce_terms(a: np.ndarray, y: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry loss and gradient of the beta-weighted sigmoid cross-entropy.

    -beta*y*log(sig(a)) - (1-beta)*(1-y)*log(1-sig(a)), written with
    softplus so it never takes the log of a saturated sigmoid.
    """
    wpos = beta * y
    wneg = (1.0 - beta) * (1.0 - y)
    loss = wpos * _softplus(-a) + wneg * _softplus(a)
    s = _sigmoid64(a)
    grad = wpos * (s - 1.0) + wneg * s
    return loss, grad


def multilabel_loss(activations, gt, beta: BetaStat | float | None = None,
                    name: str = "loss") -> tuple[LossValue, np.ndarray]:
    """Reweighted multi-label loss on pre-sigmoid activations of shape (..., K, H, W)."""
    a, y = _prepare(activations, gt, "multilabel_loss")
    b = compute_beta(y).beta if beta is None else float(getattr(beta, "beta", beta))
    loss, grad = sigmoid_ce_terms(a, y, b)
    act = np.asarray(activations)
    return LossValue.single(name, loss.sum()), grad.reshape(act.shape).astype(act.dtype)


def per_class_losses(activations, gt, beta: BetaStat | float) -> np.ndarray:
    """Loss of each class map computed independently with the shared beta."""
    a, y = _prepare(activations, gt, "per_class_losses")
    b = float(getattr(beta, "beta", beta))
    return np.array([sigmoid_ce_terms(a[k], y[k], b)[0].sum() for k in range(y.shape[0])])


def edge_any(gt: np.ndarray) -> np.ndarray:
    """OR-collapse a (K, H, W) stack to a single (1, H, W) binary edge map."""
    gt = np.asarray(gt)
    return np.any(gt > 0, axis=0, keepdims=True).astype(np.uint8)


def binary_edge_loss(activations, gt_any, beta: BetaStat | float | None = None,
                     name: str = "edge") -> tuple[LossValue, np.ndarray]:
    """Multi-label loss with K=1 on the OR-collapsed ground truth.

    When ``beta`` is omitted it is the non-edge fraction of ``gt_any``.
    """
    gt_any = np.asarray(gt_any)
    if gt_any.ndim == 2:
        gt_any = gt_any[None]
    return multilabel_loss(activations, gt_any, beta, name=name)


def reweighted_softmax_loss(activations, labels, beta: BetaStat | float | None = None,
                            name: str = "softmax") -> tuple[LossValue, np.ndarray]:
    """Softmax cross-entropy over K+1 channels (channel 0 = non-edge).

    Edge pixels are weighted by beta and non-edge pixels by 1 - beta, the
    same direction as the multi-label loss; beta defaults to the fraction of
    non-edge pixels.
    """
    act = np.asarray(activations)
    lab = np.asarray(labels)
    if act.ndim == 4:
        if act.shape[0] != 1:
            raise ConfigError("reweighted_softmax_loss takes a single image")
        a = act[0]
    else:
        a = act
    if lab.ndim == 3 and lab.shape[0] == 1:
        lab = lab[0]
    n_cls = a.shape[0]
    if lab.shape != a.shape[1:]:
        raise ConfigError(f"labels {lab.shape} do not match activations {a.shape}")
    if lab.size and (lab.min() < 0 or lab.max() >= n_cls):
        raise DataError(f"label out of range 0..{n_cls - 1}")
    a = a.astype(np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericError("reweighted_softmax_loss: non-finite activations")
    if beta is None:
        b = float(np.count_nonzero(lab == 0)) / lab.size
    else:
        b = float(getattr(beta, "beta", beta))
    weight = np.where(lab > 0, b, 1.0 - b)
    shifted = a - a.max(axis=0, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=0))
    rows, cols = np.indices(lab.shape)
    log_p = shifted[lab, rows, cols] - log_z
    loss = -(weight * log_p).sum()
    prob = np.exp(shifted - log_z)
    onehot = np.zeros_like(prob)
    onehot[lab, rows, cols] = 1.0
    grad = weight * (prob - onehot)
    return LossValue.single(name, loss), grad.reshape(act.shape).astype(act.dtype)


def softmax_edge_probs(activations) -> np.ndarray:
    """K edge-class probabilities (channels 1..K) from K+1 softmax logits."""
    a = np.asarray(activations, dtype=np.float64)
    axis = -3
    shifted = a - a.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    return np.take(p, np.arange(1, a.shape[axis]), axis=axis)
