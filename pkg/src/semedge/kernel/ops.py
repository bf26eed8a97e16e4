"""Differentiable ops on (n, c, h, w) tensors.

Every op computes its output eagerly, checks it for NaN/Inf, and, when a
:class:`Tape` is active, records a closure mapping dL/d(out) to the
gradients of its inputs. Dtype follows the inputs, so the same code runs in
float32 for training and float64 inside gradient checks.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from semedge.errors import ConfigError
from semedge.kernel.tensor import Parameter, Tensor, active_tape, check_finite


def _emit(out: np.ndarray, what: str, inputs: Sequence[Tensor], backward) -> Tensor:
    check_finite(out, what)
    t = Tensor(out)
    tape = active_tape()
    if tape is not None:
        tape.record(t, inputs, backward)
    return t


def conv_output_size(size: int, kernel: int, stride: int, dilation: int, pad: int) -> int:
    return (size + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1


def _tap_slice(offset: int, stride: int, count: int) -> slice:
    return slice(offset, offset + stride * (count - 1) + 1, stride)


@np.errstate(over="ignore", invalid="ignore")  # overflow surfaces as NumericError in _emit
def _bmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Broadcast matmul that takes the plain 2-D BLAS path when there is one batch."""
    if a.ndim == 3 and a.shape[0] == 1 and b.shape[:-2] in ((1,), (1, 1)):
        out = np.ascontiguousarray(a[0]) @ np.ascontiguousarray(b.reshape(b.shape[-2:]))
        return out.reshape(b.shape[:-2] + out.shape)
    if b.ndim == 3 and b.shape[0] == 1 and a.shape[:-2] in ((1,), (1, 1)):
        out = np.ascontiguousarray(a.reshape(a.shape[-2:])) @ np.ascontiguousarray(b[0])
        return out.reshape(a.shape[:-2] + out.shape)
    if a.ndim == 4 and b.ndim == 3 and a.shape[:2] == (1, 1) and b.shape[0] == 1:
        return (a[0, 0] @ b[0])[None, None]
    return np.matmul(a, b)


# --------------------------------------------------------------------------- conv


def conv2d(
    x: Tensor,
    w: Parameter,
    b: Parameter | None = None,
    stride: int = 1,
    dilation: int = 1,
    groups: int = 1,
    pad: int = 0,
) -> Tensor:
    """Grouped, dilated, strided 2-D convolution (cross-correlation).

    ``w`` has shape (out_channels, in_channels // groups, kh, kw); ``b`` has
    shape (1, out_channels, 1, 1). Padding is explicit and symmetric.
    """
    n, c, h, wd = x.shape
    co, cig, kh, kw = w.shape
    if groups < 1 or c % groups or co % groups:
        raise ConfigError(f"channels ({c} in, {co} out) not divisible by groups={groups}")
    if cig * groups != c:
        raise ConfigError(f"weight expects {cig * groups} input channels, got {c}")
    if b is not None and b.shape != (1, co, 1, 1):
        raise ConfigError(f"bias shape {b.shape} does not match {co} output channels")
    if stride < 1 or dilation < 1 or pad < 0:
        raise ConfigError("stride and dilation must be >= 1 and pad >= 0")
    ho = conv_output_size(h, kh, stride, dilation, pad)
    wo = conv_output_size(wd, kw, stride, dilation, pad)
    if ho < 1 or wo < 1:
        raise ConfigError(f"input {h}x{wd} too small for kernel {kh}x{kw} (dilation {dilation})")

    cog = co // groups
    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    xg = xp.reshape(n, groups, cig, xp.shape[2], xp.shape[3])
    npix = ho * wo
    taps = [(i, j, _tap_slice(i * dilation, stride, ho), _tap_slice(j * dilation, stride, wo))
            for i in range(kh) for j in range(kw)]

    # im2col: (n, groups, cig * kh * kw, npix), cig-major to match the weight layout
    cols = np.empty((n, groups, cig, kh * kw, ho, wo), dtype=xd.dtype)
    for t, (_, _, rows, cslice) in enumerate(taps):
        cols[:, :, :, t] = xg[:, :, :, rows, cslice]
    cols = cols.reshape(n, groups, cig * kh * kw, npix)
    wmat = w.data.reshape(groups, cog, cig * kh * kw)
    out = _bmm(wmat, cols).reshape(n, co, ho, wo)
    if b is not None:
        out += b.data

    def backward(g_out: np.ndarray):
        gg = g_out.reshape(n, groups, cog, npix)
        dw = _bmm(gg, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
        dcols = _bmm(wmat.transpose(0, 2, 1), gg).reshape(n, groups, cig, kh * kw, ho, wo)
        dxp = np.zeros_like(xg)
        for t, (_, _, rows, cslice) in enumerate(taps):
            dxp[:, :, :, rows, cslice] += dcols[:, :, :, t]
        dx = dxp.reshape(xp.shape)
        if pad:
            dx = dx[:, :, pad:-pad, pad:-pad]
        grads = [dx, dw]
        if b is not None:
            grads.append(g_out.sum(axis=(0, 2, 3)).reshape(b.shape))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _emit(out, "conv2d", inputs, backward)


def _conv_t_forward(xd: np.ndarray, wd_: np.ndarray, stride: int, pad: int, groups: int) -> np.ndarray:
    n, c, h, wd = xd.shape
    ci, cog, kh, kw = wd_.shape
    cig = c // groups
    full_h = (h - 1) * stride + kh
    full_w = (wd - 1) * stride + kw
    xg = xd.reshape(n, groups, cig, h * wd)
    # per tap: (groups, cog, cig) so that out_g = W_tap^T x_g
    wg = wd_.reshape(groups, cig, cog, kh, kw).transpose(0, 2, 1, 3, 4)
    full = np.zeros((n, groups, cog, full_h, full_w), dtype=xd.dtype)
    for i in range(kh):
        rows = _tap_slice(i, stride, h)
        for j in range(kw):
            cols = _tap_slice(j, stride, wd)
            full[:, :, :, rows, cols] += (wg[:, :, :, i, j] @ xg).reshape(n, groups, cog, h, wd)
    ho, wo = full_h - 2 * pad, full_w - 2 * pad
    return full[:, :, :, pad:pad + ho, pad:pad + wo].reshape(n, groups * cog, ho, wo)


def _conv_t_backward(g_out, xd, wd_, stride, pad, groups, want_w: bool):
    n, c, h, wd = xd.shape
    ci, cog, kh, kw = wd_.shape
    cig = c // groups
    full_h = (h - 1) * stride + kh
    full_w = (wd - 1) * stride + kw
    ho, wo = g_out.shape[2:]
    gfull = np.zeros((n, groups, cog, full_h, full_w), dtype=g_out.dtype)
    gfull[:, :, :, pad:pad + ho, pad:pad + wo] = g_out.reshape(n, groups, cog, ho, wo)
    wg = wd_.reshape(groups, cig, cog, kh, kw)
    xg = xd.reshape(n, groups, cig, h * wd)
    dx = np.zeros((n, groups, cig, h * wd), dtype=g_out.dtype)
    dw = np.zeros_like(wg) if want_w else None
    for i in range(kh):
        rows = _tap_slice(i, stride, h)
        for j in range(kw):
            cols = _tap_slice(j, stride, wd)
            gs = gfull[:, :, :, rows, cols].reshape(n, groups, cog, h * wd)
            dx += wg[:, :, :, i, j] @ gs
            if dw is not None:
                dw[:, :, :, i, j] = (xg @ gs.transpose(0, 1, 3, 2)).sum(axis=0)
    if dw is not None:
        dw = dw.reshape(wd_.shape)
    return dx.reshape(xd.shape), dw


def conv_transpose2d(x: Tensor, w: Parameter, stride: int = 1, pad: int = 0, groups: int = 1) -> Tensor:
    """Grouped transposed convolution; ``w`` is (in_channels, out_channels // groups, kh, kw)."""
    n, c, h, wd = x.shape
    ci, cog, kh, kw = w.shape
    if ci != c or groups < 1 or c % groups:
        raise ConfigError(f"transposed conv weight expects {ci} input channels, got {c} (groups={groups})")
    if (h - 1) * stride + kh - 2 * pad < 1 or (wd - 1) * stride + kw - 2 * pad < 1:
        raise ConfigError("transposed conv output would be empty")
    out = _conv_t_forward(x.data, w.data, stride, pad, groups)

    def backward(g_out: np.ndarray):
        return _conv_t_backward(g_out, x.data, w.data, stride, pad, groups, not w.frozen)

    return _emit(out, "conv_transpose2d", (x, w), backward)


# ----------------------------------------------------------------------- upsample


def bilinear_kernel(factor: int, channels: int, dtype=np.float32) -> Parameter:
    """Frozen (channels, 1, 2f, 2f) bilinear kernel for a channel-grouped transposed conv."""
    size = 2 * factor
    center = factor - 0.5
    taps = 1.0 - np.abs(np.arange(size) - center) / factor
    k2 = np.outer(taps, taps)
    data = np.broadcast_to(k2, (channels, 1, size, size)).astype(dtype)
    return Parameter(data, name=f"bilinear_x{factor}", frozen=True)


def upsample_bilinear(x: Tensor, factor: int, kernel: Parameter | None = None) -> Tensor:
    """Bilinear upsampling by an integer factor, channels never mixed.

    Implemented as an edge-replicated, channel-grouped transposed
    convolution with a fixed bilinear kernel, then cropped; the result is
    half-pixel-aligned bilinear interpolation with clamped borders.
    """
    if factor not in (1, 2, 4, 8):
        raise ConfigError(f"upsample factor must be one of 1, 2, 4, 8 (got {factor})")
    if factor == 1:
        return x
    n, c, h, wd = x.shape
    if kernel is None or kernel.shape[0] != c or kernel.dtype != x.dtype:
        kernel = bilinear_kernel(factor, c, x.dtype)
    # accumulate in float64 and round once, so float32 results stay within a few ulps of exact
    kd = kernel.data.astype(np.float64)
    xp = np.pad(x.data.astype(np.float64), ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    inner = _conv_t_forward(xp, kd, factor, factor // 2, c)
    crop = (slice(None), slice(None), slice(factor, factor + factor * h), slice(factor, factor + factor * wd))
    out = np.ascontiguousarray(inner[crop], dtype=x.dtype)

    def backward(g_out: np.ndarray):
        full = np.zeros(inner.shape)
        full[crop] = g_out
        gxp, _ = _conv_t_backward(full, xp, kd, factor, factor // 2, c, False)
        return (_unpad_edge(gxp).astype(g_out.dtype),)

    return _emit(out, "upsample_bilinear", (x,), backward)


def _unpad_edge(gp: np.ndarray) -> np.ndarray:
    """Adjoint of a 1-pixel edge-replicate pad: fold border gradients inward."""
    g = gp[:, :, 1:-1, 1:-1].copy()
    g[:, :, 0, :] += gp[:, :, 0, 1:-1]
    g[:, :, -1, :] += gp[:, :, -1, 1:-1]
    g[:, :, :, 0] += gp[:, :, 1:-1, 0]
    g[:, :, :, -1] += gp[:, :, 1:-1, -1]
    g[:, :, 0, 0] += gp[:, :, 0, 0]
    g[:, :, 0, -1] += gp[:, :, 0, -1]
    g[:, :, -1, 0] += gp[:, :, -1, 0]
    g[:, :, -1, -1] += gp[:, :, -1, -1]
    return g


# -------------------------------------------------------------------- pointwise


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)
    return _emit(out, "relu", (x,), lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigError(f"cannot add tensors of shape {a.shape} and {b.shape}")
    return _emit(a.data + b.data, "add", (a, b), lambda g: (g, g))


def stable_sigmoid(a: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    y = stable_sigmoid(x.data)
    return _emit(y, "sigmoid", (x,), lambda g: (g * y * (1 - y),))


# ----------------------------------------------------------------------- concat


def concat_channels(xs: Sequence[Tensor], order: Sequence[int] | None = None) -> Tensor:
    """Concatenate along channels, then lay channels out per ``order``.

    ``order[i]`` indexes the plain concatenation of ``xs``; indices may
    repeat, in which case gradients from every copy are summed.
    """
    if not xs:
        raise ConfigError("concat_channels needs at least one input")
    n, _, h, w = xs[0].shape
    for t in xs:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ConfigError(f"concat spatial mismatch: {t.shape} vs {xs[0].shape}")
    stacked = np.concatenate([t.data for t in xs], axis=1)
    total = stacked.shape[1]
    idx = np.arange(total) if order is None else np.asarray(order, dtype=np.intp)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= total)):
        raise ConfigError(f"concat order must index {total} channels")
    out = stacked[:, idx]
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]

    def backward(g: np.ndarray):
        gs = np.zeros((n, total, h, w), dtype=g.dtype)
        np.add.at(gs, (slice(None), idx), g)
        return np.split(gs, splits, axis=1)

    return _emit(out, "concat_channels", tuple(xs), backward)
