"""Binary file formats: network checkpoints (SEDW) and prediction maps (SEDP).

Both are little-endian. Checkpoint layout::

    "SEDW" u16 version, u8 variant id, u16 K,
    u8 in_channels, u8 n_stages, n_stages x u16 stage channels,
    u16 blocks_per_stage, u16 stage5_dilation,
    then every trainable tensor in graph order as f32.

Prediction layout::

    "SEDP" u16 version, u16 K, u32 H, u32 W, then K planes of f32 in [0, 1].
"""
from __future__ import annotations

import os
import struct

import numpy as np

from semedge.arch import ArchVariant, BackboneConfig, Network, build
from semedge.errors import DataError

CKPT_MAGIC = b"SEDW"
CKPT_VERSION = 1
PRED_MAGIC = b"SEDP"
PRED_VERSION = 1

_CKPT_HEAD = struct.Struct("<4sHBH")
_PRED_HEAD = struct.Struct("<4sHHII")


def checkpoint_bytes(net: Network) -> bytes:
    cfg = net.cfg
    head = _CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, net.variant.value, net.k)
    n = len(cfg.stage_channels)
    head += struct.pack(f"<BB{n}HHH", cfg.in_channels, n, *cfg.stage_channels,
                        cfg.blocks_per_stage, cfg.stage5_dilation)
    body = b"".join(np.ascontiguousarray(p.data, dtype="<f4").tobytes() for p in net.parameters())
    return head + body


def save_checkpoint(path: str | os.PathLike, net: Network) -> None:
    data = checkpoint_bytes(net)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Network:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _CKPT_HEAD.size + 2:
        raise DataError(f"{path}: truncated checkpoint")
    magic, version, variant_id, k = _CKPT_HEAD.unpack_from(buf, 0)
    if magic != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    pos = _CKPT_HEAD.size
    in_ch, n = struct.unpack_from("<BB", buf, pos)
    pos += 2
    fmt = f"<{n}HHH"
    vals = struct.unpack_from(fmt, buf, pos)
    pos += struct.calcsize(fmt)
    try:
        variant = ArchVariant(variant_id)
    except ValueError:
        raise DataError(f"{path}: unknown variant id {variant_id}") from None
    cfg = BackboneConfig(stage_channels=tuple(vals[:n]), blocks_per_stage=vals[n],
                         stage5_dilation=vals[n + 1], in_channels=in_ch)
    net = build(variant, k, cfg, seed=None)
    params = net.parameters()
    expected = sum(p.data.size for p in params) * 4
    if len(buf) - pos != expected:
        raise DataError(f"{path}: parameter payload is {len(buf) - pos} bytes, expected {expected}")
    for p in params:
        count = p.data.size
        p.data[...] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(p.shape)
        pos += count * 4
    return net


def prediction_bytes(probs: np.ndarray) -> bytes:
    probs = np.asarray(probs)
    if probs.ndim != 3:
        raise DataError(f"prediction must be (K, H, W), got {probs.shape}")
    k, h, w = probs.shape
    planes = np.clip(probs.astype("<f4"), 0.0, 1.0)
    return _PRED_HEAD.pack(PRED_MAGIC, PRED_VERSION, k, h, w) + planes.tobytes()


def write_prediction(path: str | os.PathLike, probs: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(prediction_bytes(probs))


def read_prediction(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _PRED_HEAD.size:
        raise DataError(f"{path}: truncated prediction file")
    magic, version, k, h, w = _PRED_HEAD.unpack_from(buf, 0)
    if magic != PRED_MAGIC or version != PRED_VERSION:
        raise DataError(f"{path}: not a version-{PRED_VERSION} prediction file")
    payload = len(buf) - _PRED_HEAD.size
    if payload != k * h * w * 4:
        raise DataError(f"{path}: payload {payload} bytes, expected {k * h * w * 4}")
    return np.frombuffer(buf, dtype="<f4", offset=_PRED_HEAD.size).reshape(k, h, w).astype(np.float32)
