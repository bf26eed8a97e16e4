"""Multi-label HSV edge colouring, TP/FP overlays and grayscale class maps."""
from __future__ import annotations

import numpy as np

from semedge.errors import DataError

CITYSCAPES_CLASSES = (
    "road", "sidewalk", "building", "wall", "fence", "pole", "traffic light", "traffic sign",
    "vegetation", "terrain", "sky", "person", "rider", "car", "truck", "bus", "train",
    "motorcycle", "bicycle",
)
CITYSCAPES_HUES = (359, 320, 40, 80, 90, 10, 20, 30, 140, 340, 280, 330, 350, 120, 110, 130, 150, 160, 170)

TP_RGB = (0, 255, 0)
FN_RGB = (0, 0, 255)
FP_RGB = (255, 0, 0)
TN_RGB = (255, 255, 255)


def cityscapes_hue_table() -> dict[str, int]:
    """The 19 Cityscapes class hues in degrees, in class order."""
    return dict(zip(CITYSCAPES_CLASSES, CITYSCAPES_HUES))


def default_hues(k: int) -> np.ndarray:
    if k == len(CITYSCAPES_HUES):
        return np.array(CITYSCAPES_HUES, dtype=np.float64)
    return np.arange(k, dtype=np.float64) * (360.0 / k)


def hsv_to_rgb_array(h, s, v) -> np.ndarray:
    """Vectorised sector-wise HSV -> RGB. h in degrees, s and v on 0..255;
    returns uint8 (..., 3) rounded half-up."""
    h = np.mod(np.asarray(h, dtype=np.float64), 360.0)
    s = np.asarray(s, dtype=np.float64) / 255.0
    v = np.asarray(v, dtype=np.float64) / 255.0
    h, s, v = np.broadcast_arrays(h, s, v)
    c = v * s
    hp = h / 60.0
    x = c * (1.0 - np.abs(np.mod(hp, 2.0) - 1.0))
    m = v - c
    sector = np.floor(hp).astype(int) % 6
    zero = np.zeros_like(c)
    r = np.choose(sector, [c, x, zero, zero, x, c])
    g = np.choose(sector, [x, c, c, x, zero, zero])
    b = np.choose(sector, [zero, zero, x, c, c, x])
    rgb = np.stack([r + m, g + m, b + m], axis=-1)
    return np.floor(rgb * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def hsv_to_rgb(h: float, s: float, v: float) -> tuple[int, int, int]:
    r, g, b = hsv_to_rgb_array(h, s, v)
    return int(r), int(g), int(b)


def hue_saturation(y: np.ndarray, hues, top2_threshold: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel hue (weighted linear mean of class hues) and saturation (255 * max response).

    With ``top2_threshold`` responses below 0.5 are dropped and only the two
    strongest remaining classes enter the hue mean. Pixels with no response
    get hue 0 and saturation 0.
    """
    y = np.asarray(y, dtype=np.float64)
    hues = np.asarray(hues, dtype=np.float64)
    if y.ndim != 3 or y.shape[0] != hues.shape[0]:
        raise DataError(f"responses {y.shape} do not match {hues.shape[0]} hues")
    if top2_threshold:
        y = np.where(y >= 0.5, y, 0.0)
        if y.shape[0] > 2:
            # keep the two largest per pixel; stable sort so ties favour lower class ids
            rank = np.argsort(-y, axis=0, kind="stable")
            keep = np.zeros(y.shape, dtype=bool)
            np.put_along_axis(keep, rank[:2], True, axis=0)
            y = np.where(keep, y, 0.0)
    peak = y.max(axis=0)
    # dividing by the peak first leaves the mean unchanged and makes a lone class weigh exactly 1
    w = y / np.where(peak > 0, peak, 1.0)
    total = w.sum(axis=0)
    weighted = np.tensordot(hues, w, axes=(0, 0))
    hue = np.where(total > 0, weighted / np.where(total > 0, total, 1.0), 0.0)
    return hue, 255.0 * peak


def encode_hsv(y: np.ndarray, hues=None, top2_threshold: bool = False) -> np.ndarray:
    """(K, H, W) responses in [0, 1] -> (H, W, 3) uint8 RGB with V fixed at 255."""
    y = np.asarray(y)
    hues = default_hues(y.shape[0]) if hues is None else hues
    hue, sat = hue_saturation(y, hues, top2_threshold)
    return hsv_to_rgb_array(hue, sat, 255.0)


def tp_fp_overlay(pred_binary: np.ndarray, gt_binary: np.ndarray) -> np.ndarray:
    """Green TP, blue FN, red FP, white TN."""
    pred = np.asarray(pred_binary) > 0
    gt = np.asarray(gt_binary) > 0
    if pred.shape != gt.shape or pred.ndim != 2:
        raise DataError(f"overlay needs two equal 2-D maps, got {pred.shape} and {gt.shape}")
    out = np.empty(pred.shape + (3,), dtype=np.uint8)
    out[...] = TN_RGB
    out[pred & gt] = TP_RGB
    out[~pred & gt] = FN_RGB
    out[pred & ~gt] = FP_RGB
    return out


def class_gray(y: np.ndarray) -> np.ndarray:
    """One (H, W, 3) gray image of a single class map: dark edges on white."""
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, 1.0)
    g = np.floor((1.0 - y) * 255.0 + 0.5).astype(np.uint8)
    return np.repeat(g[..., None], 3, axis=-1)
