"""Ground-truth generation from segmentation maps.

A segmentation map holds one class id per pixel. Training edges are thick
(any label change within a square window) and multi-label; evaluation
boundaries are one pixel wide and one-sided.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from semedge.errors import ConfigError, DataError


def _check_seg(seg: np.ndarray, k: int) -> np.ndarray:
    seg = np.asarray(seg)
    if seg.ndim != 2:
        raise DataError(f"segmentation map must be 2-D, got {seg.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= k):
        raise DataError(f"segmentation ids must lie in 0..{k - 1}, found {seg.min()}..{seg.max()}")
    return seg.astype(np.intp)


def _shift_pairs(h: int, w: int, dy: int, dx: int):
    """Slices (p_region, q_region) such that q = p + (dy, dx) stays in-bounds."""
    # stops clamped at 0 so offsets beyond the image give empty regions, not wrap-around
    py = slice(max(0, -dy), max(0, h - max(0, dy)))
    px = slice(max(0, -dx), max(0, w - max(0, dx)))
    qy = slice(max(0, dy), max(0, h - max(0, -dy)))
    qx = slice(max(0, dx), max(0, w - max(0, -dx)))
    return (py, px), (qy, qx)


def seg_to_training_edges(seg: np.ndarray, radius: int = 2, k: int | None = None) -> np.ndarray:
    """(K, H, W) uint8 stack: p is an edge of class c iff some q within
    Chebyshev distance ``radius`` has seg(q) != seg(p) and c is seg(p) or seg(q).
    """
    if radius < 1:
        raise ConfigError(f"radius must be >= 1 (got {radius})")
    seg = np.asarray(seg)
    k = int(seg.max()) + 1 if k is None else k
    seg = _check_seg(seg, k)
    h, w = seg.shape
    stack = np.zeros((k, h, w), dtype=np.uint8)
    own = np.zeros((h, w), dtype=bool)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            (py, px), (qy, qx) = _shift_pairs(h, w, dy, dx)
            sp = seg[py, px]
            sq = seg[qy, qx]
            diff = sp != sq
            if not diff.any():
                continue
            own[py, px] |= diff
            ys, xs = np.nonzero(diff)
            stack[sq[ys, xs], ys + py.start, xs + px.start] = 1
    ys, xs = np.nonzero(own)
    stack[seg[ys, xs], ys, xs] = 1
    return stack


def seg_to_eval_boundaries(seg: np.ndarray, k: int | None = None) -> np.ndarray:
    """(K, H, W) uint8 single-pixel boundaries: pixels of class c with a
    4-neighbour of another class, then thinned to unit width."""
    from semedge.bench import thin

    seg = np.asarray(seg)
    k = int(seg.max()) + 1 if k is None else k
    seg = _check_seg(seg, k)
    h, w = seg.shape
    rim = np.zeros((h, w), dtype=bool)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        (py, px), (qy, qx) = _shift_pairs(h, w, dy, dx)
        rim[py, px] |= seg[py, px] != seg[qy, qx]
    stack = np.zeros((k, h, w), dtype=np.uint8)
    for c in range(k):
        stack[c] = thin(rim & (seg == c))
    return stack


def select_edge_channels(stack: np.ndarray, background: int | None = 0) -> np.ndarray:
    """Drop the background id's channel (SBD-style K excludes background)."""
    if background is None:
        return stack
    keep = [c for c in range(stack.shape[0]) if c != background]
    return stack[keep]


def training_stack(seg: np.ndarray, n_classes: int, radius: int = 2, background_as_class: bool = False) -> np.ndarray:
    """Training edges for a dataset whose seg ids are 0 (background) .. n_classes."""
    full = seg_to_training_edges(seg, radius, n_classes + 1)
    return full if background_as_class else select_edge_channels(full, 0)


def eval_stack(seg: np.ndarray, n_classes: int, background_as_class: bool = False) -> np.ndarray:
    full = seg_to_eval_boundaries(seg, n_classes + 1)
    return full if background_as_class else select_edge_channels(full, 0)


def multiclass_labels(seg: np.ndarray, stack: np.ndarray, background_as_class: bool = False) -> np.ndarray:
    """Non-overlapping (H, W) label map for the softmax baseline.

    0 = non-edge; an edge pixel gets channel index + 1 of its own class when
    that class is among its edge labels, otherwise of its lowest edge class.
    """
    stack = np.asarray(stack) > 0
    k, h, w = stack.shape
    seg = np.asarray(seg).astype(np.intp)
    own = seg if background_as_class else seg - 1
    any_edge = stack.any(axis=0)
    lowest = np.argmax(stack, axis=0)
    own_valid = (own >= 0) & (own < k)
    own_clip = np.clip(own, 0, k - 1)
    own_is_edge = own_valid & np.take_along_axis(stack, own_clip[None], axis=0)[0]
    chosen = np.where(own_is_edge, own_clip, lowest)
    return np.where(any_edge, chosen + 1, 0).astype(np.intp)


# --------------------------------------------------------------------- halving


def downsample_half(arr: np.ndarray, binary: bool | None = None) -> np.ndarray:
    """Halve the last two axes to ceil(H/2) x ceil(W/2).

    Binary maps are OR-pooled over 2x2 cells; probability maps use bilinear
    interpolation at half-pixel-aligned centres, which for a factor of two is
    the 2x2 mean (edge-replicated for odd sizes).
    """
    arr = np.asarray(arr)
    if binary is None:
        binary = arr.dtype == bool or np.issubdtype(arr.dtype, np.integer)
    h, w = arr.shape[-2:]
    ph, pw = h % 2, w % 2
    lead = [(0, 0)] * (arr.ndim - 2)
    if binary:
        padded = np.pad(arr > 0, lead + [(0, ph), (0, pw)])
        cells = padded.reshape(*arr.shape[:-2], (h + ph) // 2, 2, (w + pw) // 2, 2)
        return cells.any(axis=(-3, -1)).astype(np.uint8)
    padded = np.pad(arr, lead + [(0, ph), (0, pw)], mode="edge")
    cells = padded.reshape(*arr.shape[:-2], (h + ph) // 2, 2, (w + pw) // 2, 2)
    return cells.mean(axis=(-3, -1), dtype=np.float64).astype(arr.dtype if arr.dtype.kind == "f" else np.float64)


# ---------------------------------------------------------------- augmentation


def augment(image: np.ndarray, labels: np.ndarray, mirror: bool, crop: tuple[int, int] | None,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random horizontal mirror (p=0.5 when enabled) and random crop, applied
    identically to the (H, W, C) image and the (..., H, W) labels."""
    image = np.asarray(image)
    labels = np.asarray(labels)
    h, w = image.shape[:2]
    if labels.shape[-2:] != (h, w):
        raise DataError(f"labels {labels.shape} do not match image {image.shape}")
    ch, cw = (h, w) if crop is None else crop
    if ch > h or cw > w or ch < 1 or cw < 1:
        raise ConfigError(f"crop {ch}x{cw} does not fit image {h}x{w}")
    flip = bool(mirror) and bool(rng.integers(2))
    top = int(rng.integers(h - ch + 1))
    left = int(rng.integers(w - cw + 1))
    image = image[top:top + ch, left:left + cw]
    labels = labels[..., top:top + ch, left:left + cw]
    if flip:
        image = image[:, ::-1]
        labels = labels[..., ::-1]
    return np.ascontiguousarray(image), np.ascontiguousarray(labels)


def mirror(image: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.ascontiguousarray(image[:, ::-1]), np.ascontiguousarray(labels[..., ::-1])


# ------------------------------------------------------------------ label files

LABEL_META = "labels.json"


def write_label_set(manifest, out_dir, radius: int = 2, background_as_class: bool = False) -> list[Path]:
    """Write ``<stem>.npz`` (uint8 ``train`` and ``eval`` stacks) per manifest pair plus ``labels.json``.

    Several manifests (say train and test) may share one directory as long
    as they agree on K, radius and background handling.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    settings = {"k": manifest.k, "radius": radius, "background_as_class": background_as_class}
    files: list[str] = []
    if (out / LABEL_META).is_file():
        old = json.loads((out / LABEL_META).read_text())
        if any(old.get(key) != v for key, v in settings.items()):
            raise ConfigError(f"{out} already holds labels built with different settings")
        files = list(old.get("files", []))
    paths = []
    for i in range(len(manifest)):
        _, seg = manifest.load(i)
        path = out / f"{manifest.stem(i)}.npz"
        with open(path, "wb") as f:
            np.savez(f, train=training_stack(seg, manifest.k, radius, background_as_class),
                     eval=eval_stack(seg, manifest.k, background_as_class))
        paths.append(path)
    meta = dict(settings, files=sorted(set(files) | {p.name for p in paths}))
    (out / LABEL_META).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return paths


def read_label_stack(labels_dir, stem: str, which: str, background_as_class: bool,
                     radius: int | None = None) -> np.ndarray:
    """Load one precomputed stack, checking it was built with the requested settings."""
    labels_dir = Path(labels_dir)
    try:
        meta = json.loads((labels_dir / LABEL_META).read_text())
    except FileNotFoundError:
        raise DataError(f"{labels_dir}: no {LABEL_META}; run make-labels first") from None
    if radius is not None and meta.get("radius") != radius:
        raise ConfigError(f"labels in {labels_dir} use radius {meta.get('radius')}, config asks for {radius}")
    if meta.get("background_as_class") != background_as_class:
        raise ConfigError(f"labels in {labels_dir} disagree on background_as_class")
    path = labels_dir / f"{stem}.npz"
    if not path.is_file():
        raise DataError(f"missing label file {path}")
    with np.load(path) as z:
        return z[which]


from semedge.dataset import gen_synthetic  # noqa: E402  (re-exported; dataset does not import labels)
