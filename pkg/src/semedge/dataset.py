"""Dataset manifests and the synthetic overlapping-shapes generator.

Seg maps use id 0 for background and 1..k for the k shape classes; the
network's K edge channels are the k shape classes unless background is
configured as a class. A manifest is JSON::

    {"k": 3, "classes": ["class1", ...], "pairs": [{"image": "...", "seg": "..."}]}

with paths relative to the manifest file.
"""
from __future__ import annotations

import colorsys
import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from semedge.errors import ConfigError, DataError
from semedge.netpbm import read_pgm, read_ppm, write_pgm, write_ppm

BACKGROUND_RGB = (128, 128, 128)


@dataclass
class DatasetManifest:
    k: int
    classes: list[str]
    pairs: list[dict[str, str]]
    split: str = "train"
    root: Path = field(default=Path("."), repr=False)

    def image_path(self, i: int) -> Path:
        return self.root / self.pairs[i]["image"]

    def seg_path(self, i: int) -> Path:
        return self.root / self.pairs[i]["seg"]

    def stem(self, i: int) -> str:
        return Path(self.pairs[i]["image"]).stem

    def __len__(self) -> int:
        return len(self.pairs)

    def load(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        img = read_ppm(self.image_path(i))
        seg = read_pgm(self.seg_path(i))
        if img.shape[:2] != seg.shape:
            raise DataError(f"pair {i}: image {img.shape[:2]} and seg {seg.shape} differ in size")
        if seg.size and seg.max() > self.k:
            raise DataError(f"pair {i}: seg id {seg.max()} exceeds k={self.k}")
        return img, seg

    def to_json(self) -> dict:
        return {"k": self.k, "classes": list(self.classes), "pairs": list(self.pairs), "split": self.split}

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1)
            f.write("\n")
        self.root = path.parent

    @classmethod
    def read(cls, path: str | os.PathLike, check_files: bool = True) -> "DatasetManifest":
        path = Path(path)
        try:
            with open(path) as f:
                d = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"manifest {path} not found") from None
        except json.JSONDecodeError as e:
            raise DataError(f"manifest {path} is not valid JSON: {e}") from None
        try:
            m = cls(k=int(d["k"]), classes=list(d["classes"]), pairs=list(d["pairs"]),
                    split=d.get("split", "train"), root=path.parent)
        except (KeyError, TypeError) as e:
            raise DataError(f"manifest {path} is missing field {e}") from None
        if len(m.classes) != m.k:
            raise DataError(f"manifest {path}: {len(m.classes)} class names for k={m.k}")
        if check_files:
            for i in range(len(m)):
                for p in (m.image_path(i), m.seg_path(i)):
                    if not p.is_file():
                        raise DataError(f"manifest {path}: missing file {p}")
        return m


# --------------------------------------------------------------------- synthetic


def class_colors(k: int) -> np.ndarray:
    """(k + 1, 3) base colours: gray background, evenly spaced hues for shapes."""
    colors = [BACKGROUND_RGB]
    for c in range(k):
        r, g, b = colorsys.hsv_to_rgb(c / k, 0.75, 0.9)
        colors.append((round(r * 255), round(g * 255), round(b * 255)))
    return np.array(colors, dtype=np.float64)


def _paint_shape(seg: np.ndarray, rng: np.random.Generator, cls: int) -> None:
    h, w = seg.shape
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    kind = rng.integers(3)
    lo = max(4, min(h, w) // 8)
    hi = max(lo + 1, min(h, w) // 2)
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    if kind == 0:  # axis-aligned rectangle
        hh, ww = rng.uniform(lo, hi, size=2) / 2
        mask = (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= ww)
    elif kind == 1:  # rotated ellipse
        ry, rx = rng.uniform(lo, hi, size=2) / 2
        t = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        mask = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    else:  # triangle
        size = rng.uniform(lo, hi)
        ang = rng.uniform(0, 2 * np.pi) + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3]) + rng.uniform(-0.4, 0.4, 3)
        py, px = cy + size * np.sin(ang) * 0.6, cx + size * np.cos(ang) * 0.6
        signs = [(px[(i + 1) % 3] - px[i]) * (yy - py[i]) - (py[(i + 1) % 3] - py[i]) * (xx - px[i])
                 for i in range(3)]
        mask = ((signs[0] >= 0) & (signs[1] >= 0) & (signs[2] >= 0)) | \
               ((signs[0] <= 0) & (signs[1] <= 0) & (signs[2] <= 0))
    seg[mask] = cls


def synth_sample(rng: np.random.Generator, h: int, w: int, k: int, shapes: int,
                 noise: float = 20.0) -> tuple[np.ndarray, np.ndarray]:
    """One (rgb uint8 (H, W, 3), seg uint8 (H, W)) pair; later shapes occlude earlier ones."""
    seg = np.zeros((h, w), dtype=np.uint8)
    for _ in range(shapes):
        _paint_shape(seg, rng, int(rng.integers(1, k + 1)))
    colors = class_colors(k)
    rgb = colors[seg] + rng.normal(0.0, noise, size=(h, w, 3))
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8), seg


def sample_rng(seed: int, split: str, index: int) -> np.random.Generator:
    split_key = zlib.crc32(split.encode())
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(split_key, index)))


def gen_synthetic(out_dir: str | os.PathLike, seed: int, n_images: int, h: int = 64, w: int = 64, k: int = 3,
                  shapes_per_image: int = 4, noise: float = 20.0, split: str = "train") -> DatasetManifest:
    """Write ``n_images`` PPM/PGM pairs plus ``<split>.json`` into ``out_dir``.

    Each image draws from its own stream keyed by (seed, split, index), so
    any subset can be regenerated independently.
    """
    if k < 1:
        raise ConfigError("synthetic data needs at least one shape class")
    if k > 254:
        raise ConfigError("k must fit an 8-bit seg map")
    if n_images < 0 or shapes_per_image < 0:
        raise ConfigError("n_images and shapes_per_image must be >= 0")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "segs").mkdir(parents=True, exist_ok=True)
    pairs = []
    for i in range(n_images):
        rgb, seg = synth_sample(sample_rng(seed, split, i), h, w, k, shapes_per_image, noise)
        stem = f"{split}_{i:05d}"
        write_ppm(out / "images" / f"{stem}.ppm", rgb)
        write_pgm(out / "segs" / f"{stem}.pgm", seg)
        pairs.append({"image": f"images/{stem}.ppm", "seg": f"segs/{stem}.pgm"})
    manifest = DatasetManifest(k=k, classes=[f"class{c}" for c in range(1, k + 1)], pairs=pairs, split=split)
    manifest.save(out / f"{split}.json")
    return manifest
