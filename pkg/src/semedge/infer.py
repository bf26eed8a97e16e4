"""Prediction and evaluation over a manifest."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from semedge.arch import ArchVariant, Network, to_input
from semedge.bench import EvalReport, default_thresholds, pr_table
from semedge.dataset import DatasetManifest
from semedge.errors import ConfigError, DataError
from semedge.formats import read_prediction, write_prediction
from semedge.kernel import stable_sigmoid
from semedge.labels import eval_stack, read_label_stack
from semedge.loss import softmax_edge_probs


def predict_probs(net: Network, image: np.ndarray) -> np.ndarray:
    """(K, H, W) float32 edge probabilities for one RGB image.

    Sizes not divisible by the backbone stride are reflect-padded and the
    output cropped back.
    """
    h, w = image.shape[:2]
    s = net.cfg.total_stride
    ph, pw = (-h) % s, (-w) % s
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "edge"
        image = np.pad(image, ((0, ph), (0, pw), (0, 0)), mode=mode)
    out = net(to_input(image))[net.primary_output].data[0]
    if net.variant is ArchVariant.BASIC_SOFTMAX:
        probs = softmax_edge_probs(out)
    else:
        probs = stable_sigmoid(out)
    return np.ascontiguousarray(probs[:, :h, :w], dtype=np.float32)


def predict_manifest(net: Network, manifest: DatasetManifest, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(len(manifest)):
        img, _ = manifest.load(i)
        path = out / f"{manifest.stem(i)}.sedp"
        write_prediction(path, predict_probs(net, img))
        paths.append(path)
    return paths


def evaluate(pred_dir: str | Path, manifest: DatasetManifest, thresholds=None, tolerance: float = 0.02,
             halve: bool = False, background_as_class: bool = False, config: dict | None = None,
             labels_dir: str | Path | None = None):
    """Returns (EvalReport, PRTable) for predictions named ``<stem>.sedp``."""
    pred_dir = Path(pred_dir)
    if len(manifest) == 0:
        raise DataError("cannot evaluate an empty manifest")
    probs, gts = [], []
    for i in range(len(manifest)):
        _, seg = manifest.load(i)
        if labels_dir is not None:
            gt = read_label_stack(labels_dir, manifest.stem(i), "eval", background_as_class)
        else:
            gt = eval_stack(seg, manifest.k, background_as_class)
        path = pred_dir / f"{manifest.stem(i)}.sedp"
        if not path.is_file():
            raise DataError(f"missing prediction {path}")
        p = read_prediction(path)
        if p.shape != gt.shape:
            raise DataError(f"{path}: prediction {p.shape} does not match ground truth {gt.shape}")
        probs.append(p)
        gts.append(gt)
    names = (["background"] if background_as_class else []) + list(manifest.classes)
    thr = default_thresholds() if thresholds is None else thresholds
    table = pr_table(probs, gts, thr, tolerance=tolerance, halve=halve, class_names=names)
    return EvalReport.from_table(table, config), table


def check_k(net: Network, k: int) -> None:
    if net.k != k:
        raise ConfigError(f"checkpoint has K={net.k} but {k} classes were requested")
