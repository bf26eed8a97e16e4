"""Loss wiring per architecture variant and the SGD training loop."""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from semedge.arch import ArchVariant, Network, build, to_input
from semedge.config import RunConfig
from semedge.dataset import DatasetManifest
from semedge.errors import ConfigError, DataError, NumericError
from semedge.formats import save_checkpoint
from semedge.kernel import SGD, Tape, Tensor, step_lr
from semedge.labels import augment, multiclass_labels, read_label_stack, training_stack
from semedge.loss import LossValue, binary_edge_loss, compute_beta, edge_any, multilabel_loss, reweighted_softmax_loss

log = logging.getLogger(__name__)

MULTILABEL, BINARY, SOFTMAX = "multilabel", "binary", "softmax"


def supervision(variant: ArchVariant) -> list[tuple[str, str]]:
    """(output name, loss kind) pairs supervised for each variant; every weight is 1."""
    sides = [f"side{j}" for j in range(1, 6)]
    return {
        ArchVariant.BASIC: [("score", MULTILABEL)],
        ArchVariant.BASIC_SOFTMAX: [("score", SOFTMAX)],
        ArchVariant.DSN: [(s, MULTILABEL) for s in sides] + [("fused", MULTILABEL)],
        ArchVariant.CASENET: [("side5", MULTILABEL), ("fused", MULTILABEL)],
        ArchVariant.CASENET_MINUS: [("fused", MULTILABEL)],
        ArchVariant.CASENET_EDGE: [(f"feat{j}", BINARY) for j in (1, 2, 3)]
        + [("side5", MULTILABEL), ("fused", MULTILABEL)],
    }[variant]


def network_losses(net: Network, outputs: dict[str, Tensor], stack: np.ndarray,
                   mc_labels: np.ndarray | None = None) -> tuple[LossValue, list[tuple[Tensor, np.ndarray]]]:
    """Total loss and the per-output gradient seeds for ``Tape.backward``.

    ``stack`` is the (K, H, W) multi-label ground truth; the softmax
    baseline needs the non-overlapping (H, W) ``mc_labels`` instead.
    """
    total = LossValue(0.0, {})
    seeds = []
    beta = compute_beta(stack) if stack is not None else None
    for name, kind in supervision(net.variant):
        act = outputs[name].data
        if kind == MULTILABEL:
            lv, g = multilabel_loss(act, stack[None], beta, name=name)
        elif kind == BINARY:
            lv, g = binary_edge_loss(act, edge_any(stack)[None], name=name)
        else:
            if mc_labels is None:
                raise ConfigError("softmax supervision needs a multiclass label map")
            lv, g = reweighted_softmax_loss(act, mc_labels, name=name)
        total = total + lv
        seeds.append((outputs[name], g))
    return total, seeds


def loss_and_grads(net: Network, x: Tensor, stack: np.ndarray, mc_labels: np.ndarray | None = None) -> LossValue:
    """One forward/backward pass; gradients are added into the parameters."""
    with Tape() as tape:
        out = net(x)
    lv, seeds = network_losses(net, out, stack, mc_labels)
    tape.backward(seeds)
    return lv


@dataclass
class Sample:
    image: np.ndarray
    stack: np.ndarray
    mc: np.ndarray | None


def load_training_set(manifest: DatasetManifest, cfg: RunConfig) -> list[Sample]:
    samples = []
    for i in range(len(manifest)):
        img, seg = manifest.load(i)
        if cfg.labels_dir is not None:
            stack = read_label_stack(cfg.labels_dir, manifest.stem(i), "train", cfg.background_as_class, cfg.radius)
            if stack.shape[1:] != seg.shape:
                raise DataError(f"label stack for {manifest.stem(i)} does not match its image")
        else:
            stack = training_stack(seg, manifest.k, cfg.radius, cfg.background_as_class)
        mc = multiclass_labels(seg, stack, cfg.background_as_class) if cfg.arch is ArchVariant.BASIC_SOFTMAX else None
        samples.append(Sample(img, stack, mc))
    return samples


def network_k(manifest: DatasetManifest, cfg: RunConfig) -> int:
    k = manifest.k + 1 if cfg.background_as_class else manifest.k
    if k != cfg.k:
        raise ConfigError(f"config k={cfg.k} but the dataset provides {k} edge classes")
    return k


class TrainLog:
    """Append-only JSON-lines log with windowed moving averages per loss stream."""

    def __init__(self, path: Path | None, window: int):
        self.path = path
        self.window = max(1, window)
        self.history: dict[str, deque] = {}
        self.records: list[dict] = []
        if path is not None:
            path.write_text("")

    def append(self, step: int, lr: float, losses: dict[str, float]) -> dict:
        avgs = {}
        for name, v in losses.items():
            q = self.history.setdefault(name, deque(maxlen=self.window))
            q.append(v)
            avgs[name] = sum(q) / len(q)
        rec = {"step": step, "lr": lr, "loss": losses, "moving_avg": avgs,
               "total": sum(losses.values())}
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
        return rec


def train(cfg: RunConfig, manifest: DatasetManifest, out_dir: str | Path | None = None,
          progress: Callable[[dict], None] | None = None) -> Network:
    """Train per ``cfg``; writes ``checkpoint.sedw`` and ``train_log.jsonl`` into ``out_dir``.

    ``max_steps`` counts optimizer updates, each averaging ``iter_size``
    single-image forward/backward passes.
    """
    seed = cfg.require_seed()
    k = network_k(manifest, cfg)
    if len(manifest) == 0 and cfg.max_steps > 0:
        raise ConfigError("cannot train on an empty dataset")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    net = build(cfg.arch, k, cfg.backbone_config(), seed=seed)
    samples = load_training_set(manifest, cfg)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    opt = SGD(net.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay, cfg.iter_size)
    tlog = TrainLog(out / "train_log.jsonl" if out is not None else None, cfg.log_window)
    ckpt = out / "checkpoint.sedw" if out is not None else None

    for step in range(cfg.max_steps):
        opt.lr = step_lr(cfg.lr, step, cfg.effective_step_size, cfg.gamma)
        sums: dict[str, float] = {}
        for _ in range(cfg.iter_size):
            s = samples[int(rng.integers(len(samples)))]
            img, lab = augment(s.image, s.stack if s.mc is None else np.concatenate([s.stack, s.mc[None]]),
                               cfg.mirror, cfg.crop, rng)
            stack, mc = (lab, None) if s.mc is None else (lab[:-1], lab[-1])
            try:
                lv = loss_and_grads(net, to_input(img), stack, mc)
            except NumericError as e:
                if out is not None:
                    np.savez(out / "nan_dump.npz", image=img, labels=lab, step=step)
                raise NumericError(f"step {step}: {e}; offending batch dumped to nan_dump.npz") from e
            opt.accumulated()
            for name, v in lv.breakdown.items():
                sums[name] = sums.get(name, 0.0) + v
        opt.step()
        rec = tlog.append(step + 1, opt.lr, {n: v / cfg.iter_size for n, v in sums.items()})
        if progress is not None:
            progress(rec)
        if ckpt is not None and cfg.checkpoint_every > 0 and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt, net)
    if ckpt is not None:
        save_checkpoint(ckpt, net)
    return net
