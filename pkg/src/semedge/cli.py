"""Command-line entry point: ``semedge <subcommand> ...``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from semedge.bench import default_thresholds, match, thin
from semedge.config import RunConfig
from semedge.dataset import DatasetManifest, gen_synthetic
from semedge.errors import ConfigError, DataError, SemEdgeError
from semedge.formats import load_checkpoint, read_prediction
from semedge.infer import check_k, evaluate, predict_manifest
from semedge.labels import eval_stack, write_label_set
from semedge.netpbm import read_pgm, write_ppm
from semedge.train import train
from semedge.viz import class_gray, encode_hsv, tp_fp_overlay

log = logging.getLogger("semedge")

# flag name -> RunConfig field, for flags that override the config file
_OVERRIDES = {
    "variant": "variant", "k": "k", "lr": "lr", "momentum": "momentum", "weight_decay": "weight_decay",
    "iter_size": "iter_size", "max_steps": "max_steps", "step_size": "step_size", "gamma": "gamma",
    "seed": "seed", "crop": "crop", "mirror": "mirror", "radius": "radius",
    "background_as_class": "background_as_class", "train_manifest": "train_manifest",
    "test_manifest": "test_manifest", "labels_dir": "labels_dir", "tolerance": "tolerance",
    "n_thresholds": "n_thresholds", "halve": "halve", "checkpoint_every": "checkpoint_every",
    "threads": "threads",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file (if any) with every explicitly given flag applied on top."""
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    d = cfg.to_dict()
    for flag, key in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if key in ("train_manifest", "test_manifest", "labels_dir"):
            v = str(Path(v).resolve())
        d[key] = v
    channels = getattr(args, "stage_channels", None)
    if channels is not None:
        d["backbone"] = dict(d["backbone"], stage_channels=channels)
    return RunConfig.from_dict(d)


def _manifest(path, what: str) -> DatasetManifest:
    if path is None:
        raise ConfigError(f"no {what} manifest given")
    return DatasetManifest.read(path)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ------------------------------------------------------------------ commands


def cmd_gen_data(args) -> int:
    seed = args.seed
    out = Path(args.out)
    owned = [out / "images", out / "segs"] + [out / f"{s}.json" for s in ("train", "test")]
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise ConfigError(f"{out} exists and is not empty (use --force to overwrite)")
        for p in owned:
            if p.is_dir():
                shutil.rmtree(p)
            elif p.exists():
                p.unlink()
    for split, n in (("train", args.n_train), ("test", args.n_test)):
        m = gen_synthetic(out, seed, n, args.height, args.width, args.k, args.shapes, args.noise, split)
        print(f"{split}: {len(m)} images -> {out / (split + '.json')}")
    return 0


def cmd_make_labels(args) -> int:
    m = _manifest(args.manifest, "dataset")
    paths = write_label_set(m, args.out, args.radius, args.background_as_class)
    print(f"wrote {len(paths)} label files to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    cfg.require_seed()
    manifest = _manifest(cfg.train_manifest, "training")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.json", cfg.dumps())

    def progress(rec):
        if rec["step"] % max(1, args.log_every) == 0 or rec["step"] == cfg.max_steps:
            avg = ", ".join(f"{k}={v:.2f}" for k, v in sorted(rec["moving_avg"].items()))
            log.info("step %d lr %.3g %s", rec["step"], rec["lr"], avg)

    with threadpool_limits(cfg.threads):
        train(cfg, manifest, out, progress)
    print(f"checkpoint -> {out / 'checkpoint.sedw'}")
    return 0


def cmd_predict(args) -> int:
    cfg = resolve_config(args)
    manifest = _manifest(args.manifest or cfg.test_manifest, "test")
    net = load_checkpoint(args.checkpoint)
    check_k(net, args.k if args.k is not None else net.k)
    with threadpool_limits(cfg.threads):
        paths = predict_manifest(net, manifest, args.out)
    print(f"wrote {len(paths)} predictions to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    manifest = _manifest(args.manifest or cfg.test_manifest, "test")
    report, table = evaluate(args.pred, manifest, default_thresholds(cfg.n_thresholds), cfg.tolerance,
                             cfg.halve, cfg.background_as_class, cfg.to_dict(), cfg.labels_dir)
    out = Path(args.out)
    _write(out / "report.json", report.dumps())
    _write(out / "report.txt", report.to_text())
    if args.csv:
        _write(out / "pr_table.csv", table.to_csv())
    sys.stdout.write(report.to_text())
    return 0


def _parse_hues(text: str | None, k: int):
    if text is None:
        return None
    hues = [float(h) for h in text.split(",")]
    if len(hues) != k:
        raise ConfigError(f"{len(hues)} hues given for {k} classes")
    return hues


def _load_maps(args) -> tuple[np.ndarray, str]:
    """(K, H, W) float maps and an output stem from --pred or --seg."""
    if (args.pred is None) == (args.seg is None):
        raise ConfigError("give exactly one of --pred or --seg")
    if args.pred is not None:
        return read_prediction(args.pred), Path(args.pred).stem
    if args.k is None:
        raise ConfigError("--seg needs --k (number of edge classes)")
    seg = read_pgm(args.seg)
    return eval_stack(seg, args.k, args.background_as_class).astype(np.float32), Path(args.seg).stem


def cmd_viz(args) -> int:
    maps, stem = _load_maps(args)
    k = maps.shape[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "hsv":
        path = out / f"{stem}_hsv.ppm"
        write_ppm(path, encode_hsv(maps, _parse_hues(args.hues, k), args.top2))
        written = [path]
    elif args.mode == "per-class-gray":
        written = []
        for c in range(k):
            path = out / f"{stem}_class{c + 1}.ppm"
            write_ppm(path, class_gray(maps[c]))
            written.append(path)
    else:
        if args.gt_seg is None:
            raise ConfigError("overlay mode needs --gt-seg")
        gt = eval_stack(read_pgm(args.gt_seg), k if not args.background_as_class else k - 1,
                        args.background_as_class)
        if gt.shape != maps.shape:
            raise DataError(f"ground truth {gt.shape} does not match maps {maps.shape}")
        classes = range(k) if args.cls is None else [args.cls - 1]
        pred = np.zeros(maps.shape[1:], dtype=bool)
        ref = np.zeros(maps.shape[1:], dtype=bool)
        max_dist = args.tolerance * float(np.hypot(*maps.shape[1:]))
        for c in classes:
            p = thin(maps[c] >= args.threshold) > 0
            g = gt[c] > 0
            # matched pixels are marked on both sides so they render as true positives
            res = match(p, g, max_dist)
            for (py, px), (gy, gx) in res.pairs:
                g[py, px] = True
                p[gy, gx] = True
            pred |= p
            ref |= g
        path = out / f"{stem}_overlay.ppm"
        write_ppm(path, tp_fp_overlay(pred, ref))
        written = [path]
    for p in written:
        print(p)
    return 0


# -------------------------------------------------------------------- parser


def _add_config_flags(p: argparse.ArgumentParser, training: bool) -> None:
    p.add_argument("--config", help="JSON run config; flags below override it")
    p.add_argument("--threads", type=int, help="BLAS threads (1 keeps runs bitwise reproducible)")
    p.add_argument("--background-as-class", action="store_const", const=True, default=None)
    p.add_argument("--labels-dir", help="precomputed labels from make-labels")
    p.add_argument("--tolerance", type=float, help="match distance as a fraction of the image diagonal")
    p.add_argument("--n-thresholds", type=int)
    p.add_argument("--halve", action="store_const", const=True, default=None)
    p.add_argument("--test-manifest")
    if not training:
        return
    p.add_argument("--variant", help="Basic, DSN, CASENet, CASENet-minus, CASENet-edge or Basic-softmax")
    p.add_argument("--k", type=int, help="number of edge classes")
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--iter-size", type=int)
    p.add_argument("--max-steps", type=int, help="optimizer updates (each averages iter-size passes)")
    p.add_argument("--step-size", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--crop", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--no-mirror", dest="mirror", action="store_const", const=False, default=None)
    p.add_argument("--radius", type=int)
    p.add_argument("--train-manifest")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--stage-channels", type=int, nargs=5, metavar="C")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semedge", description="Category-aware semantic edge detection.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--k", type=int, default=3, help="number of shape (edge) classes")
    p.add_argument("--shapes", type=int, default=4, help="shapes per image")
    p.add_argument("--noise", type=float, default=20.0, help="pixel noise sigma")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("make-labels", help="precompute training and evaluation label stacks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--background-as-class", action="store_true")
    p.set_defaults(func=cmd_make_labels)

    p = sub.add_parser("train", help="train a network")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--log-every", type=int, default=10)
    _add_config_flags(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write .sedp probability maps for a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="defaults to the config's test manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, help="expected number of classes")
    _add_config_flags(p, training=False)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="MF(ODS) and AP of predictions against a manifest")
    p.add_argument("--pred", required=True, help="directory of .sedp files")
    p.add_argument("--manifest", help="defaults to the config's test manifest")
    p.add_argument("--out", required=True, help="directory for report.json and report.txt")
    p.add_argument("--csv", action="store_true", help="also write pr_table.csv")
    _add_config_flags(p, training=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="render predictions or segmentations as PPM images")
    p.add_argument("--mode", choices=("hsv", "overlay", "per-class-gray"), default="hsv")
    p.add_argument("--pred", help="a .sedp prediction file")
    p.add_argument("--seg", help="a .pgm segmentation (renders its boundaries)")
    p.add_argument("--k", type=int, help="edge classes for --seg")
    p.add_argument("--background-as-class", action="store_true")
    p.add_argument("--hues", help="comma-separated hue per class in degrees")
    p.add_argument("--top2", action="store_true", help="drop responses < 0.5, mix the two strongest")
    p.add_argument("--gt-seg", help="overlay: ground-truth segmentation")
    p.add_argument("--class", dest="cls", type=int, help="overlay: 1-based class (default all)")
    p.add_argument("--threshold", type=float, default=0.5, help="overlay: binarization threshold")
    p.add_argument("--tolerance", type=float, default=0.02, help="overlay: match distance fraction")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except SemEdgeError as e:
        print(f"semedge {args.command}: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"semedge {args.command}: error: {e}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
