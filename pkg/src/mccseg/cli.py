"""Command line entry point: ``mcc {train,eval,cam,mask-stats,sweep}``."""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .config import CONFIG_DOCS, TrainConfig, dump_config, load_config
from .exceptions import MCCError
from .masking import mask_stats
from .sweep import load_splits, mask_sweep, write_sweep_csv

log = logging.getLogger("mccseg")


def _metric_rows(split, reports, num_classes):
    rows = []
    for kind in ("pseudo", "seg"):
        rep = reports[kind]
        row = {"split": split, "kind": kind, "miou": rep.mean}
        for c in range(num_classes + 1):
            row[f"iou_{c}"] = "" if np.isnan(rep.iou[c]) else float(rep.iou[c])
        rows.append(row)
    return rows


def _write_metrics(rows, fh):
    writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)


def cmd_train(args):
    from .training import evaluate, init_state, save_state, train

    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w") as fh:
        fh.write(dump_config(cfg))
    (xt, yt, mt), (xv, yv, mv) = load_splits(cfg)
    state = init_state(cfg)
    with open(os.path.join(args.out, "train_log.jsonl"), "w") as fh:
        train(state, xt, yt, log_file=fh, dump_path=os.path.join(args.out, "crash.ckpt"), progress_every=args.progress)
    save_state(state, os.path.join(args.out, "model.ckpt"))
    rows = _metric_rows("train", evaluate(state.model, cfg, xt, yt, mt), cfg.num_classes)
    rows += _metric_rows("val", evaluate(state.model, cfg, xv, yv, mv), cfg.num_classes)
    with open(os.path.join(args.out, "metrics.csv"), "w", newline="") as fh:
        _write_metrics(rows, fh)
    _write_metrics(rows, sys.stdout)


def cmd_eval(args):
    from .training import evaluate, load_state

    state = load_state(args.checkpoint)
    cfg = state.config
    train_set, val_set = load_splits(cfg)
    xs, ys, ms = train_set if args.split == "train" else val_set
    rows = _metric_rows(args.split, evaluate(state.model, cfg, xs, ys, ms), cfg.num_classes)
    _write_metrics(rows, sys.stdout)


def cmd_cam(args):
    from .imageio import load_image, save_heatmap_png, save_label_png
    from .training import load_state, predict_maps

    state = load_state(args.checkpoint)
    cfg = state.config
    image = load_image(args.image, cfg.crop_size)[None]
    labels = None
    if args.labels:
        labels = np.zeros((1, cfg.num_classes), dtype=np.uint8)
        labels[0, [int(c) for c in args.labels.split(",")]] = 1
    pseudo, _, cams = predict_maps(state.model, cfg, image, labels)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    for c in range(cfg.num_classes):
        save_heatmap_png(cams[0, c], os.path.join(args.out, f"{stem}_cam{c}.png"), size=cfg.crop_size)
    save_label_png(pseudo[0], os.path.join(args.out, f"{stem}_label.png"), cfg.num_classes)
    print(json.dumps({"image": args.image, "classes_present": [int(c) for c in np.flatnonzero(cams[0].max(axis=(1, 2)) > 0)]}))


def cmd_mask_stats(args):
    writer = csv.writer(sys.stdout)
    writer.writerow(["ratio", "scale", "mean_drop", "min_kept", "forced_keep_rate"])
    rng = np.random.default_rng(args.seed)
    for ratio in args.ratio:
        for scale in args.scale:
            s = mask_stats(ratio, scale, args.grid, args.grid, args.trials, rng=rng)
            writer.writerow([ratio, scale, s["mean_drop_fraction"], s["min_kept"], s["forced_keep_rate"]])


def cmd_sweep(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.iters is not None:
        cfg = cfg.replace(total_iters=args.iters, warmup_iters=min(cfg.warmup_iters, args.iters))
    rows = mask_sweep(args.ratios, args.scales, cfg)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_sweep_csv(rows, fh)
    write_sweep_csv(rows, sys.stdout)


def cmd_config(args):
    cfg = TrainConfig()
    for line in dump_config(cfg).splitlines():
        key = line.split("=", 1)[0].strip()
        print(f"# {CONFIG_DOCS[key]}\n{line}")


def build_parser():
    parser = argparse.ArgumentParser(prog="mcc", description="Masked collaborative contrast for weakly supervised segmentation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on the synthetic corpus")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/default")
    p.add_argument("--progress", type=int, default=0, help="log every N steps (0 = quiet)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mIoU of a checkpoint on a synthetic split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cam", help="write CAM heatmaps and the pseudo label for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--labels", help="comma separated present class ids; default: predicted")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_cam)

    p = sub.add_parser("mask-stats", help="statistics of sampled key masks")
    p.add_argument("--ratio", type=float, nargs="+", default=[0.95])
    p.add_argument("--scale", type=int, nargs="+", default=[4])
    p.add_argument("--grid", type=int, default=8)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mask_stats)

    p = sub.add_parser("sweep", help="train one short run per (ratio, scale) cell")
    p.add_argument("--ratios", type=float, nargs="+", required=True)
    p.add_argument("--scales", type=int, nargs="+", required=True)
    p.add_argument("--config")
    p.add_argument("--iters", type=int, help="override total_iters per cell")
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("config", help="print the default config with documentation")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except MCCError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
