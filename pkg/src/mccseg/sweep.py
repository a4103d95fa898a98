"""Masking ratio / scale grid: one short training run per cell."""
import csv

from .data import generate_dataset, stack
from .training import evaluate, init_state, train

__all__ = ["load_splits", "run_once", "mask_sweep", "write_sweep_csv"]

SWEEP_COLUMNS = ("ratio", "scale", "pseudo_miou", "seg_miou")


def load_splits(cfg):
    """Train and val arrays for the synthetic corpus described by ``cfg``."""
    train_set = stack(generate_dataset(cfg.n_train, cfg.num_classes, cfg.data_seed, cfg.crop_size))
    val_set = stack(generate_dataset(cfg.n_val, cfg.num_classes, [cfg.data_seed, 1], cfg.crop_size))
    return train_set, val_set


def run_once(cfg, splits=None):
    """Train with ``cfg`` and return val mIoU reports and the final state."""
    (xt, yt, _), (xv, yv, mv) = splits if splits is not None else load_splits(cfg)
    state = init_state(cfg)
    train(state, xt, yt)
    return evaluate(state.model, cfg, xv, yv, mv), state


def mask_sweep(ratios, scales, cfg):
    """Rows ``{ratio, scale, pseudo_miou, seg_miou}`` sorted by (ratio, scale)."""
    splits = load_splits(cfg)
    rows = []
    for ratio in sorted(ratios):
        for scale in sorted(scales):
            reports, _ = run_once(cfg.replace(mask_ratio=float(ratio), mask_scale=int(scale)), splits)
            rows.append(
                {
                    "ratio": float(ratio),
                    "scale": int(scale),
                    "pseudo_miou": reports["pseudo"].mean,
                    "seg_miou": reports["seg"].mean,
                }
            )
    return rows


def write_sweep_csv(rows, fh):
    writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
