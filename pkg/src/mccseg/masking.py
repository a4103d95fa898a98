"""Block-structured random key masks.

Convention used throughout the package: ``keep == 1`` means the key is
attended, ``keep == 0`` means it is dropped from every attention row.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError

__all__ = [
    "KeyMask",
    "sample_key_mask",
    "sample_key_masks",
    "expand",
    "mask_stats",
    "check_block_alignment",
]


@dataclass(frozen=True)
class KeyMask:
    keep: np.ndarray  # bool, shape (H'*W',), row-major over the token grid
    grid: tuple
    ratio: float
    scale: int
    forced: bool = False

    @property
    def drop(self):
        return ~self.keep

    def as_grid(self):
        return self.keep.reshape(self.grid)


def _validate(grid_h, grid_w, ratio, scale):
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"masking ratio must lie in [0, 1), got {ratio}")
    if int(scale) != scale or not 1 <= scale <= min(grid_h, grid_w):
        raise ConfigError(f"masking scale must be an integer in [1, {min(grid_h, grid_w)}], got {scale}")


def sample_key_masks(n, grid_h, grid_w, ratio, scale, rng):
    """Draw ``n`` key masks at once.

    The token grid is tiled into ``scale x scale`` blocks (clipped at the
    border); each block is dropped independently with probability ``ratio``.
    When every block of a mask is dropped, one block chosen uniformly is kept.

    Returns ``(keep, forced)``: a bool array of shape ``(n, grid_h*grid_w)``
    and a bool array of shape ``(n,)`` flagging forced keeps.
    """
    _validate(grid_h, grid_w, ratio, scale)
    scale = int(scale)
    bh = -(-grid_h // scale)
    bw = -(-grid_w // scale)
    block_drop = rng.random((n, bh * bw)) < ratio
    forced = block_drop.all(axis=1)
    n_forced = int(forced.sum())
    if n_forced:
        rescue = rng.integers(0, bh * bw, size=n_forced)
        block_drop[np.flatnonzero(forced), rescue] = False
    blocks = block_drop.reshape(n, bh, bw)
    cells = blocks.repeat(scale, axis=1).repeat(scale, axis=2)[:, :grid_h, :grid_w]
    keep = ~cells.reshape(n, grid_h * grid_w)
    return keep, forced


def sample_key_mask(grid_h, grid_w, ratio, scale, rng):
    keep, forced = sample_key_masks(1, grid_h, grid_w, ratio, scale, rng)
    return KeyMask(keep=keep[0], grid=(grid_h, grid_w), ratio=ratio, scale=int(scale), forced=bool(forced[0]))


def expand(mask):
    """Column expansion of a key mask: ``M[x, y] = keep[y]`` for every row x."""
    keep = mask.keep if isinstance(mask, KeyMask) else np.asarray(mask, dtype=bool)
    return np.broadcast_to(keep, (keep.size, keep.size)).copy()


def check_block_alignment(keep_grid, scale):
    """True iff the dropped cells form whole aligned ``scale``-blocks."""
    keep_grid = np.asarray(keep_grid, dtype=bool)
    h, w = keep_grid.shape
    for i in range(0, h, scale):
        for j in range(0, w, scale):
            block = keep_grid[i:i + scale, j:j + scale]
            if block.any() and not block.all():
                return False
    return True


def mask_stats(ratio, scale, grid_h, grid_w, trials, rng=None, seed=0):
    """Summary statistics over ``trials`` sampled masks."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    keep, forced = sample_key_masks(trials, grid_h, grid_w, ratio, scale, rng)
    grids = keep.reshape(trials, grid_h, grid_w)
    # alignment on a subsample keeps this cheap for 1e5 trials
    probe = grids[: min(trials, 2000)]
    aligned = all(check_block_alignment(g, int(scale)) for g in probe)
    return {
        "ratio": float(ratio),
        "scale": int(scale),
        "mean_drop_fraction": float(1.0 - keep.mean()),
        "min_kept": int(keep.sum(axis=1).min()),
        "block_alignment_ok": bool(aligned),
        "forced_keep_rate": float(forced.mean()),
    }
