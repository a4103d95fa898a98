"""Synthetic weakly labelled segmentation corpus.

Each class is a fixed shape drawn with a fixed colour and texture; 1-3
non-overlapping objects sit on a smoothly varying textured background.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError

__all__ = ["SyntheticSample", "generate_dataset", "stack", "CLASS_NAMES"]

CLASS_NAMES = ("square", "disk", "triangle", "diamond", "cross", "ring")
_COLORS = np.array(
    [
        [0.85, 0.20, 0.20],
        [0.20, 0.75, 0.25],
        [0.25, 0.35, 0.90],
        [0.90, 0.80, 0.15],
        [0.80, 0.25, 0.85],
        [0.15, 0.80, 0.85],
    ]
)


@dataclass
class SyntheticSample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    image_labels: np.ndarray  # (C,) uint8
    gt_mask: np.ndarray  # (H, W) int64, 0 = background, c + 1 = class c


def _shape_mask(kind, size, yy, xx):
    c = (size - 1) / 2.0
    dy, dx = yy - c, xx - c
    r = size / 2.0
    if kind == 0:
        return np.ones_like(yy, dtype=bool)
    if kind == 1:
        return dy ** 2 + dx ** 2 <= r ** 2
    if kind == 2:
        # apex at the top, base along the bottom row
        return np.abs(dx) <= (yy + 1) / 2.0
    if kind == 3:
        return np.abs(dy) + np.abs(dx) <= r
    if kind == 4:
        return (np.abs(dy) <= r / 3) | (np.abs(dx) <= r / 3)
    return (dy ** 2 + dx ** 2 <= r ** 2) & (dy ** 2 + dx ** 2 >= (0.5 * r) ** 2)


def _texture(kind, size, yy, xx):
    if kind % 3 == 0:
        return 0.85 + 0.15 * ((yy // 2) % 2)
    if kind % 3 == 1:
        return 0.85 + 0.15 * (((yy // 3) + (xx // 3)) % 2)
    return 0.85 + 0.15 * ((xx // 2) % 2)


def _background(h, w, rng):
    base = rng.uniform(0.3, 0.6, size=3)
    coarse = rng.normal(0.0, 0.08, size=(4, 4, 3))
    smooth = np.kron(coarse, np.ones((h // 4, w // 4, 1)))
    noise = rng.normal(0.0, 0.03, size=(h, w, 3))
    return np.clip(base + smooth + noise, 0.0, 1.0)


def _make_sample(rng, size, n_classes):
    image = _background(size, size, rng)
    gt = np.zeros((size, size), dtype=np.int64)
    k = int(rng.integers(1, min(3, n_classes) + 1))
    classes = rng.choice(n_classes, size=k, replace=False)
    occupied = np.zeros((size, size), dtype=bool)
    for cls in classes:
        for _ in range(50):
            side = int(rng.integers(size // 4, size // 2 + 1))
            top = int(rng.integers(0, size - side + 1))
            left = int(rng.integers(0, size - side + 1))
            box = (slice(top, top + side), slice(left, left + side))
            if not occupied[box].any():
                break
        else:
            continue
        yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
        shape = _shape_mask(cls, side, yy, xx)
        shade = _texture(cls, side, yy, xx)[..., None] * _COLORS[cls]
        region = image[box]
        region[shape] = np.clip(shade[shape] + rng.normal(0.0, 0.02, size=(int(shape.sum()), 3)), 0.0, 1.0)
        gt[box][shape] = cls + 1
        occupied[box] = True
    labels = np.zeros(n_classes, dtype=np.uint8)
    for c in np.unique(gt):
        if c > 0:
            labels[c - 1] = 1
    return SyntheticSample(image=image.astype(np.float32), image_labels=labels, gt_mask=gt)


def generate_dataset(n, num_classes=3, seed=0, image_size=64):
    """Deterministic list of ``n`` samples for the given seed."""
    if not 1 <= num_classes <= len(CLASS_NAMES):
        raise ConfigError(f"num_classes must lie in [1, {len(CLASS_NAMES)}]")
    if n < 1:
        raise ConfigError("n must be >= 1")
    if image_size % 4:
        raise ConfigError("image_size must be a multiple of 4")
    seeds = np.random.SeedSequence(seed).spawn(n)
    return [_make_sample(np.random.default_rng(s), image_size, num_classes) for s in seeds]


def stack(samples):
    """``(images, labels, masks)`` arrays from a list of samples."""
    images = np.stack([s.image for s in samples])
    labels = np.stack([s.image_labels for s in samples])
    masks = np.stack([s.gt_mask for s in samples])
    return images, labels, masks
