"""PNG helpers for label maps and CAM heatmaps."""
import numpy as np
from PIL import Image

from .pseudo import IGNORE

__all__ = ["label_palette", "save_label_png", "save_heatmap_png", "load_image"]

_HUES = [
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
]


def label_palette(num_classes):
    """768-entry flat palette: 0 black, classes distinct hues, 255 white."""
    pal = np.zeros((256, 3), dtype=np.uint8)
    for c in range(num_classes):
        pal[c + 1] = _HUES[c % len(_HUES)]
    pal[IGNORE] = (255, 255, 255)
    return pal.ravel().tolist()


def save_label_png(label, path, num_classes):
    img = Image.fromarray(np.asarray(label, dtype=np.uint8), mode="P")
    img.putpalette(label_palette(num_classes))
    img.save(path)


def save_heatmap_png(cam, path, size=None):
    """Grey-scale PNG of a [0, 1] map, optionally resized (nearest)."""
    img = Image.fromarray((np.clip(cam, 0.0, 1.0) * 255).round().astype(np.uint8), mode="L")
    if size is not None:
        img = img.resize((size, size), Image.NEAREST)
    img.save(path)


def load_image(path, size):
    """RGB image as float32 ``(size, size, 3)`` in [0, 1]."""
    img = Image.open(path).convert("RGB")
    if img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0
