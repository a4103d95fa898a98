"""CAMs, reliable pseudo labels, pairwise affinity labels and view positiveness.

Everything here works on torch tensors without tracking gradients; pseudo
labels are targets, never differentiated through.
"""
import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import DimensionError, DomainError

__all__ = [
    "IGNORE",
    "AFF_NEG",
    "AFF_POS",
    "AFF_IGNORE",
    "compute_cam",
    "normalize_cam",
    "upsample_cam",
    "partition",
    "affinity_pairs",
    "token_label",
    "positiveness",
    "identity_refiner",
]

IGNORE = 255
AFF_NEG, AFF_POS, AFF_IGNORE = 0, 1, 255


def _grid_side(n):
    side = int(round(n ** 0.5))
    if side * side != n:
        raise DimensionError(f"{n} tokens do not form a square grid")
    return side


def normalize_cam(raw, present):
    """Zero absent classes, min-max scale each present channel to [0, 1].

    ``raw``: ``(..., C, h, w)``; ``present``: ``(..., C)``. A constant
    channel has no usable contrast and is mapped to zeros.
    """
    present = torch.as_tensor(present, dtype=torch.bool)
    flat = raw.flatten(-2)
    lo = flat.amin(dim=-1, keepdim=True)
    hi = flat.amax(dim=-1, keepdim=True)
    span = hi - lo
    degenerate = span <= 0
    norm = torch.where(degenerate, torch.zeros_like(flat), (flat - lo) / torch.where(degenerate, torch.ones_like(span), span))
    norm = norm * present[..., None].to(norm.dtype)
    return norm.reshape(raw.shape)


@torch.no_grad()
def compute_cam(patches, weights, present, grid=None):
    """Class activation maps from patch tokens and classifier weights.

    ``patches``: ``(N, D)`` or ``(B, N, D)``; ``weights``: ``(D, C)``;
    ``present``: ``(C,)`` or ``(B, C)``. Returns ``(..., C, h, w)`` in [0, 1]
    where ``grid = (h, w)`` defaults to a square layout.
    """
    present = torch.as_tensor(present, dtype=torch.bool)
    if patches.shape[-1] != weights.shape[0]:
        raise DimensionError(f"token dim {patches.shape[-1]} != classifier rows {weights.shape[0]}")
    if present.shape[-1] != weights.shape[1]:
        raise DimensionError("present-class vector does not match the number of classes")
    if not bool(present.any(dim=-1).all()):
        raise DomainError("compute_cam needs at least one present class")
    if grid is None:
        side = _grid_side(patches.shape[-2])
        grid = (side, side)
    if grid[0] * grid[1] != patches.shape[-2]:
        raise DimensionError(f"grid {grid} does not hold {patches.shape[-2]} tokens")
    raw = (patches @ weights).transpose(-1, -2)
    raw = raw.reshape(*raw.shape[:-1], *grid)
    return normalize_cam(raw, present)


def upsample_cam(cam, size):
    """Bilinear resize of ``(B, C, h, w)`` CAMs to ``size x size``."""
    return F.interpolate(cam, size=(size, size), mode="bilinear", align_corners=False).clamp_(0.0, 1.0)


@torch.no_grad()
def partition(cam, beta_bg, beta_fg):
    """Three-way split of a CAM into classes (1..C), background 0 and 255.

    Takes ``(..., C, h, w)`` and returns int64 ``(..., h, w)``. Ties in the
    arg-max go to the lowest class id.
    """
    if not 0.0 < beta_bg < beta_fg < 1.0:
        raise DomainError(f"need 0 < beta_bg < beta_fg < 1, got ({beta_bg}, {beta_fg})")
    top, idx = cam.max(dim=-3)  # torch returns the first maximal index
    label = torch.full_like(idx, IGNORE)
    label[top >= beta_fg] = idx[top >= beta_fg] + 1
    label[top <= beta_bg] = 0
    return label


def affinity_pairs(label):
    """Pairwise affinity labels over all ordered token pairs.

    ``label`` is ``(h, w)`` or ``(B, h, w)``; output is ``(..., N, N)`` uint8
    with 1 = same label, 0 = different label, 255 = either side uncertain.
    """
    lab = torch.as_tensor(label).flatten(-2)
    a = lab[..., :, None]
    b = lab[..., None, :]
    out = (a == b).to(torch.uint8)
    out[(a == IGNORE) | (b == IGNORE)] = AFF_IGNORE
    return out


@torch.no_grad()
def token_label(cam, beta_fg):
    """Foreground bit per token: max activation over classes >= ``beta_fg``."""
    return cam.amax(dim=-3) >= beta_fg


def positiveness(tokens_fg, keep, mu=0.5):
    """True iff kept tokens are foreground in more than a ``mu`` share.

    Evaluates ``sum(fg & keep) > mu * sum(keep)``; equality is negative.
    ``tokens_fg`` is a ``(..., h, w)`` grid, ``keep`` either the same grid or
    flattened ``(..., h*w)``. Leading axes broadcast, so a ``(B, 1, h, w)``
    label against ``(B, K, h*w)`` masks yields ``(B, K)`` verdicts.
    """
    fg = torch.as_tensor(np.asarray(tokens_fg)).to(torch.bool)
    kp = torch.as_tensor(np.asarray(keep)).to(torch.bool)
    h, w = fg.shape[-2:]
    if kp.shape[-2:] != (h, w):
        if kp.shape[-1] != h * w:
            raise DimensionError(f"keep mask of shape {tuple(kp.shape)} does not match a {h}x{w} grid")
        kp = kp.reshape(*kp.shape[:-1], h, w)
    n_keep = kp.sum(dim=(-2, -1))
    if bool((n_keep == 0).any()):
        raise DomainError("positiveness: view has no kept tokens")
    n_fg = (fg & kp).sum(dim=(-2, -1))
    verdict = n_fg.to(torch.float64) > mu * n_keep.to(torch.float64)
    return bool(verdict) if verdict.ndim == 0 else verdict


def identity_refiner(label, image=None):
    """Default pseudo-label refiner: returns the label unchanged."""
    return label
