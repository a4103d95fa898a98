"""Training objective terms and their weighted combination."""
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import DomainError, NumericError
from .pseudo import AFF_NEG, AFF_POS, IGNORE

__all__ = [
    "LossWeights",
    "Projector",
    "cls_loss",
    "mcc_loss",
    "batch_mcc_loss",
    "ema_update",
    "affinity_loss",
    "seg_loss",
    "reg_loss",
    "total_loss",
    "LOSS_KEYS",
]

LOSS_KEYS = ("cls", "cls_aux", "aff", "mcc", "seg", "reg")


@dataclass
class LossWeights:
    aff: float = 0.2
    mcc: float = 0.5
    seg: float = 0.1
    reg: float = 0.05

    def __post_init__(self):
        for name in ("aff", "mcc", "seg", "reg"):
            if getattr(self, name) < 0:
                raise DomainError(f"loss weight {name} must be >= 0")


class Projector(nn.Module):
    """Linear head mapping class tokens into the contrast space."""

    def __init__(self, dim, proj_dim=128, trainable=True):
        super().__init__()
        self.linear = nn.Linear(dim, proj_dim)
        if not trainable:
            self.requires_grad_(False)

    def forward(self, x):
        return self.linear(x)


def cls_loss(logits, labels):
    """Multi-label soft margin loss, averaged over classes (and batch)."""
    labels = torch.as_tensor(labels, dtype=logits.dtype)
    return F.binary_cross_entropy_with_logits(logits, labels)


def mcc_loss(q, keys, positive, tau=0.5, eps=1e-8):
    """InfoNCE between one global embedding and its local views.

    ``q``: ``(P,)``; ``keys``: ``(K, P)``; ``positive``: ``(K,)`` bool.
    All embeddings are L2-normalised first. With no positive view the image
    contributes 0.
    """
    positive = torch.as_tensor(positive, dtype=torch.bool)
    if not bool(positive.any()):
        return q.sum() * 0.0
    q = F.normalize(q, dim=-1)
    keys = F.normalize(keys, dim=-1)
    sims = keys @ q / tau
    pos = sims[positive]
    neg_sum = torch.exp(sims[~positive]).sum()
    # -log(e^p / (e^p + S + eps)) == log1p((S + eps) e^-p); no cancellation near 0
    return torch.log1p((neg_sum + eps) * torch.exp(-pos)).mean()


def batch_mcc_loss(q, keys, positive, tau=0.5, eps=1e-8, pool_negatives=False):
    """Mean of per-image InfoNCE over a batch.

    ``q``: ``(B, P)``; ``keys``: ``(B, K, P)``; ``positive``: ``(B, K)``.
    With ``pool_negatives`` every negative view in the batch is contrasted
    against every image's global embedding.
    """
    positive = torch.as_tensor(positive, dtype=torch.bool)
    losses = []
    if pool_negatives:
        all_neg = keys[~positive]
    for i in range(q.shape[0]):
        if pool_negatives:
            k = torch.cat([keys[i][positive[i]], all_neg])
            p = torch.zeros(k.shape[0], dtype=torch.bool)
            p[: int(positive[i].sum())] = True
            losses.append(mcc_loss(q[i], k, p, tau, eps))
        else:
            losses.append(mcc_loss(q[i], keys[i], positive[i], tau, eps))
    return torch.stack(losses).mean()


@torch.no_grad()
def ema_update(global_proj, local_proj, m):
    """In place: ``theta_g <- m * theta_g + (1 - m) * theta_l``."""
    if not 0.0 <= m <= 1.0:
        raise DomainError(f"momentum must lie in [0, 1], got {m}")
    for pg, pl in zip(global_proj.parameters(), local_proj.parameters()):
        if pg.shape != pl.shape:
            raise DomainError("projector shapes differ")
        pg.copy_(m * pg + (1.0 - m) * pl)
    return global_proj


def affinity_loss(tokens, pairs, eps=1e-12, return_stats=False):
    """Cosine affinity loss over labelled token pairs.

    ``tokens``: ``(D, N)`` (or ``(B, D, N)``); ``pairs``: ``(N, N)`` (or
    ``(B, N, N)``) with 1 = positive, 0 = negative, 255 = ignore. Pairs that
    touch a zero-norm token are skipped. A term with no pairs is omitted.
    """
    pairs = torch.as_tensor(pairs)
    norms = tokens.norm(dim=-2)
    valid = norms > eps
    unit = tokens / torch.where(valid, norms, torch.ones_like(norms)).unsqueeze(-2)
    cos = unit.transpose(-1, -2) @ unit
    ok = valid[..., :, None] & valid[..., None, :]
    pos = (pairs == AFF_POS) & ok
    neg = (pairs == AFF_NEG) & ok
    skipped = int((((pairs == AFF_POS) | (pairs == AFF_NEG)) & ~ok).sum())
    loss = tokens.sum() * 0.0
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos:
        loss = loss + (1.0 - cos[pos]).sum() / n_pos
    if n_neg:
        loss = loss + cos[neg].sum() / n_neg
    if return_stats:
        return loss, {"n_pos": n_pos, "n_neg": n_neg, "skipped": skipped}
    return loss


def seg_loss(pred, target, return_stats=False):
    """Pixel-wise cross-entropy over C+1 channels, ignoring label 255.

    ``pred``: ``(C+1, H, W)`` or ``(B, C+1, H, W)`` logits.
    """
    target = torch.as_tensor(target, dtype=torch.long)
    if pred.ndim == 3:
        pred, target = pred[None], target[None]
    empty = not bool((target != IGNORE).any())
    if empty:
        loss = pred.sum() * 0.0
    else:
        loss = F.cross_entropy(pred, target, ignore_index=IGNORE)
    if return_stats:
        return loss, {"all_ignored": empty}
    return loss


def reg_loss(probs):
    """Anisotropic total variation of per-pixel class probabilities.

    Mean absolute difference between vertical neighbours plus the same for
    horizontal neighbours, over ``(..., C+1, H, W)``.
    """
    total = probs.sum() * 0.0
    if probs.shape[-2] > 1:
        total = total + (probs[..., 1:, :] - probs[..., :-1, :]).abs().mean()
    if probs.shape[-1] > 1:
        total = total + (probs[..., :, 1:] - probs[..., :, :-1]).abs().mean()
    return total


def total_loss(parts, weights=None):
    """``cls + cls_aux + w_aff*aff + w_mcc*mcc + w_seg*seg + w_reg*reg``.

    Raises :class:`NumericError` naming the first non-finite part.
    """
    if weights is None:
        weights = LossWeights()
    for key in LOSS_KEYS:
        value = parts[key]
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NumericError(f"loss term '{key}' is not finite", offender=key)
    return (
        parts["cls"]
        + parts["cls_aux"]
        + weights.aff * parts["aff"]
        + weights.mcc * parts["mcc"]
        + weights.seg * parts["seg"]
        + weights.reg * parts["reg"]
    )
