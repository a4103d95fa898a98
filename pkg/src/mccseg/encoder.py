"""A small vision transformer whose attention can be restricted by key masks."""
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .exceptions import ConfigError, DimensionError
from .numerics import masked_softmax

__all__ = ["EncoderConfig", "patchify", "gmp", "sincos_pos_embed", "MaskedAttention", "Block", "MaskableViT"]


@dataclass
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    depth: int = 4
    heads: int = 2
    dim: int = 64
    num_classes: int = 3
    aux_layer: int = 3
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 1 <= self.aux_layer <= self.depth - 1:
            raise ConfigError(f"aux_layer must lie in [1, {self.depth - 1}], got {self.aux_layer}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def num_patches(self):
        return self.grid ** 2

    @property
    def head_dim(self):
        return self.dim // self.heads


def patchify(image, patch_size):
    """Split ``(..., H, W, 3)`` images into row-major flattened patches.

    Returns ``(..., N, 3*P*P)``; row ``i`` is the patch at grid position
    ``(i // W', i % W')`` flattened in (row, col, channel) order.
    """
    h, w, c = image.shape[-3:]
    if h % patch_size or w % patch_size:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    lead = image.shape[:-3]
    x = image.reshape(*lead, gh, patch_size, gw, patch_size, c)
    n = len(lead)
    perm = tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4)
    if isinstance(x, torch.Tensor):
        x = x.permute(*perm)
    else:
        x = np.transpose(x, perm)
    return x.reshape(*lead, gh * gw, patch_size * patch_size * c)


def gmp(patches):
    """Global max pooling over the token axis (second to last)."""
    if patches.shape[-2] < 1:
        raise DimensionError("gmp needs at least one token")
    if isinstance(patches, torch.Tensor):
        return patches.amax(dim=-2)
    return np.max(patches, axis=-2)


def sincos_pos_embed(dim, grid):
    """2-d sine/cosine position table of shape ``(grid*grid, dim)``."""
    if dim % 4:
        raise ConfigError("sincos embedding needs dim divisible by 4")
    quarter = dim // 4
    omega = 1.0 / 10000 ** (np.arange(quarter, dtype=np.float64) / quarter)
    ys, xs = np.meshgrid(np.arange(grid, dtype=np.float64), np.arange(grid, dtype=np.float64), indexing="ij")
    out_y = ys.reshape(-1, 1) * omega
    out_x = xs.reshape(-1, 1) * omega
    return np.concatenate([np.sin(out_y), np.cos(out_y), np.sin(out_x), np.cos(out_x)], axis=1)


class MaskedAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, keep=None):
        # x: (B, T, D); keep: (B, T) bool or None
        b, t, d = x.shape
        qkv = self.qkv(x).reshape(b, t, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        key_keep = None if keep is None else keep[:, None, None, :]
        attn = masked_softmax(logits, key_keep)
        z = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.proj(z), attn


class Block(nn.Module):
    def __init__(self, dim, heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MaskedAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x, keep=None):
        a, attn = self.attn(self.norm1(x), keep)
        x = x + a
        x = x + self.mlp(self.norm2(x))
        return x, attn


class MaskableViT(nn.Module):
    """Patch embedding, class token, ``depth`` maskable blocks and two heads.

    ``forward`` takes channels-last images ``(B, H, W, 3)`` and an optional
    key mask ``(B, N)`` over patch tokens (True = kept). The same mask is
    applied in every block; the class token is always kept.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        c = config
        self.patch_embed = nn.Linear(3 * c.patch_size ** 2, c.dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, c.dim))
        self.pos_embed = nn.Parameter(torch.as_tensor(sincos_pos_embed(c.dim, c.grid), dtype=torch.float32)[None])
        self.blocks = nn.ModuleList([Block(c.dim, c.heads, c.mlp_ratio) for _ in range(c.depth)])
        self.norm = nn.LayerNorm(c.dim)
        # 1x1 convolutions over the token grid == token-wise linear maps, no bias
        self.classifier = nn.Parameter(torch.empty(c.dim, c.num_classes))
        self.aux_classifier = nn.Parameter(torch.empty(c.dim, c.num_classes))
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.normal_(self.classifier, std=0.02)
        nn.init.normal_(self.aux_classifier, std=0.02)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)

    def forward(self, images, key_mask=None, return_attention=False):
        c = self.config
        if images.shape[-3:] != (c.image_size, c.image_size, 3):
            raise DimensionError(f"expected images (B, {c.image_size}, {c.image_size}, 3), got {tuple(images.shape)}")
        b = images.shape[0]
        x = self.patch_embed(patchify(images, c.patch_size)) + self.pos_embed
        x = torch.cat([self.cls_token.expand(b, -1, -1), x], dim=1)
        keep = None
        if key_mask is not None:
            key_mask = torch.as_tensor(key_mask, dtype=torch.bool)
            if key_mask.shape != (b, c.num_patches):
                raise DimensionError(f"key mask must be ({b}, {c.num_patches}), got {tuple(key_mask.shape)}")
            keep = torch.cat([torch.ones(b, 1, dtype=torch.bool), key_mask], dim=1)
        per_layer, attentions = [], []
        for i, block in enumerate(self.blocks):
            x, attn = block(x, keep)
            if i == c.depth - 1:
                x = self.norm(x)
            per_layer.append(x)
            if return_attention:
                attentions.append(attn)
        final = per_layer[-1][:, 1:]
        aux = per_layer[c.aux_layer - 1][:, 1:]
        out = {
            "per_layer": per_layer,
            "cls_token": per_layer[-1][:, 0],
            "patches": final,
            "aux_patches": aux,
            "cls_logits": gmp(final) @ self.classifier,
            "aux_logits": gmp(aux) @ self.aux_classifier,
        }
        if return_attention:
            out["attention"] = attentions
        return out
