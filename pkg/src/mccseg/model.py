"""Encoder, segmentation decoder and contrast projectors bundled together."""
import copy

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import MaskableViT
from .losses import Projector

__all__ = ["SegDecoder", "MCCNet", "upsample"]


def upsample(x, size):
    """Bilinear resize of ``(B, C, h, w)`` to ``size x size`` (half-pixel centres)."""
    return F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)


class SegDecoder(nn.Module):
    """1x1 conv, ReLU, 1x1 conv over the final token grid, then upsample."""

    def __init__(self, dim, num_classes, out_size, hidden=None):
        super().__init__()
        hidden = hidden or dim
        self.out_size = out_size
        self.conv1 = nn.Conv2d(dim, hidden, kernel_size=1)
        self.conv2 = nn.Conv2d(hidden, num_classes + 1, kernel_size=1)

    def forward(self, patches):
        b, n, d = patches.shape
        side = int(round(n ** 0.5))
        x = patches.transpose(1, 2).reshape(b, d, side, side)
        x = self.conv2(F.relu(self.conv1(x)))
        return upsample(x, self.out_size)


class MCCNet(nn.Module):
    """Everything trainable plus the EMA-updated global projector."""

    def __init__(self, encoder_config, proj_dim=128):
        super().__init__()
        self.config = encoder_config
        self.encoder = MaskableViT(encoder_config)
        self.decoder = SegDecoder(encoder_config.dim, encoder_config.num_classes, encoder_config.image_size)
        self.local_proj = Projector(encoder_config.dim, proj_dim)
        self.global_proj = copy.deepcopy(self.local_proj)
        self.global_proj.requires_grad_(False)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def forward(self, images, key_mask=None, return_attention=False):
        out = self.encoder(images, key_mask, return_attention=return_attention)
        out["seg_logits"] = self.decoder(out["patches"])
        return out
