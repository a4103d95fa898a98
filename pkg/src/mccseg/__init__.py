"""Masked collaborative contrast for weakly supervised semantic segmentation."""
from .config import TrainConfig
from .encoder import EncoderConfig, MaskableViT
from .estimator import MCCSegmenter
from .exceptions import ConfigError, DimensionError, DomainError, MCCError, NumericError
from .masking import KeyMask, expand, mask_stats, sample_key_mask

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "EncoderConfig",
    "MaskableViT",
    "MCCSegmenter",
    "KeyMask",
    "sample_key_mask",
    "expand",
    "mask_stats",
    "MCCError",
    "ConfigError",
    "DimensionError",
    "DomainError",
    "NumericError",
]
