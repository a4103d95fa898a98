"""Training configuration and its flat ``key = value`` file format."""
import dataclasses
import hashlib
from dataclasses import dataclass, fields

from .encoder import EncoderConfig
from .exceptions import ConfigError
from .losses import LossWeights

__all__ = ["TrainConfig", "load_config", "parse_config", "dump_config", "CONFIG_DOCS"]


@dataclass
class TrainConfig:
    # encoder
    crop_size: int = 64
    patch_size: int = 8
    depth: int = 4
    heads: int = 2
    dim: int = 64
    aux_layer: int = 3
    num_classes: int = 3
    proj_dim: int = 128
    # masked views
    mask_ratio: float = 0.95
    mask_scale: int = 4
    mu: float = 0.5
    num_views: int = 4
    # pseudo labels
    beta_bg: float = 0.25
    beta_fg: float = 0.7
    seg_label_source: str = "final"
    # contrast
    tau: float = 0.5
    eps: float = 1e-8
    momentum: float = 0.9
    pool_negatives: bool = False
    # objective weights
    lambda_aff: float = 0.2
    lambda_mcc: float = 0.5
    lambda_seg: float = 0.1
    lambda_reg: float = 0.05
    # optimisation
    batch_size: int = 8
    total_iters: int = 3000
    warmup_iters: int = 150
    lr_init: float = 1e-6
    lr_peak: float = 6e-5
    poly_power: float = 0.9
    weight_decay: float = 0.01
    seed: int = 0
    # synthetic corpus
    n_train: int = 500
    n_val: int = 100
    data_seed: int = 1234

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must lie in [0, 1), got {self.mask_ratio}")
        grid = self.crop_size // self.patch_size if self.patch_size > 0 else 0
        if self.patch_size <= 0 or self.crop_size % self.patch_size:
            raise ConfigError("crop_size must be a positive multiple of patch_size")
        if not 1 <= self.mask_scale <= grid:
            raise ConfigError(f"mask_scale must lie in [1, {grid}]")
        if not 0.0 < self.beta_bg < self.beta_fg < 1.0:
            raise ConfigError("need 0 < beta_bg < beta_fg < 1")
        if not 0.0 < self.mu < 1.0:
            raise ConfigError("mu must lie in (0, 1)")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError("momentum must lie in [0, 1]")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.num_views < 1 or self.batch_size < 1:
            raise ConfigError("num_views and batch_size must be >= 1")
        if not 0 <= self.warmup_iters <= self.total_iters or self.total_iters < 1:
            raise ConfigError("need 0 <= warmup_iters <= total_iters and total_iters >= 1")
        if self.seg_label_source not in ("final", "aux"):
            raise ConfigError("seg_label_source must be 'final' or 'aux'")
        if not 1 <= self.num_classes <= 6:
            raise ConfigError("the synthetic corpus supports 1..6 classes")
        for name in ("lambda_aff", "lambda_mcc", "lambda_seg", "lambda_reg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    def encoder_config(self):
        return EncoderConfig(
            image_size=self.crop_size,
            patch_size=self.patch_size,
            depth=self.depth,
            heads=self.heads,
            dim=self.dim,
            num_classes=self.num_classes,
            aux_layer=self.aux_layer,
        )

    def loss_weights(self):
        return LossWeights(aff=self.lambda_aff, mcc=self.lambda_mcc, seg=self.lambda_seg, reg=self.lambda_reg)

    @property
    def grid(self):
        return self.crop_size // self.patch_size

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def digest(self):
        return hashlib.sha256(dump_config(self).encode()).digest()


CONFIG_DOCS = {
    "crop_size": "training image side in pixels (square)",
    "patch_size": "patch side in pixels",
    "depth": "number of transformer blocks",
    "heads": "attention heads per block",
    "dim": "token dimension",
    "aux_layer": "1-based block index feeding the auxiliary classifier",
    "num_classes": "foreground classes (background excluded)",
    "proj_dim": "output dimension of the contrast projectors",
    "mask_ratio": "probability of dropping each key block",
    "mask_scale": "key block side in grid cells",
    "mu": "positiveness threshold on the kept-foreground share",
    "num_views": "masked local views per image",
    "beta_bg": "CAM value at or below which a pixel is background",
    "beta_fg": "CAM value at or above which a pixel is foreground",
    "seg_label_source": "CAM feeding segmentation pseudo labels: final | aux",
    "tau": "contrast temperature",
    "eps": "stability constant in the contrast denominator",
    "momentum": "EMA momentum of the global projector",
    "pool_negatives": "contrast against negatives from the whole batch",
    "lambda_aff": "affinity loss weight",
    "lambda_mcc": "masked contrast loss weight (0 = baseline)",
    "lambda_seg": "segmentation loss weight",
    "lambda_reg": "regularisation loss weight",
    "batch_size": "images per step",
    "total_iters": "optimizer steps",
    "warmup_iters": "linear warm-up steps",
    "lr_init": "learning rate at step 0",
    "lr_peak": "learning rate at the end of warm-up",
    "poly_power": "exponent of the polynomial decay",
    "weight_decay": "decoupled weight decay",
    "seed": "model init, mask and batch-order seed",
    "n_train": "synthetic training images",
    "n_val": "synthetic validation images",
    "data_seed": "synthetic corpus seed",
}


def _coerce(name, typ, raw):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def parse_config(text, base=None):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    base = base if base is not None else TrainConfig()
    known = {f.name: _TYPES.get(f.type, f.type) if isinstance(f.type, str) else f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, known[key], raw)
    return dataclasses.replace(base, **values)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base)


def dump_config(cfg):
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, float):
            value = repr(value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
