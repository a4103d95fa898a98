"""scikit-learn style front end for weakly supervised segmentation."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .config import TrainConfig
from .exceptions import ConfigError, DimensionError
from .training import evaluate, init_state, load_state, predict_maps, save_state, train

__all__ = ["MCCSegmenter", "check_images", "check_image_labels"]


def check_images(X):
    """Validate a ``(n, H, W, 3)`` batch of square images with values in [0, 1]."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float32)
    if X.ndim != 4 or X.shape[-1] != 3 or X.shape[1] != X.shape[2]:
        raise DimensionError(f"expected images of shape (n, S, S, 3), got {X.shape}")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return X


def check_image_labels(y, n_samples=None):
    """Validate a binary ``(n, C)`` image-level label indicator."""
    y = check_array(y, ensure_2d=True, dtype=np.uint8)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("image labels must be 0/1 indicators")
    if n_samples is not None and y.shape[0] != n_samples:
        raise DimensionError(f"{y.shape[0]} label rows for {n_samples} images")
    return y


class MCCSegmenter(BaseEstimator):
    """Segmentation network trained from image-level labels.

    ``fit(X, y)`` takes images ``(n, S, S, 3)`` in [0, 1] and a multi-label
    indicator ``(n, C)``; it never sees pixel annotations. ``predict``
    returns decoder label maps (0 = background, c + 1 = class c),
    ``predict_pseudo`` the thresholded CAM labels (with 255 = uncertain) and
    ``transform`` the normalised CAMs on the token grid.

    Setting ``lambda_mcc=0`` gives the baseline without masked contrast.
    """

    def __init__(
        self,
        patch_size=8,
        depth=4,
        heads=2,
        dim=64,
        aux_layer=3,
        proj_dim=128,
        mask_ratio=0.95,
        mask_scale=4,
        mu=0.5,
        num_views=4,
        beta_bg=0.25,
        beta_fg=0.7,
        seg_label_source="final",
        tau=0.5,
        eps=1e-8,
        momentum=0.9,
        pool_negatives=False,
        lambda_aff=0.2,
        lambda_mcc=0.5,
        lambda_seg=0.1,
        lambda_reg=0.05,
        batch_size=8,
        total_iters=3000,
        warmup_iters=150,
        lr_init=1e-6,
        lr_peak=6e-5,
        poly_power=0.9,
        weight_decay=0.01,
        seed=0,
    ):
        self.patch_size = patch_size
        self.depth = depth
        self.heads = heads
        self.dim = dim
        self.aux_layer = aux_layer
        self.proj_dim = proj_dim
        self.mask_ratio = mask_ratio
        self.mask_scale = mask_scale
        self.mu = mu
        self.num_views = num_views
        self.beta_bg = beta_bg
        self.beta_fg = beta_fg
        self.seg_label_source = seg_label_source
        self.tau = tau
        self.eps = eps
        self.momentum = momentum
        self.pool_negatives = pool_negatives
        self.lambda_aff = lambda_aff
        self.lambda_mcc = lambda_mcc
        self.lambda_seg = lambda_seg
        self.lambda_reg = lambda_reg
        self.batch_size = batch_size
        self.total_iters = total_iters
        self.warmup_iters = warmup_iters
        self.lr_init = lr_init
        self.lr_peak = lr_peak
        self.poly_power = poly_power
        self.weight_decay = weight_decay
        self.seed = seed

    @classmethod
    def from_config(cls, cfg):
        names = cls._get_param_names()
        return cls(**{k: getattr(cfg, k) for k in names})

    def make_config(self, image_size, num_classes, **extra):
        params = self.get_params()
        try:
            return TrainConfig(crop_size=image_size, num_classes=num_classes, **params, **extra)
        except TypeError as err:
            raise ConfigError(str(err)) from None

    def fit(self, X, y, log_file=None):
        X = check_images(X)
        y = check_image_labels(y, len(X))
        cfg = self.make_config(X.shape[1], y.shape[1])
        state = init_state(cfg)
        train(state, X, y, log_file=log_file)
        self._set_fitted(state)
        return self

    def _set_fitted(self, state):
        self.state_ = state
        self.config_ = state.config
        self.model_ = state.model
        self.history_ = state.history
        self.n_classes_ = state.config.num_classes
        self.classes_ = np.arange(self.n_classes_)
        return self

    def _check_input(self, X):
        check_is_fitted(self)
        X = check_images(X)
        if X.shape[1] != self.config_.crop_size:
            raise DimensionError(f"model expects {self.config_.crop_size}px images, got {X.shape[1]}px")
        return X

    def predict(self, X):
        X = self._check_input(X)
        return predict_maps(self.model_, self.config_, X)[1]

    def predict_pseudo(self, X, y=None):
        """Thresholded CAM labels; ``y`` (image labels) selects the classes."""
        X = self._check_input(X)
        if y is not None:
            y = check_image_labels(y, len(X))
        return predict_maps(self.model_, self.config_, X, y)[0]

    def transform(self, X, y=None):
        """Normalised final-layer CAMs, ``(n, C, S/P, S/P)``."""
        X = self._check_input(X)
        if y is None:
            y = np.ones((len(X), self.n_classes_), dtype=np.uint8)
        else:
            y = check_image_labels(y, len(X))
        return predict_maps(self.model_, self.config_, X, y)[2]

    def evaluate(self, X, y, masks):
        """``{"pseudo": MiouReport, "seg": MiouReport}`` against pixel masks."""
        X = self._check_input(X)
        y = check_image_labels(y, len(X))
        return evaluate(self.model_, self.config_, X, y, np.asarray(masks))

    def score(self, X, masks):
        """Decoder mIoU against ground-truth masks."""
        from .metrics import miou

        return miou(self.predict(X), np.asarray(masks), self.n_classes_ + 1).mean

    def save(self, path):
        check_is_fitted(self)
        save_state(self.state_, path)

    @classmethod
    def load(cls, path):
        state = load_state(path)
        est = cls.from_config(state.config)
        return est._set_fitted(state)

    def __sklearn_is_fitted__(self):
        return hasattr(self, "state_")

