"""Learning-rate schedule, the joint training step, evaluation and state I/O."""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint
from .config import TrainConfig, dump_config, parse_config
from .exceptions import NumericError
from .losses import (
    affinity_loss,
    batch_mcc_loss,
    cls_loss,
    ema_update,
    reg_loss,
    seg_loss,
    total_loss,
)
from .masking import sample_key_masks
from .metrics import miou
from .model import MCCNet
from .numerics import default_dtype
from .pseudo import (
    affinity_pairs,
    compute_cam,
    identity_refiner,
    partition,
    positiveness,
    token_label,
    upsample_cam,
)

__all__ = [
    "lr_at",
    "TrainState",
    "init_state",
    "train_step",
    "train",
    "to_input",
    "predict_maps",
    "evaluate",
    "save_state",
    "load_state",
]

log = logging.getLogger(__name__)

PIXEL_MEAN, PIXEL_STD = 0.5, 0.25


def lr_at(step, cfg):
    """Linear warm-up from ``lr_init`` to ``lr_peak``, then polynomial decay to 0."""
    if step < cfg.warmup_iters:
        return cfg.lr_init + (cfg.lr_peak - cfg.lr_init) * step / cfg.warmup_iters
    span = cfg.total_iters - cfg.warmup_iters
    if span <= 0:
        return 0.0 if step >= cfg.total_iters else cfg.lr_peak
    frac = min(max((step - cfg.warmup_iters) / span, 0.0), 1.0)
    return cfg.lr_peak * (1.0 - frac) ** cfg.poly_power


@dataclass
class TrainState:
    config: TrainConfig
    model: MCCNet
    optimizer: torch.optim.Optimizer
    data_rng: np.random.Generator
    mask_rng: np.random.Generator
    dtype: torch.dtype
    step: int = 0
    history: list = field(default_factory=list)


def init_state(cfg, dtype=None):
    dtype = dtype or default_dtype()
    torch.manual_seed(cfg.seed)
    model = MCCNet(cfg.encoder_config(), cfg.proj_dim).to(dtype)
    optimizer = torch.optim.AdamW(
        model.trainable_parameters(), lr=cfg.lr_init, betas=(0.9, 0.999), weight_decay=cfg.weight_decay
    )
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    return TrainState(
        config=cfg,
        model=model,
        optimizer=optimizer,
        data_rng=np.random.default_rng(seeds[0]),
        mask_rng=np.random.default_rng(seeds[1]),
        dtype=dtype,
    )


def to_input(images, dtype):
    x = torch.as_tensor(np.asarray(images), dtype=dtype)
    return (x - PIXEL_MEAN) / PIXEL_STD


def compute_parts(model, x, labels, keep, cfg, refiner=identity_refiner):
    """All six loss terms for one batch plus view counts.

    ``keep`` is ``(B, K, N)`` or ``None`` to skip the masked views.
    """
    enc = model.encoder
    b = x.shape[0]
    n_tok = cfg.grid ** 2
    labels_t = torch.as_tensor(np.asarray(labels), dtype=torch.bool)
    if keep is not None:
        k = keep.shape[1]
        x_all = torch.cat([x, x.repeat_interleave(k, dim=0)])
        mask_all = torch.cat([torch.ones(b, n_tok, dtype=torch.bool), torch.as_tensor(keep).reshape(b * k, n_tok)])
        out = enc(x_all, mask_all)
    else:
        out = enc(x)
    patches = out["patches"][:b]
    aux_patches = out["aux_patches"][:b]

    parts = {
        "cls": cls_loss(out["cls_logits"][:b], labels_t),
        "cls_aux": cls_loss(out["aux_logits"][:b], labels_t),
    }

    final_cam = compute_cam(patches.detach(), enc.classifier.detach(), labels_t)
    aux_cam = compute_cam(aux_patches.detach(), enc.aux_classifier.detach(), labels_t)

    aux_label = partition(aux_cam, cfg.beta_bg, cfg.beta_fg)
    parts["aff"] = affinity_loss(patches.transpose(1, 2), affinity_pairs(aux_label))

    n_pos = n_neg = 0
    if keep is not None:
        fg = token_label(aux_cam, cfg.beta_fg)
        verdict = positiveness(fg[:, None], keep, cfg.mu)
        q = model.global_proj(out["cls_token"][:b])
        keys = model.local_proj(out["cls_token"][b:]).reshape(b, k, -1)
        parts["mcc"] = batch_mcc_loss(q, keys, verdict, cfg.tau, cfg.eps, cfg.pool_negatives)
        n_pos = int(verdict.sum())
        n_neg = int(verdict.numel()) - n_pos
    else:
        parts["mcc"] = patches.sum() * 0.0

    seg_cam = final_cam if cfg.seg_label_source == "final" else aux_cam
    target = refiner(partition(upsample_cam(seg_cam, cfg.crop_size), cfg.beta_bg, cfg.beta_fg))
    seg_logits = model.decoder(patches)
    parts["seg"] = seg_loss(seg_logits, target)
    parts["reg"] = reg_loss(F.softmax(seg_logits, dim=1))
    return parts, n_pos, n_neg


def train_step(state, images, labels, refiner=identity_refiner):
    """One optimizer step on a batch; returns the loss breakdown record."""
    cfg = state.config
    model = state.model
    model.train()
    b = len(images)
    keep = None
    if cfg.lambda_mcc > 0:
        keep_flat, _ = sample_key_masks(b * cfg.num_views, cfg.grid, cfg.grid, cfg.mask_ratio, cfg.mask_scale, state.mask_rng)
        keep = torch.as_tensor(keep_flat).reshape(b, cfg.num_views, -1)
    x = to_input(images, state.dtype)
    parts, n_pos, n_neg = compute_parts(model, x, labels, keep, cfg, refiner)
    total = total_loss(parts, cfg.loss_weights())

    lr = lr_at(state.step, cfg)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    state.optimizer.step()
    ema_update(model.global_proj, model.local_proj, cfg.momentum)

    record = {"step": state.step}
    record.update({k: float(v.detach()) for k, v in parts.items()})
    record.update(total=float(total.detach()), lr=lr, n_pos_views=n_pos, n_neg_views=n_neg)
    state.step += 1
    state.history.append(record)
    return record


def train(state, images, labels, log_file=None, dump_path=None, refiner=identity_refiner, progress_every=0):
    """Run ``train_step`` until ``config.total_iters``.

    Batches are drawn without replacement from ``images``/``labels`` using the
    state's data stream. On a non-finite loss the state is written to
    ``dump_path`` (when given) before the error propagates.
    """
    cfg = state.config
    n = len(images)
    bsz = min(cfg.batch_size, n)
    while state.step < cfg.total_iters:
        idx = np.sort(state.data_rng.choice(n, size=bsz, replace=False))
        try:
            record = train_step(state, images[idx], labels[idx], refiner)
        except NumericError:
            if dump_path is not None:
                save_state(state, dump_path)
            raise
        if log_file is not None:
            log_file.write(json.dumps(record) + "\n")
        if progress_every and record["step"] % progress_every == 0:
            log.info("step %d total %.4f cls %.4f mcc %.4f", record["step"], record["total"], record["cls"], record["mcc"])
    return state


@torch.no_grad()
def predict_maps(model, cfg, images, labels=None, batch_size=50, dtype=None):
    """Pseudo labels (from the final CAM) and decoder predictions at full size.

    When ``labels`` is ``None`` classes are taken from the classifier output
    (sigmoid > 0.5, at least the top class).
    """
    dtype = dtype or next(model.parameters()).dtype
    model.eval()
    pseudo, seg, cams = [], [], []
    for start in range(0, len(images), batch_size):
        x = to_input(images[start:start + batch_size], dtype)
        out = model.encoder(x)
        if labels is None:
            logits = out["cls_logits"]
            present = logits > 0
            present[torch.arange(len(x)), logits.argmax(dim=1)] = True
        else:
            present = torch.as_tensor(np.asarray(labels[start:start + batch_size]), dtype=torch.bool)
        cam = compute_cam(out["patches"], model.encoder.classifier, present)
        cams.append(cam.float().numpy())
        pseudo.append(partition(upsample_cam(cam, cfg.crop_size), cfg.beta_bg, cfg.beta_fg).numpy())
        seg.append(model.decoder(out["patches"]).argmax(dim=1).numpy())
    return np.concatenate(pseudo), np.concatenate(seg), np.concatenate(cams)


def evaluate(model, cfg, images, labels, masks):
    """mIoU reports for pseudo labels and decoder predictions."""
    pseudo, seg, _ = predict_maps(model, cfg, images, labels)
    n = cfg.num_classes + 1
    return {"pseudo": miou(pseudo, masks, n), "seg": miou(seg, masks, n)}


def _rng_bytes(rng):
    return np.frombuffer(json.dumps(rng.bit_generator.state).encode(), dtype=np.uint8)


def _rng_from(arr):
    state = json.loads(bytes(arr).decode())
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def save_state(state, path):
    arrays = {}
    for name, t in state.model.state_dict().items():
        arrays[f"model/{name}"] = t.detach().cpu().numpy()
    opt = state.optimizer.state_dict()
    for pid, slot in opt["state"].items():
        for key, value in slot.items():
            arrays[f"optim/{pid}/{key}"] = torch.as_tensor(value).detach().cpu().numpy()
    arrays["meta/config"] = np.frombuffer(dump_config(state.config).encode(), dtype=np.uint8)
    arrays["meta/step"] = np.array([state.step], dtype=np.int64)
    arrays["meta/data_rng"] = _rng_bytes(state.data_rng)
    arrays["meta/mask_rng"] = _rng_bytes(state.mask_rng)
    arrays["meta/float64"] = np.array([state.dtype == torch.float64], dtype=bool)
    checkpoint.save_arrays(path, arrays, state.config.digest())


def load_state(path):
    arrays, digest = checkpoint.load_arrays(path)
    cfg = parse_config(bytes(arrays["meta/config"]).decode())
    if cfg.digest() != digest:
        raise checkpoint.CheckpointError(f"{path}: config digest mismatch")
    dtype = torch.float64 if bool(arrays["meta/float64"][0]) else torch.float32
    state = init_state(cfg, dtype)
    model_sd = {k[len("model/"):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("model/")}
    state.model.load_state_dict(model_sd)
    opt_sd = state.optimizer.state_dict()
    slots = {}
    for key, value in arrays.items():
        if key.startswith("optim/"):
            _, pid, name = key.split("/", 2)
            slots.setdefault(int(pid), {})[name] = torch.from_numpy(value)
    opt_sd["state"] = slots
    state.optimizer.load_state_dict(opt_sd)
    state.step = int(arrays["meta/step"][0])
    state.data_rng = _rng_from(arrays["meta/data_rng"])
    state.mask_rng = _rng_from(arrays["meta/mask_rng"])
    return state
