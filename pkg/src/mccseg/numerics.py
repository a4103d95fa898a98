"""Dense tensor helpers on top of torch.

torch supplies storage and reverse-mode differentiation; this module adds the
few operations with package-specific semantics (masked softmax with exact
zero weight on dropped keys) and a central finite-difference gradient checker
that is independent of autograd.
"""
import os

import numpy as np
import torch

from .exceptions import DimensionError, DomainError, NumericError

__all__ = [
    "default_dtype",
    "deterministic_mode",
    "as_tensor",
    "matmul",
    "masked_softmax",
    "check_finite",
    "numerical_grad",
    "grad_check",
]


def deterministic_mode():
    return os.environ.get("MCC_DETERMINISTIC", "0") == "1"


def default_dtype():
    return torch.float64 if deterministic_mode() else torch.float32


def as_tensor(x, dtype=None):
    if dtype is None:
        dtype = torch.float64
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def matmul(a, b):
    """Matrix product of ``a`` (m x k) and ``b`` (k x n)."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def masked_softmax(logits, keep=None, dim=-1):
    """Softmax over ``dim`` restricted to entries where ``keep`` is true.

    Dropped entries are excluded from the normalising sum and receive weight
    exactly 0. ``keep`` broadcasts against ``logits``; ``None`` keeps all.
    """
    if keep is None:
        keep = torch.ones_like(logits, dtype=torch.bool)
    else:
        keep = torch.as_tensor(keep, device=logits.device).to(torch.bool)
        keep = keep.expand_as(logits)
    if not bool(keep.any(dim=dim).all()):
        raise DomainError("masked_softmax: a row has no kept entries")
    neg_inf = torch.tensor(float("-inf"), dtype=logits.dtype)
    row_max = torch.where(keep, logits, neg_inf).amax(dim=dim, keepdim=True).detach()
    shifted = torch.where(keep, logits - row_max, torch.zeros_like(logits))
    weights = torch.exp(shifted) * keep.to(logits.dtype)
    return weights / weights.sum(dim=dim, keepdim=True)


def check_finite(value, name="tensor"):
    t = value if isinstance(value, torch.Tensor) else torch.as_tensor(value)
    if not bool(torch.isfinite(t).all()):
        raise NumericError(f"{name} is not finite", offender=name)
    return value


def numerical_grad(loss_fn, params, step=1e-4):
    """Central differences of ``loss_fn()`` w.r.t. each tensor in ``params``.

    Parameters are perturbed in place and restored afterwards.
    """
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = float(loss_fn())
                flat[i] = orig - step
                down = float(loss_fn())
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericError("loss is not finite during finite differencing")
                gflat[i] = (up - down) / (2 * step)
            grads.append(g)
    return grads


def grad_check(loss_fn, params, step=1e-4):
    """Max relative error between autograd and finite-difference gradients.

    The error for one parameter tensor is ``|g_a - g_fd| / max(|g_a|, |g_fd|)``
    in the Euclidean norm, and 0 when both gradients vanish.
    """
    params = list(params)
    for p in params:
        if not bool(torch.isfinite(p).all()):
            raise NumericError("parameters must be finite")
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not bool(torch.isfinite(loss)):
        raise NumericError("loss is not finite")
    if loss.requires_grad:
        analytic = torch.autograd.grad(loss, params, allow_unused=True)
    else:
        analytic = [None] * len(params)
    analytic = [torch.zeros_like(p) if g is None else g.detach() for p, g in zip(params, analytic)]
    numeric = numerical_grad(lambda: loss_fn().detach(), params, step=step)
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        scale = max(float(ga.norm()), float(gn.norm()))
        if scale == 0.0:
            continue
        worst = max(worst, float((ga - gn).norm()) / scale)
    return worst
