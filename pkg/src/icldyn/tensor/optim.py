"""Adam with a cosine-annealed learning rate that ends at one tenth of its start."""

from __future__ import annotations

import math
from typing import Iterable, Mapping

import torch

from ..errors import ShapeMismatch

BETAS = (0.9, 0.999)
EPS = 1e-8
FINAL_LR_FRACTION = 0.1


def lr_at(step: int, total_steps: int, lr0: float) -> float:
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    lr_f = lr0 * FINAL_LR_FRACTION
    if step == 0:
        return lr0
    if step == total_steps:
        return lr_f
    return lr_f + (lr0 - lr_f) * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def make_adam(params: Iterable[torch.Tensor], lr0: float) -> torch.optim.Adam:
    return torch.optim.Adam(list(params), lr=lr0, betas=BETAS, eps=EPS)


def adam_step(opt: torch.optim.Adam, grads: Mapping[torch.Tensor, torch.Tensor] | None = None, lr: float | None = None):
    """One bias-corrected Adam update.

    ``grads`` maps parameter tensors to gradients; when omitted the ``.grad`` fields already
    populated by ``loss.backward()`` are used.
    """
    if lr is not None:
        for group in opt.param_groups:
            group["lr"] = lr
    if grads is not None:
        for p, g in grads.items():
            if g.shape != p.shape:
                raise ShapeMismatch(f"gradient shape {tuple(g.shape)} vs parameter {tuple(p.shape)}")
            p.grad = g.detach().clone()
    opt.step()
