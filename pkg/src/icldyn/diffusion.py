"""DDPM machinery: schedules, forward corruption, weighted noise-prediction loss and samplers.

Diffusion steps are 1-based: ``t`` runs over ``1..T`` and table entry ``t - 1`` holds the
value for step ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import BadK, BadT, MaskShapeMismatch, ShapeMismatch

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


class DiffusionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    T: int = 100
    schedule: Literal["cosine", "linear"] = "cosine"
    w_u: float = 1.0
    w_y: float = 1.0
    warm_start_k: int = 5
    warm_start_stride: int = 8
    clip_x0: Optional[float] = 5.0  # bound on the implied clean sample while sampling; None disables


    @model_validator(mode="after")
    def _check(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.w_u < 0 or self.w_y < 0:
            raise ValueError("loss weights must be non-negative")
        if not (1 <= self.warm_start_k <= self.T):
            raise ValueError("warm_start_k must lie in [1, T]")
        if self.clip_x0 is not None and self.clip_x0 <= 0:
            raise ValueError("clip_x0 must be positive")
        return self

    @classmethod
    def for_arch(cls, arch: str, **overrides) -> "DiffusionConfig":
        """Defaults per architecture: the inpainting model weights observations 3x."""
        base = {"w_u": 1.0, "w_y": 3.0} if arch == "Diffuser" else {"w_u": 1.0, "w_y": 1.0}
        return cls(**{**base, **overrides})


@dataclass(frozen=True)
class WeightMask:
    w_u: float = 1.0
    w_y: float = 1.0

    def __post_init__(self):
        if self.w_u < 0 or self.w_y < 0:
            raise ValueError("weights must be non-negative")


@dataclass
class DiffusionSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_variance: np.ndarray
    clip_x0: Optional[float] = None

    def coef(self, name: str, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        """Gather ``name[t - 1]`` per batch element, shaped to broadcast against ``like``."""
        table = torch.as_tensor(getattr(self, name), dtype=like.dtype)
        return table[t - 1].view(-1, *([1] * (like.dim() - 1)))


def make_schedule(T: int, kind: str = "cosine", clip_x0: Optional[float] = None) -> DiffusionSchedule:
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise BadT(f"T must be a positive integer, got {T!r}")
    if kind == "cosine":
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos(((steps / T) + COSINE_OFFSET) / (1 + COSINE_OFFSET) * np.pi / 2) ** 2
        ab = f / f[0]
        beta = np.minimum(1.0 - ab[1:] / ab[:-1], MAX_BETA)
    elif kind == "linear":
        beta = np.linspace(1e-4, 2e-2, T, dtype=np.float64)
    else:
        raise BadT(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    ab_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    post = beta * (1.0 - ab_prev) / (1.0 - alpha_bar)
    return DiffusionSchedule(int(T), beta, alpha, alpha_bar, post, clip_x0)


def _steps(t, batch: int) -> torch.Tensor:
    if isinstance(t, torch.Tensor):
        return t.to(torch.long).reshape(-1).expand(batch) if t.numel() == 1 else t.to(torch.long)
    return torch.full((batch,), int(t), dtype=torch.long)


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    if eps.shape != x0.shape:
        raise ShapeMismatch(f"eps {tuple(eps.shape)} vs x0 {tuple(x0.shape)}")
    t = _steps(t, x0.shape[0])
    if int(t.min()) < 1 or int(t.max()) > sched.T:
        raise BadT(f"t outside [1, {sched.T}]")
    ab = sched.coef("alpha_bar", t, x0)
    return ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps


def loss_weights(model, mask: WeightMask, like: torch.Tensor) -> torch.Tensor:
    if model.layout == "joint":
        c = model.cfg
        w = [mask.w_u] * c.d_u + [mask.w_y] * c.d_y
    else:
        w = [mask.w_y] * like.shape[-1]
    return torch.tensor(w, dtype=like.dtype)


def diffusion_target(model, batch):
    """Clean sample ``x0`` and conditioning for a batch, per the model's layout."""
    if model.layout == "joint":
        return torch.cat([batch.u, batch.y], dim=-1), None
    return batch.fut_y, model.condition(batch.u, batch.ctx_y)


def training_loss(model, batch, mask: WeightMask, sched: DiffusionSchedule, gen: torch.Generator) -> torch.Tensor:
    """Mean of ``(W * (eps - eps_hat))**2`` at uniformly drawn steps, one step per batch element."""
    x0, cond = diffusion_target(model, batch)
    B = x0.shape[0]
    t = torch.randint(1, sched.T + 1, (B,), generator=gen)
    eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    x_t = q_sample(x0, t, eps, sched)
    eps_hat = model.denoise(x_t, t, cond)
    if eps_hat.shape != eps.shape:
        raise ShapeMismatch(f"denoiser returned {tuple(eps_hat.shape)}, expected {tuple(eps.shape)}")
    w = loss_weights(model, mask, x0)
    return ((w * (eps - eps_hat)) ** 2).mean()


@dataclass
class InpaintCondition:
    known: torch.Tensor
    mask: torch.Tensor  # bool, same shape as known

    def __post_init__(self):
        if self.mask.shape != self.known.shape:
            raise MaskShapeMismatch(f"mask {tuple(self.mask.shape)} vs known {tuple(self.known.shape)}")
        self.mask = self.mask.to(torch.bool)

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape != self.known.shape:
            raise MaskShapeMismatch(f"sample {tuple(x.shape)} vs known {tuple(self.known.shape)}")
        return torch.where(self.mask, self.known.to(x.dtype), x)


def p_sample_step(model, x_t, t: int, cond, sched: DiffusionSchedule, gen: torch.Generator) -> torch.Tensor:
    if not (1 <= t <= sched.T):
        raise BadT(f"t={t} outside [1, {sched.T}]")
    model_cond = None if isinstance(cond, InpaintCondition) else cond
    eps_hat = model.denoise(x_t, _steps(t, x_t.shape[0]), model_cond)
    if eps_hat.shape != x_t.shape:
        raise ShapeMismatch(f"denoiser returned {tuple(eps_hat.shape)} for input {tuple(x_t.shape)}")
    i = t - 1
    beta, alpha, ab = float(sched.beta[i]), float(sched.alpha[i]), float(sched.alpha_bar[i])
    if sched.clip_x0 is None:
        mean = (x_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)
    else:
        # Same mean written through the implied clean sample, which is bounded first so a
        # small noise error at the near-1 final betas cannot be amplified by 1/sqrt(alpha).
        ab_prev = float(sched.alpha_bar[i - 1]) if i > 0 else 1.0
        x0 = ((x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)).clamp(-sched.clip_x0, sched.clip_x0)
        mean = (np.sqrt(ab_prev) * beta / (1.0 - ab)) * x0 + (np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)) * x_t
    if t == 1:
        return mean
    z = torch.randn(x_t.shape, generator=gen, dtype=x_t.dtype)
    return mean + float(np.sqrt(sched.posterior_variance[i])) * z


def _reverse(model, x, start: int, cond, sched, gen) -> torch.Tensor:
    clamp = cond.apply if isinstance(cond, InpaintCondition) else (lambda v: v)
    x = clamp(x)
    for t in range(start, 0, -1):
        x = clamp(p_sample_step(model, x, t, cond, sched, gen))
    return x


def sample(model, cond, shape, sched: DiffusionSchedule, gen: torch.Generator, dtype=torch.float32) -> torch.Tensor:
    """Ancestral sampling from ``x_T ~ N(0, I)`` down to ``x_0``."""
    x = torch.randn(tuple(shape), generator=gen, dtype=dtype)
    return _reverse(model, x, sched.T, cond, sched, gen)


def inpaint_sample(model, known, known_mask, sched: DiffusionSchedule, gen: torch.Generator) -> torch.Tensor:
    """Sample with ``known[known_mask]`` overwritten by its clean values after every step."""
    cond = InpaintCondition(known, torch.as_tensor(known_mask))
    return sample(model, cond, known.shape, sched, gen, dtype=known.dtype)


def warm_start_sample(model, prior, k: int, cond, sched: DiffusionSchedule, gen: torch.Generator) -> torch.Tensor:
    """Noise ``prior`` to step ``k`` and run only the last ``k`` reverse steps.

    At ``k == T`` the chain starts from pure noise exactly like :func:`sample`, so both
    paths consume the generator identically and return the same tensor.
    """
    if not (1 <= k <= sched.T):
        raise BadK(f"k={k} outside [1, {sched.T}]")
    eps = torch.randn(prior.shape, generator=gen, dtype=prior.dtype)
    x = eps if k == sched.T else q_sample(prior, k, eps, sched)
    return _reverse(model, x, k, cond, sched, gen)


def shifted_prior(future: torch.Tensor, stride: int) -> torch.Tensor:
    """Previous-solution stand-in: ``future`` advanced by ``stride`` steps, last value held.

    ``future`` is ``(B, H, C)``; the result has the same shape.
    """
    H = future.shape[1]
    idx = torch.clamp(torch.arange(H) + stride, max=H - 1)
    return future[:, idx]
