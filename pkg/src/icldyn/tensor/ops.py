"""Functional building blocks shared by all four architectures.

Layout conventions: sequences are ``(B, L, D)`` for token ops and ``(B, C, L)`` for
convolutions. Everything is dtype-agnostic, so the same code runs in float32 for
training and float64 for finite-difference checks.
"""

from __future__ import annotations

import math
from typing import Mapping, Optional

import torch
import torch.nn.functional as F

from ..errors import DetachedLoss, NotScalar, ShapeMismatch


def _require(cond: bool, msg: str):
    if not cond:
        raise ShapeMismatch(msg)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _require(a.shape[-1] == b.shape[-2], f"matmul: {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def linear(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    _require(x.shape[-1] == weight.shape[-1], f"linear: input dim {x.shape[-1]} vs weight {tuple(weight.shape)}")
    return F.linear(x, weight, bias)


def conv1d(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Stride-1 convolution with same padding (odd kernels only)."""
    _require(x.dim() == 3 and x.shape[1] == weight.shape[1], f"conv1d: x {tuple(x.shape)}, w {tuple(weight.shape)}")
    k = weight.shape[-1]
    _require(k % 2 == 1, "conv1d: same padding needs an odd kernel")
    return F.conv1d(x, weight, bias, padding=k // 2)


def downsample1d(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Halve the length with a stride-2, kernel-3 convolution."""
    _require(x.dim() == 3 and weight.shape[-1] == 3, "downsample1d expects (B, C, L) and a kernel of 3")
    return F.conv1d(x, weight, bias, stride=2, padding=1)


def upsample1d(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Double the length with a stride-2, kernel-4 transposed convolution."""
    _require(x.dim() == 3 and weight.shape[-1] == 4, "upsample1d expects (B, C, L) and a kernel of 4")
    return F.conv_transpose1d(x, weight, bias, stride=2, padding=1)


def group_norm(x, groups: int, weight=None, bias=None, eps: float = 1e-5):
    _require(x.shape[1] % groups == 0, f"group_norm: {x.shape[1]} channels not divisible by {groups}")
    return F.group_norm(x, groups, weight, bias, eps)


def layer_norm(x, weight=None, bias=None, eps: float = 1e-5):
    return F.layer_norm(x, (x.shape[-1],), weight, bias, eps)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def gelu(x):
    return F.gelu(x)


def mish(x):
    return F.mish(x)


def embedding_lookup(table: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    return F.embedding(idx, table)


def sinusoidal_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0, dtype=None) -> torch.Tensor:
    """``(B,)`` step indices (or positions) to ``(B, dim)`` sin/cos features."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    ang = t.to(torch.float64).unsqueeze(-1) * freqs
    emb = torch.cat([ang.sin(), ang.cos()], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb.to(dtype or torch.get_default_dtype())


def film(x: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    """Feature-wise modulation of ``(B, C, L)`` by ``(B, C)`` scale and shift, broadcast over time."""
    _require(scale.shape == shift.shape == x.shape[:2], f"film: x {tuple(x.shape)}, scale {tuple(scale.shape)}")
    return scale.unsqueeze(-1) * x + shift.unsqueeze(-1)


def concat(xs, dim: int = -1) -> torch.Tensor:
    return torch.cat(list(xs), dim=dim)


def slice_(x: torch.Tensor, dim: int, start: int, stop: int) -> torch.Tensor:
    return x.narrow(dim, start, stop - start)


def multi_head_attention(
    q_src: torch.Tensor,
    kv_src: torch.Tensor,
    params: Mapping[str, torch.Tensor],
    heads: int,
    causal: bool = False,
) -> torch.Tensor:
    """Scaled dot-product attention with input/output projections.

    ``params`` holds ``wq, wk, wv, wo`` (``(D, D)``-shaped linear weights) and optional
    ``bq, bk, bv, bo``. With ``causal`` set, query ``i`` cannot see keys ``j > i``.
    """
    B, Lq, D = q_src.shape
    Lk = kv_src.shape[1]
    _require(D % heads == 0, f"embedding dim {D} not divisible by {heads} heads")
    _require(kv_src.shape[0] == B and kv_src.shape[2] == D, "attention: q/kv batch or width mismatch")
    hd = D // heads

    def proj(x, w, b, L):
        return linear(x, params[w], params.get(b)).view(B, L, heads, hd).transpose(1, 2)

    q = proj(q_src, "wq", "bq", Lq)
    k = proj(kv_src, "wk", "bk", Lk)
    v = proj(kv_src, "wv", "bv", Lk)
    scores = (q @ k.transpose(-1, -2)) / math.sqrt(hd)
    if causal:
        _require(Lq == Lk, "causal attention needs equal query/key lengths")
        mask = torch.ones(Lq, Lk, dtype=torch.bool).triu(1)
        scores = scores.masked_fill(mask, float("-inf"))
    out = softmax(scores, -1) @ v
    out = out.transpose(1, 2).reshape(B, Lq, D)
    return linear(out, params["wo"], params.get("bo"))


def backward(loss: torch.Tensor, params: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Gradients of a scalar ``loss`` for every parameter it reaches; unreachable names are omitted."""
    if loss.numel() != 1:
        raise NotScalar(f"loss must be scalar, got shape {tuple(loss.shape)}")
    if not loss.requires_grad or loss.grad_fn is None:
        raise DetachedLoss("loss is not attached to any parameter")
    names = list(params)
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return {n: g for n, g in zip(names, grads) if g is not None}
