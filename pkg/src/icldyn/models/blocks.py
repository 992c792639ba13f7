"""Transformer and 1-D U-Net building blocks."""

from __future__ import annotations

import torch
from torch import nn

from ..errors import LengthNotDivisible
from ..tensor import ops


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def forward(self, x, kv=None, causal: bool = False):
        p = {
            "wq": self.q.weight, "bq": self.q.bias, "wk": self.k.weight, "bk": self.k.bias,
            "wv": self.v.weight, "bv": self.v.bias, "wo": self.o.weight, "bo": self.o.bias,
        }
        return ops.multi_head_attention(x, x if kv is None else kv, p, self.heads, causal)


class TransformerBlock(nn.Module):
    """Pre-norm block: self-attention, optional cross-attention, GELU feed-forward."""

    def __init__(self, dim: int, heads: int, ff_mult: int = 4, cross: bool = False, causal: bool = False):
        super().__init__()
        self.causal = causal
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.cross = None
        if cross:
            self.norm2 = nn.LayerNorm(dim)
            self.cross = Attention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, ff_mult * dim)
        self.ff2 = nn.Linear(ff_mult * dim, dim)

    def forward(self, x, memory=None):
        x = x + self.attn(self.norm1(x), causal=self.causal)
        if self.cross is not None:
            x = x + self.cross(self.norm2(x), memory)
        return x + self.ff2(ops.gelu(self.ff1(self.norm3(x))))


class TimeEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.fc1 = nn.Linear(dim, 4 * dim)
        self.fc2 = nn.Linear(4 * dim, dim)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        e = ops.sinusoidal_embedding(t, self.dim, dtype=self.fc1.weight.dtype)
        return self.fc2(ops.mish(self.fc1(e)))


def positions(start: int, stop: int, dim: int, like: torch.Tensor) -> torch.Tensor:
    return ops.sinusoidal_embedding(torch.arange(start, stop), dim, dtype=like.dtype)


class ConvNormMish(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, groups: int):
        super().__init__()
        self.conv = nn.Conv1d(c_in, c_out, kernel, padding=kernel // 2)
        self.norm = nn.GroupNorm(groups, c_out)

    def forward(self, x):
        return ops.mish(self.norm(self.conv(x)))


class FiLMResBlock(nn.Module):
    """Two conv stages with a FiLM modulation from ``cond`` in between, plus a residual path."""

    def __init__(self, c_in: int, c_out: int, cond_dim: int, kernel: int, groups: int):
        super().__init__()
        self.block1 = ConvNormMish(c_in, c_out, kernel, groups)
        self.block2 = ConvNormMish(c_out, c_out, kernel, groups)
        self.film = nn.Linear(cond_dim, 2 * c_out)
        self.skip = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, cond):
        h = self.block1(x)
        scale, shift = self.film(ops.mish(cond)).chunk(2, dim=-1)
        h = ops.film(h, 1.0 + scale, shift)
        return self.block2(h) + self.skip(x)


class Downsample(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv1d(c_in, c_out, 3, stride=2, padding=1)

    def forward(self, x):
        return ops.downsample1d(x, self.conv.weight, self.conv.bias)


class Upsample(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.ConvTranspose1d(c_in, c_out, 4, stride=2, padding=1)

    def forward(self, x):
        return ops.upsample1d(x, self.conv.weight, self.conv.bias)


class UNet1d(nn.Module):
    """Temporal U-Net on ``(B, C, L)``; every residual block is FiLM-modulated by ``cond``.

    Channel widths double at each of the ``down_steps`` resolution levels.
    """

    def __init__(self, c_in: int, c_out: int, base: int, down_steps: int, cond_dim: int, kernel: int = 5, groups: int = 8):
        super().__init__()
        self.down_steps = down_steps
        dims = [base * 2**i for i in range(down_steps + 1)]
        self.inp = nn.Conv1d(c_in, base, kernel, padding=kernel // 2)
        self.down_blocks = nn.ModuleList(FiLMResBlock(dims[i], dims[i], cond_dim, kernel, groups) for i in range(down_steps))
        self.downs = nn.ModuleList(Downsample(dims[i], dims[i + 1]) for i in range(down_steps))
        self.mid1 = FiLMResBlock(dims[-1], dims[-1], cond_dim, kernel, groups)
        self.mid2 = FiLMResBlock(dims[-1], dims[-1], cond_dim, kernel, groups)
        self.ups = nn.ModuleList(Upsample(dims[i + 1], dims[i]) for i in range(down_steps))
        self.up_blocks = nn.ModuleList(FiLMResBlock(2 * dims[i], dims[i], cond_dim, kernel, groups) for i in range(down_steps))
        self.final = ConvNormMish(base, base, kernel, groups)
        self.out = nn.Conv1d(base, c_out, 1)

    def forward(self, x, cond):
        L = x.shape[-1]
        if L % (2**self.down_steps):
            raise LengthNotDivisible(f"sequence length {L} not divisible by 2^{self.down_steps}")
        h = self.inp(x)
        skips = []
        for block, down in zip(self.down_blocks, self.downs):
            h = block(h, cond)
            skips.append(h)
            h = down(h)
        h = self.mid2(self.mid1(h, cond), cond)
        for i in reversed(range(self.down_steps)):
            h = self.ups[i](h)
            h = self.up_blocks[i](ops.concat([h, skips[i]], dim=1), cond)
        return self.out(self.final(h))
