"""The four meta-models.

All tensors are batch-first: inputs ``(B, L, d_u)``, observations ``(B, L, d_y)``.
Diffusion steps ``t`` are integer tensors of shape ``(B,)`` with values in ``[1, T]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from ..errors import ShapeMismatch
from ..tensor import ops
from .blocks import TimeEmbedding, TransformerBlock, UNet1d, positions
from .config import ModelConfig


def _check(x: torch.Tensor, shape: tuple, what: str):
    if tuple(x.shape[1:]) != shape:
        raise ShapeMismatch(f"{what}: expected (B, {', '.join(map(str, shape))}), got {tuple(x.shape)}")


class RoboMorph(nn.Module):
    """Deterministic encoder-decoder transformer.

    The encoder self-attends over embedded ``(u_t, y_t)`` context pairs; the decoder embeds
    the future inputs, self-attends causally, cross-attends to the encoder memory and
    projects each step to an observation estimate.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        E = cfg.embed_dim
        self.enc_in = nn.Linear(cfg.d_u + cfg.d_y, E)
        self.dec_in = nn.Linear(cfg.d_u, E)
        self.encoder = nn.ModuleList(TransformerBlock(E, cfg.heads, cfg.ff_mult) for _ in range(cfg.blocks))
        self.decoder = nn.ModuleList(
            TransformerBlock(E, cfg.heads, cfg.ff_mult, cross=True, causal=True) for _ in range(cfg.blocks)
        )
        self.enc_norm = nn.LayerNorm(E)
        self.dec_norm = nn.LayerNorm(E)
        self.head = nn.Linear(E, cfg.d_y)

    def forward(self, ctx_u, ctx_y, fut_u):
        c = self.cfg
        _check(ctx_u, (c.m, c.d_u), "ctx_u")
        _check(ctx_y, (c.m, c.d_y), "ctx_y")
        _check(fut_u, (c.horizon, c.d_u), "fut_u")
        E = c.embed_dim
        mem = self.enc_in(ops.concat([ctx_u, ctx_y])) + positions(0, c.m, E, ctx_u)
        for blk in self.encoder:
            mem = blk(mem)
        mem = self.enc_norm(mem)
        h = self.dec_in(fut_u) + positions(c.m, c.N, E, fut_u)
        for blk in self.decoder:
            h = blk(h, mem)
        return self.head(self.dec_norm(h))

    def zero_init_modules(self):
        return []


@dataclass
class ContextEncoding:
    cond_vector: torch.Tensor  # (B, E)
    cond_tokens: torch.Tensor  # (B, N, E)
    fut_u: torch.Tensor  # (B, N - m, d_u)
    last_y: torch.Tensor  # (B, d_y), final context observation


class ContextEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        E = cfg.embed_dim
        self.token = nn.Linear(cfg.d_u + cfg.d_y + 1, E)
        self.fc1 = nn.Linear(E, E)
        self.fc2 = nn.Linear(E, E)

    def forward(self, u_full, y_ctx) -> ContextEncoding:
        c = self.cfg
        _check(u_full, (c.N, c.d_u), "u_full")
        _check(y_ctx, (c.m, c.d_y), "y_ctx")
        B = u_full.shape[0]
        y_pad = torch.cat([y_ctx, y_ctx.new_zeros(B, c.horizon, c.d_y)], dim=1)
        flag = torch.cat([y_ctx.new_ones(B, c.m, 1), y_ctx.new_zeros(B, c.horizon, 1)], dim=1)
        tokens = self.token(ops.concat([u_full, y_pad, flag]))
        vec = self.fc2(ops.mish(self.fc1(tokens.mean(dim=1))))
        return ContextEncoding(vec, tokens, u_full[:, c.m :], y_ctx[:, -1])


class Diffuser(nn.Module):
    """Unconditional denoiser over the joint ``(u, y)`` trajectory; conditioning is by inpainting."""

    layout = "joint"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        C = cfg.d_u + cfg.d_y
        self.time = TimeEmbedding(cfg.base_channels)
        self.unet = UNet1d(C, C, cfg.base_channels, cfg.down_steps, cfg.base_channels, cfg.kernel, cfg.groups)

    def condition(self, u_full, y_ctx):
        return None

    def denoise(self, x_t, t, cond=None):
        c = self.cfg
        _check(x_t, (c.N, c.d_u + c.d_y), "traj_t")
        out = self.unet(x_t.transpose(1, 2), self.time(t))
        return out.transpose(1, 2)

    forward = denoise

    def zero_init_modules(self):
        return [self.unet.out]


class CDCNN(nn.Module):
    """Conditional U-Net over the horizon.

    FiLM parameters at every stage come from ``concat(t-embedding, cond_vector)``. The
    future inputs and the last context observation also enter as extra input channels so
    the convolution sees the per-step excitation it is conditioned on.
    """

    layout = "horizon"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = ContextEncoder(cfg)
        self.time = TimeEmbedding(cfg.base_channels)
        c_in = cfg.d_y + cfg.d_u + cfg.d_y
        cond_dim = cfg.base_channels + cfg.embed_dim
        self.unet = UNet1d(c_in, cfg.d_y, cfg.base_channels, cfg.down_steps, cond_dim, cfg.kernel, cfg.groups)

    def condition(self, u_full, y_ctx) -> ContextEncoding:
        return self.encoder(u_full, y_ctx)

    def denoise(self, y_t, t, ctx: ContextEncoding):
        c = self.cfg
        _check(y_t, (c.horizon, c.d_y), "y_t")
        last = ctx.last_y.unsqueeze(1).expand(-1, c.horizon, -1)
        x = ops.concat([y_t, ctx.fut_u, last]).transpose(1, 2)
        cond = ops.concat([self.time(t), ctx.cond_vector])
        return self.unet(x, cond).transpose(1, 2)

    forward = denoise

    def zero_init_modules(self):
        return [self.unet.out]


class CDT(nn.Module):
    """Transformer denoiser over horizon tokens with cross-attention to the context tokens."""

    layout = "horizon"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        E = cfg.embed_dim
        self.encoder = ContextEncoder(cfg)
        self.time = TimeEmbedding(E)
        self.inp = nn.Linear(cfg.d_y, E)
        self.blocks = nn.ModuleList(
            TransformerBlock(E, cfg.heads, cfg.ff_mult, cross=True, causal=False) for _ in range(cfg.blocks)
        )
        self.norm = nn.LayerNorm(E)
        self.out = nn.Linear(E, cfg.d_y)

    def condition(self, u_full, y_ctx) -> ContextEncoding:
        return self.encoder(u_full, y_ctx)

    def denoise(self, y_t, t, ctx: ContextEncoding):
        c = self.cfg
        _check(y_t, (c.horizon, c.d_y), "y_t")
        E = c.embed_dim
        _check(ctx.cond_tokens, (c.N, E), "cond_tokens")
        mem = ctx.cond_tokens + positions(0, c.N, E, y_t)
        h = self.inp(y_t) + positions(c.m, c.N, E, y_t) + self.time(t).unsqueeze(1)
        for blk in self.blocks:
            h = blk(h, mem)
        return self.out(self.norm(h))

    forward = denoise

    def zero_init_modules(self):
        return [self.out]


ARCHS = {"RoboMorph": RoboMorph, "Diffuser": Diffuser, "CDCNN": CDCNN, "CDT": CDT}


def build_model(cfg: ModelConfig) -> nn.Module:
    return ARCHS[cfg.arch](cfg)


def encode_context(model: nn.Module, u_full, y_ctx) -> Optional[ContextEncoding]:
    return model.condition(u_full, y_ctx)
