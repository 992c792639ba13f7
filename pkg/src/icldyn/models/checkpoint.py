"""Parameter initialization and checkpoint save/load."""

from __future__ import annotations

from typing import Optional

import torch
from torch import nn

from ..dataset import NormalizationStats
from ..errors import SchemaMismatch
from ..tensor import container
from .config import ModelConfig
from .meta import build_model

INIT_STD = 0.02


def init_params(cfg: ModelConfig, seed: int = 0, device=None) -> nn.Module:
    """Build a model with deterministic initialization.

    Projections get a truncated normal (std 0.02, cut at two std), biases zero, norms unit
    scale, and denoiser output layers are zeroed so an untrained denoiser predicts exactly 0.
    """
    model = build_model(cfg)
    if device is not None:
        return model.to(device)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, (nn.Linear, nn.Conv1d, nn.ConvTranspose1d)):
                nn.init.trunc_normal_(mod.weight, 0.0, INIT_STD, -2 * INIT_STD, 2 * INIT_STD, generator=gen)
                if mod.bias is not None:
                    mod.bias.zero_()
            elif isinstance(mod, (nn.LayerNorm, nn.GroupNorm)):
                mod.weight.fill_(1.0)
                mod.bias.zero_()
        for mod in model.zero_init_modules():
            mod.weight.zero_()
            mod.bias.zero_()
    return model


def param_count(cfg: ModelConfig) -> int:
    """Parameter count without allocating storage."""
    model = init_params(cfg, device="meta")
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(model: nn.Module, cfg: ModelConfig, stats: Optional[NormalizationStats], path, extra: Optional[dict] = None):
    config = {"model": cfg.model_dump(mode="json"), **(extra or {})}
    container.save(path, dict(model.state_dict()), config, stats.to_dict() if stats is not None else None)


def load_checkpoint(path):
    """Return ``(params, config, stats)`` where ``config`` is the stored config dict."""
    params, config, stats = container.load(path)
    return params, config, (NormalizationStats.from_dict(stats) if stats else None)


def load_model(path) -> tuple[nn.Module, ModelConfig, dict, Optional[NormalizationStats]]:
    params, config, stats = load_checkpoint(path)
    if "model" not in config:
        raise SchemaMismatch(f"{path} has no model config")
    cfg = ModelConfig.model_validate(config["model"])
    model = build_model(cfg)
    try:
        model.load_state_dict(params, strict=True)
    except RuntimeError as exc:
        raise SchemaMismatch(f"checkpoint parameters do not match {cfg.arch}: {exc}") from exc
    model.eval()
    return model, cfg, config, stats
