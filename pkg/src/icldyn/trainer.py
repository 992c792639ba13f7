"""Training loops for the deterministic (trajectory MSE) and diffusion (weighted noise MSE) objectives."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict

from .dataset import DatasetManifest, NormalizationStats, load_arrays, load_batches, normalized_tensors, Batch
from .diffusion import DiffusionConfig, WeightMask, make_schedule, training_loss
from .errors import ConfigInvalid, IoFailure, NonFiniteLoss
from .models import ModelConfig, init_params, load_model, save_checkpoint
from .tensor import adam_step, lr_at, make_adam

log = logging.getLogger(__name__)

ARCH_LR0 = {"RoboMorph": 6e-4, "Diffuser": 6e-4, "CDCNN": 1e-4, "CDT": 1e-4}


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = 10
    batch_size: int = 64
    lr0: Optional[float] = None  # None: per-architecture default
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only
    grad_clip: float = 1.0

    def resolved_lr0(self, arch: str) -> float:
        return ARCH_LR0[arch] if self.lr0 is None else self.lr0


@dataclass
class TrainResult:
    checkpoint: Path
    loss_log: Path
    final_loss: float
    steps: int
    model: torch.nn.Module


def batch_objective(model, batch: Batch, cfg: ModelConfig, mask: Optional[WeightMask], sched, gen) -> torch.Tensor:
    if cfg.arch == "RoboMorph":
        pred = model(batch.ctx_u, batch.ctx_y, batch.fut_u)
        return ((batch.fut_y - pred) ** 2).mean()
    return training_loss(model, batch, mask, sched, gen)


def _weight_mask(dcfg: DiffusionConfig) -> WeightMask:
    return WeightMask(dcfg.w_u, dcfg.w_y)


def dataset_objective(
    model, cfg: ModelConfig, dcfg: DiffusionConfig, arrays, stats: NormalizationStats, m: int,
    batch_size: int = 64, seed: int = 0,
) -> float:
    """Mean objective over every trajectory in order, without parameter updates."""
    u, y = arrays
    if len(u) == 0:
        raise IoFailure("dataset holds no trajectories")
    U, Y = normalized_tensors(u, y, stats)
    sched = make_schedule(dcfg.T, dcfg.schedule)
    gen = torch.Generator().manual_seed(seed)
    total, count = 0.0, 0
    with torch.no_grad():
        for a in range(0, len(U), batch_size):
            b = Batch(U[a : a + batch_size], Y[a : a + batch_size], m, np.arange(a, min(a + batch_size, len(U))))
            loss = batch_objective(model, b, cfg, _weight_mask(dcfg), sched, gen)
            total += float(loss) * len(b.indices)
            count += len(b.indices)
    return total / count


def _checkpoint_extra(manifest: DatasetManifest, tcfg: TrainConfig, dcfg: DiffusionConfig) -> dict:
    return {
        "dataset": manifest.config,
        "diffusion": dcfg.model_dump(mode="json"),
        "train": tcfg.model_dump(mode="json"),
        "data_digest": manifest.digest(),
    }


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    manifest: DatasetManifest,
    out_dir,
    diffusion_cfg: Optional[DiffusionConfig] = None,
) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dcfg = diffusion_cfg or DiffusionConfig.for_arch(model_cfg.arch, T=model_cfg.T)
    if model_cfg.is_diffusion and dcfg.T != model_cfg.T:
        raise ConfigInvalid(f"diffusion.T={dcfg.T} disagrees with model T={model_cfg.T}")
    if (manifest.N, manifest.m, manifest.d_u, manifest.d_y) != (model_cfg.N, model_cfg.m, model_cfg.d_u, model_cfg.d_y):
        raise ConfigInvalid("model dimensions do not match the dataset manifest")

    arrays = load_arrays(manifest)
    stats = manifest.load_stats()
    per_epoch = len(arrays[0]) // train_cfg.batch_size
    total = train_cfg.epochs * per_epoch
    if total == 0:
        raise ConfigInvalid(f"no full batch of {train_cfg.batch_size} in {len(arrays[0])} trajectories")

    lr0 = train_cfg.resolved_lr0(model_cfg.arch)
    model = init_params(model_cfg, train_cfg.seed)
    model.train()
    opt = make_adam(model.parameters(), lr0)
    sched = make_schedule(dcfg.T, dcfg.schedule)
    gen = torch.Generator().manual_seed(train_cfg.seed + 1)
    mask = _weight_mask(dcfg)
    extra = _checkpoint_extra(manifest, train_cfg, dcfg)

    log_path = out / "loss_log.csv"
    clipped = 0
    step = 0
    last_finite = None
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "loss", "lr"])
        for epoch in range(train_cfg.epochs):
            for batch in load_batches(manifest, train_cfg.batch_size, train_cfg.seed, epoch, stats, arrays):
                lr = lr_at(step, max(total - 1, 0), lr0)
                loss = batch_objective(model, batch, model_cfg, mask, sched, gen)
                if not torch.isfinite(loss):
                    snap = {"step": step, "epoch": epoch, "lr": lr, "last_finite_loss": last_finite, "indices": batch.indices.tolist()}
                    (out / "nonfinite_snapshot.json").write_text(json.dumps(snap, indent=2))
                    raise NonFiniteLoss(f"non-finite loss at step {step} (epoch {epoch})")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                if train_cfg.grad_clip > 0:
                    norm = torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
                    if norm > train_cfg.grad_clip:
                        clipped += 1
                        log.debug("step %d: gradient norm %.4g clipped to %g", step, float(norm), train_cfg.grad_clip)
                adam_step(opt, lr=lr)
                last_finite = float(loss.detach())
                writer.writerow([step, epoch, repr(last_finite), repr(lr)])
                step += 1
                if train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0 and step < total:
                    save_checkpoint(model, model_cfg, stats, out / f"ckpt_{step}.bin", extra)
    if clipped:
        log.info("gradient clipping was active on %d of %d steps", clipped, step)

    model.eval()
    final = dataset_objective(model, model_cfg, dcfg, arrays, stats, manifest.m, train_cfg.batch_size, train_cfg.seed)
    if not math.isfinite(final):
        raise NonFiniteLoss("final training objective is not finite")
    ckpt = out / f"ckpt_{step}.bin"
    save_checkpoint(model, model_cfg, stats, ckpt, extra)
    log.info("trained %s for %d steps, final objective %.6g", model_cfg.arch, step, final)
    return TrainResult(ckpt, log_path, final, step, model)


def eval_loss(checkpoint, manifest: DatasetManifest, batch_size: Optional[int] = None, seed: Optional[int] = None) -> float:
    """Average training objective of a frozen checkpoint over ``manifest``.

    Diffusion objectives use a generator seeded like the end-of-training evaluation, so a
    checkpoint scored on its own training data reproduces the trainer's final loss.
    """
    model, cfg, config, stats = load_model(checkpoint)
    dcfg = DiffusionConfig.model_validate(config.get("diffusion") or DiffusionConfig.for_arch(cfg.arch).model_dump())
    tcfg = TrainConfig.model_validate(config.get("train") or {})
    if stats is None:
        stats = manifest.load_stats()
    arrays = load_arrays(manifest)
    return dataset_objective(
        model, cfg, dcfg, arrays, stats, manifest.m,
        batch_size or tcfg.batch_size, tcfg.seed if seed is None else seed,
    )
