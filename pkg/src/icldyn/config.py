"""Run configuration: presets expanded first, then user overrides, with unknown keys rejected."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError

from .dataset import DatasetConfig
from .diffusion import DiffusionConfig
from .errors import ConfigInvalid, IoFailure
from .evaluation import BenchConfig, EvalConfig
from .models import ARCH_PRESETS, ModelConfig
from .signals import TABLE_PROFILES
from .trainer import ARCH_LR0, TrainConfig

SEED_ENV = "ICL_DYN_SEED"
LARGE_DATASET = 100_000

PRESETS: dict[str, dict] = {
    "desk": {
        "dataset": {
            "n_traj": 2048, "N": 128, "m": 96, "dt": 0.05, "seed": 0, "shard_size": 256,
            "profile": "D2-CH",
            "system": {"kind": "Linear", "n_x": 4, "d_u": 2, "d_y": 2},
        },
        "model": {"arch": "RoboMorph", **ARCH_PRESETS["desk"]},
        "train": {"epochs": 10, "batch_size": 64},
        "diffusion": {"T": 100, "schedule": "cosine", "warm_start_k": 5},
    },
    "paper": {
        "dataset": {
            "n_traj": 3_500_000, "N": 400, "m": 320, "dt": 0.05, "seed": 0, "shard_size": 4096,
            "profile": "D2-CH",
            "system": {"kind": "Linear", "n_x": 14, "d_u": 7, "d_y": 7},
        },
        "model": {"arch": "RoboMorph", **ARCH_PRESETS["paper"]},
        "train": {"epochs": 10, "batch_size": 64},
        "diffusion": {"T": 100, "schedule": "cosine", "warm_start_k": 5},
    },
}


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: Literal["desk", "paper"] = "desk"
    seed: Optional[int] = None
    dataset: DatasetConfig
    model: ModelConfig
    train: TrainConfig
    diffusion: DiffusionConfig
    eval: EvalConfig = EvalConfig()
    bench: BenchConfig = BenchConfig()

    def snapshot(self) -> dict:
        return self.model_dump(mode="json")

    def write_snapshot(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "config.resolved.json"
        path.write_text(json.dumps(self.snapshot(), indent=2, sort_keys=True))
        return path


_SECTIONS = ("preset", "seed", "dataset", "model", "train", "diffusion", "eval", "bench")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "profile":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _profile(value):
    if isinstance(value, str):
        if value not in TABLE_PROFILES:
            raise ConfigInvalid(f"unknown profile {value!r}; known: {', '.join(TABLE_PROFILES)}")
        return TABLE_PROFILES[value].model_dump(mode="json")
    return value


def _format_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        if err["type"] == "extra_forbidden":
            parts.append(f"unknown key '{loc}'")
        else:
            parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def resolve_config(raw: Optional[dict] = None, env: Optional[dict] = None) -> RunConfig:
    """Expand the preset, apply overrides and validate.

    Model dimensions (``N``, ``m``, ``d_u``, ``d_y``) and the diffusion step count are tied
    to the dataset and diffusion sections; per-architecture loss weights apply unless set.
    """
    raw = dict(raw or {})
    env = os.environ if env is None else env
    unknown = [k for k in raw if k not in _SECTIONS]
    if unknown:
        raise ConfigInvalid(f"unknown key '{unknown[0]}'")
    preset = raw.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigInvalid(f"unknown preset {preset!r}")
    merged = _merge(PRESETS[preset], raw)
    merged["preset"] = preset

    ds = merged["dataset"]
    ds["profile"] = _profile(ds.get("profile"))
    if env.get(SEED_ENV):
        try:
            merged["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigInvalid(f"{SEED_ENV} must be an integer") from exc
    if merged.get("seed") is not None:
        s = merged["seed"]
        ds["seed"] = s
        merged["train"]["seed"] = s
        merged.setdefault("eval", {})["seed"] = s

    model = merged["model"]
    for key in ("N", "m"):
        if key in raw.get("model", {}) and raw["model"][key] != ds[key]:
            raise ConfigInvalid(f"model.{key} conflicts with dataset.{key}")
        model[key] = ds[key]
    system = ds.get("system", {})
    model["d_u"] = system.get("d_u", 2)
    model["d_y"] = system.get("d_y", 2)
    model.setdefault("preset", preset)

    diff = merged["diffusion"]
    if "T" in raw.get("model", {}) and "T" not in raw.get("diffusion", {}):
        diff["T"] = model["T"]
    model["T"] = diff["T"]
    arch = model.get("arch", "RoboMorph")
    if arch not in ARCH_LR0:
        raise ConfigInvalid(f"model.arch: unknown architecture {arch!r}; known: {', '.join(ARCH_LR0)}")
    for k, v in DiffusionConfig.for_arch(arch).model_dump().items():
        if k in ("w_u", "w_y"):
            diff.setdefault(k, v)
    train = merged["train"]
    if train.get("lr0") is None:
        train["lr0"] = TrainConfig().resolved_lr0(arch)

    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigInvalid(_format_error(exc)) from None


def load_config(path=None, overrides: Optional[list[str]] = None, env: Optional[dict] = None) -> RunConfig:
    raw: dict[str, Any] = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigInvalid("config root must be a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigInvalid(f"override {item!r} must look like section.key=value")
        dotted, value = item.split("=", 1)
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = raw
        keys = dotted.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigInvalid(f"override path {dotted!r} crosses a non-object value")
        node[keys[-1]] = parsed
    return resolve_config(raw, env)
