from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, model_validator

Arch = Literal["RoboMorph", "Diffuser", "CDCNN", "CDT"]
DIFFUSION_ARCHS = ("Diffuser", "CDCNN", "CDT")

ARCH_PRESETS = {
    "desk": dict(blocks=4, heads=4, embed_dim=64, base_channels=32, down_steps=2, T=100),
    "paper": dict(blocks=12, heads=8, embed_dim=384, base_channels=128, down_steps=3, T=100),
}


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    arch: Arch = "RoboMorph"
    d_u: int = 2
    d_y: int = 2
    N: int = 128
    m: int = 96
    blocks: int = 4
    heads: int = 4
    embed_dim: int = 64
    ff_mult: int = 4
    base_channels: int = 32
    down_steps: int = 2
    kernel: int = 5
    groups: int = 8
    T: int = 100
    preset: Literal["desk", "paper", "custom"] = "desk"

    @model_validator(mode="after")
    def _check(self):
        if not (0 < self.m < self.N):
            raise ValueError(f"need 0 < m < N, got m={self.m}, N={self.N}")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.base_channels % self.groups:
            raise ValueError("base_channels must be divisible by groups")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        return self

    @property
    def horizon(self) -> int:
        return self.N - self.m

    @property
    def is_diffusion(self) -> bool:
        return self.arch in DIFFUSION_ARCHS

    @classmethod
    def from_preset(cls, preset: str, **overrides) -> "ModelConfig":
        return cls(**{**ARCH_PRESETS[preset], "preset": preset, **overrides})
