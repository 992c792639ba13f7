"""Feedforward excitation signals: chirp and multi-sine, plus randomized parameter draws."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

MULTISINE_RATIOS = (1.0, 1.5, 2.0, 3.0)


class SignalKind(str, Enum):
    CHIRP = "CH"
    MULTISINE = "MS"


@dataclass(frozen=True)
class ChirpParams:
    amplitude: float
    f1: float
    f2: float
    phase: float


@dataclass(frozen=True)
class MultiSineParams:
    amplitudes: tuple[float, float, float, float]
    psi: tuple[str, str, str, str]  # each "sin" or "cos"
    f0: float


@dataclass(frozen=True)
class ExcitationSpec:
    kind: SignalKind
    chirp: Optional[ChirpParams] = None
    multisine: Optional[MultiSineParams] = None

    def __post_init__(self):
        if self.kind is SignalKind.CHIRP:
            if self.chirp is None or self.multisine is not None:
                raise ValueError("chirp spec must carry chirp params only")
            c = self.chirp
            if min(c.f1, c.f2) < 0 or not math.isfinite(c.amplitude):
                raise ValueError(f"invalid chirp params {c}")
        else:
            if self.multisine is None or self.chirp is not None:
                raise ValueError("multi-sine spec must carry multi-sine params only")
            ms = self.multisine
            if len(ms.amplitudes) != 4 or len(ms.psi) != 4:
                raise ValueError("multi-sine needs exactly 4 components")
            if ms.f0 < 0 or not all(math.isfinite(a) for a in ms.amplitudes):
                raise ValueError(f"invalid multi-sine params {ms}")
            if any(p not in ("sin", "cos") for p in ms.psi):
                raise ValueError(f"psi flags must be sin/cos, got {ms.psi}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "chirp": asdict(self.chirp) if self.chirp else None,
            "multisine": asdict(self.multisine) if self.multisine else None,
        }


class RandomizationProfile(BaseModel):
    """One row of the excitation randomization table.

    ``amp`` is the chirp amplitude interval; multi-sine rows leave it unset and
    bound each component amplitude by ``ms_amp_scale * f0`` instead.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    dataset_id: Literal["D1", "D2", "D3", "D4"]
    signal: SignalKind
    amp: Optional[tuple[float, float]] = None
    freq: tuple[float, float]
    ms_amp_scale: float = 30.0
    tie_chirp_freqs: bool = True

    @model_validator(mode="after")
    def _check(self):
        lo, hi = self.freq
        if not (0 <= lo <= hi):
            raise ValueError(f"freq interval must satisfy 0 <= low <= high, got {self.freq}")
        if self.dataset_id == "D1" and lo != hi:
            raise ValueError("D1 profiles pin a single frequency")
        if self.signal is SignalKind.CHIRP:
            if self.amp is None:
                raise ValueError("chirp profiles need an amp interval")
            if self.amp[0] > self.amp[1]:
                raise ValueError(f"amp interval is empty: {self.amp}")
        if self.ms_amp_scale < 0:
            raise ValueError("ms_amp_scale must be non-negative")
        return self

    @property
    def kind(self) -> SignalKind:
        return self.signal

    @property
    def freq_range(self) -> tuple[float, float]:
        return self.freq

    def pinned(self, f: float) -> "RandomizationProfile":
        """Copy with the frequency range collapsed onto ``f``."""
        return self.model_copy(update={"freq": (float(f), float(f))})


def _table_row(did, sig, freq):
    amp = (-4.0, 4.0) if sig is SignalKind.CHIRP else None
    return RandomizationProfile(dataset_id=did, signal=sig, amp=amp, freq=freq)


# Randomization table, chirp rows then multi-sine rows.
TABLE_PROFILES: dict[str, RandomizationProfile] = {
    "D1-CH": _table_row("D1", SignalKind.CHIRP, (0.3, 0.3)),
    "D2-CH": _table_row("D2", SignalKind.CHIRP, (0.2, 0.4)),
    "D3-CH": _table_row("D3", SignalKind.CHIRP, (0.2, 0.6)),
    "D4-CH": _table_row("D4", SignalKind.CHIRP, (0.1, 0.7)),
    "D1-MS": _table_row("D1", SignalKind.MULTISINE, (0.15, 0.15)),
    "D2-MS": _table_row("D2", SignalKind.MULTISINE, (0.05, 0.15)),
    "D3-MS": _table_row("D3", SignalKind.MULTISINE, (0.05, 0.25)),
    "D4-MS": _table_row("D4", SignalKind.MULTISINE, (0.01, 0.30)),
}


def chirp_value(spec: ExcitationSpec, t):
    c = spec.chirp
    w1 = 2.0 * np.pi * c.f1
    w2 = 2.0 * np.pi * c.f2
    return c.amplitude * np.cos(w1 * (1.0 + 0.25 * np.cos(w2 * t)) * t + c.phase)


def multisine_value(spec: ExcitationSpec, t):
    ms = spec.multisine
    w0 = 2.0 * np.pi * ms.f0
    out = 0.0
    for a, psi, ratio in zip(ms.amplitudes, ms.psi, MULTISINE_RATIOS):
        fn = np.sin if psi == "sin" else np.cos
        out = out + a * fn(ratio * w0 * t)
    return out


def excitation_value(spec: ExcitationSpec, t):
    if spec.kind is SignalKind.CHIRP:
        return chirp_value(spec, t)
    return multisine_value(spec, t)


def sample_excitation(profile: RandomizationProfile, rng: np.random.Generator) -> ExcitationSpec:
    lo, hi = profile.freq
    if profile.signal is SignalKind.CHIRP:
        a_lo, a_hi = profile.amp
        amplitude = float(rng.uniform(a_lo, a_hi))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        f1 = float(rng.uniform(lo, hi))
        f2 = f1 if profile.tie_chirp_freqs else float(rng.uniform(lo, hi))
        return ExcitationSpec(SignalKind.CHIRP, chirp=ChirpParams(amplitude, f1, f2, phase))

    f0 = float(rng.uniform(lo, hi))
    bound = profile.ms_amp_scale * f0
    amps = tuple(float(a) for a in rng.uniform(-bound, bound, size=4))
    psi = tuple("sin" if b else "cos" for b in rng.integers(0, 2, size=4))
    return ExcitationSpec(SignalKind.MULTISINE, multisine=MultiSineParams(amps, psi, f0))


def render_inputs(
    profile: RandomizationProfile, d_u: int, n: int, dt: float, rng: np.random.Generator
) -> tuple[np.ndarray, list[ExcitationSpec]]:
    """Draw one excitation per channel and evaluate it on ``t = k * dt``.

    Returns the ``(n, d_u)`` input array and the per-channel specs.
    """
    if n < 1 or d_u < 1 or dt <= 0:
        raise ValueError(f"need n >= 1, d_u >= 1, dt > 0; got n={n}, d_u={d_u}, dt={dt}")
    t = np.arange(n, dtype=np.float64) * dt
    specs = [sample_excitation(profile, rng) for _ in range(d_u)]
    u = np.empty((n, d_u), dtype=np.float64)
    for j, spec in enumerate(specs):
        u[:, j] = excitation_value(spec, t)
    return u, specs
