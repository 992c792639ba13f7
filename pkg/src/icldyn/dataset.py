"""Trajectory datasets: deterministic sharded generation, normalization, splitting and batching.

Shard layout (little-endian)::

    b"ICLD" | u32 version=1 | u32 n_traj | u32 N | u32 d_u | u32 d_y
    then per trajectory: u (N*d_u float32, row-major), y (N*d_y float32, row-major)
"""

from __future__ import annotations

import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import BadSplit, ConfigInvalid, DigestMismatch, IoFailure, NumericalDivergence, StatsMissing
from .signals import TABLE_PROFILES, RandomizationProfile, render_inputs
from .systems import SystemClassConfig, sample_system, simulate

log = logging.getLogger(__name__)

MAGIC = b"ICLD"
SHARD_VERSION = 1
SCHEMA_VERSION = 1
STD_FLOOR = 1e-6
_HEADER = struct.Struct("<4s5I")


class DatasetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_traj: int = 2048
    N: int = 128
    m: int = 96
    dt: float = 0.05
    seed: int = 0
    shard_size: int = 256
    max_retries: int = 16
    profile: RandomizationProfile = TABLE_PROFILES["D2-CH"]
    system: SystemClassConfig = SystemClassConfig()

    @model_validator(mode="after")
    def _check(self):
        if not (0 < self.m < self.N):
            raise ValueError(f"need 0 < m < N, got m={self.m}, N={self.N}")
        if self.n_traj < 0 or self.shard_size < 1 or self.dt <= 0:
            raise ValueError("n_traj >= 0, shard_size >= 1 and dt > 0 required")
        return self

    @property
    def d_u(self) -> int:
        return self.system.d_u

    @property
    def d_y(self) -> int:
        return self.system.d_y


@dataclass
class Trajectory:
    u: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.u.shape[0] != self.y.shape[0]:
            raise ValueError("u and y must share their leading dimension")


@dataclass
class NormalizationStats:
    u_mean: np.ndarray
    u_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    def to_dict(self) -> dict:
        return {k: [float(v) for v in getattr(self, k)] for k in ("u_mean", "u_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "NormalizationStats":
        if not d:
            raise StatsMissing("normalization statistics are missing")
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in ("u_mean", "u_std", "y_mean", "y_std")})


@dataclass
class DatasetManifest:
    root: Path
    n_traj: int
    N: int
    d_u: int
    d_y: int
    m: int
    config: dict
    shards: list
    stats_file: str = "stats.json"
    content_digest: str = ""
    schema_version: int = SCHEMA_VERSION

    @property
    def horizon(self) -> int:
        return self.N - self.m

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "counts": {"n_traj": self.n_traj, "N": self.N, "d_u": self.d_u, "d_y": self.d_y},
            "split": {"m": self.m, "horizon": self.horizon},
            "config": self.config,
            "shards": self.shards,
            "stats": self.stats_file,
            "content_digest": self.content_digest,
        }

    def save(self):
        _atomic_write(self.root / "manifest.json", json.dumps(self.to_dict(), indent=2, sort_keys=True).encode())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
        if d.get("schema_version") != SCHEMA_VERSION:
            raise IoFailure(f"unsupported manifest schema {d.get('schema_version')}")
        c = d["counts"]
        return cls(
            root=path.parent, n_traj=c["n_traj"], N=c["N"], d_u=c["d_u"], d_y=c["d_y"],
            m=d["split"]["m"], config=d["config"], shards=d["shards"], stats_file=d["stats"],
            content_digest=d.get("content_digest", ""),
        )

    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig.model_validate(self.config)

    def load_stats(self) -> NormalizationStats:
        p = self.root / self.stats_file
        if not p.exists():
            raise StatsMissing(f"no stats file at {p}")
        return NormalizationStats.from_dict(json.loads(p.read_text()))

    def digest(self) -> str:
        """Content hash: FNV-1a over every trajectory payload in index order.

        Shard headers are excluded, so the value does not depend on the shard size.
        """
        if not self.content_digest:
            raise IoFailure("manifest carries no content digest")
        return self.content_digest


FNV_OFFSET = 0xCBF29CE484222325


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a; pass a previous result as ``h`` to hash a concatenation incrementally."""
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def trajectory_rng(master_seed: int, index: int, retry: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, index, retry])))


def make_trajectory(
    profile: RandomizationProfile,
    system: SystemClassConfig,
    N: int,
    dt: float,
    master_seed: int,
    index: int,
    max_retries: int = 16,
) -> Trajectory:
    """Sample a system and excitation from ``(master_seed, index)`` and simulate it.

    Diverged or non-finite rollouts are redrawn with the retry counter folded into the seed.
    """
    for retry in range(max_retries + 1):
        rng = trajectory_rng(master_seed, index, retry)
        spec = sample_system(system, rng)
        u, _ = render_inputs(profile, system.d_u, N, dt, rng)
        try:
            y = simulate(spec, u, dt)
        except NumericalDivergence:
            continue
        u32, y32 = u.astype(np.float32), y.astype(np.float32)
        if np.all(np.isfinite(u32)) and np.all(np.isfinite(y32)):
            meta = {"traj_index": index, "seed": [master_seed, index, retry], "system": spec.summary_hash()}
            return Trajectory(u32, y32, meta)
    raise NumericalDivergence(f"trajectory {index} diverged on all {max_retries + 1} draws")


def encode_shard(trajs: list[Trajectory], N: int, d_u: int, d_y: int) -> bytes:
    parts = [_HEADER.pack(MAGIC, SHARD_VERSION, len(trajs), N, d_u, d_y)]
    for tr in trajs:
        parts.append(np.ascontiguousarray(tr.u, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(tr.y, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_shard(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(data) < _HEADER.size:
        raise IoFailure("shard too short")
    magic, version, n, N, d_u, d_y = _HEADER.unpack_from(data)
    if magic != MAGIC or version != SHARD_VERSION:
        raise IoFailure(f"bad shard header {magic!r} v{version}")
    stride = N * (d_u + d_y)
    if len(data) != _HEADER.size + 4 * n * stride:
        raise IoFailure("shard length does not match its header")
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(n, stride)
    u = flat[:, : N * d_u].reshape(n, N, d_u).astype(np.float32)
    y = flat[:, N * d_u :].reshape(n, N, d_y).astype(np.float32)
    return u, y


def _shard_job(args) -> tuple[bytes, list]:
    cfg_json, start, stop = args
    cfg = DatasetConfig.model_validate_json(cfg_json)
    trajs = [
        make_trajectory(cfg.profile, cfg.system, cfg.N, cfg.dt, cfg.seed, i, cfg.max_retries)
        for i in range(start, stop)
    ]
    retried = {str(t.meta["traj_index"]): t.meta["seed"][2] for t in trajs if t.meta["seed"][2]}
    return encode_shard(trajs, cfg.N, cfg.d_u, cfg.d_y), retried


def generate_dataset(config: DatasetConfig, out_dir, workers: int = 1) -> DatasetManifest:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    if not isinstance(config, DatasetConfig):
        raise ConfigInvalid("generate_dataset expects a DatasetConfig")

    ranges = [(s, min(s + config.shard_size, config.n_traj)) for s in range(0, config.n_traj, config.shard_size)]
    jobs = [(config.model_dump_json(), a, b) for a, b in ranges]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_shard_job, jobs))
    else:
        results = [_shard_job(j) for j in jobs]

    shards = []
    content = FNV_OFFSET
    for k, ((a, b), (blob, retried)) in enumerate(zip(ranges, results)):
        name = f"shard_{k:05d}.bin"
        _atomic_write(out / name, blob)
        shards.append({"file": name, "start": a, "stop": b, "digest": f"{fnv1a64(blob):016x}", "resampled": retried})
        content = fnv1a64(memoryview(blob)[_HEADER.size :], content)

    manifest = DatasetManifest(
        root=out, n_traj=config.n_traj, N=config.N, d_u=config.d_u, d_y=config.d_y, m=config.m,
        config=config.model_dump(mode="json"), shards=shards, content_digest=f"{content:016x}",
    )
    manifest.save()
    if config.n_traj:
        stats = compute_stats(manifest)
        _atomic_write(out / manifest.stats_file, json.dumps(stats.to_dict(), indent=2).encode())
    log.info("wrote %d trajectories in %d shards to %s", config.n_traj, len(shards), out)
    return manifest


def read_shard(manifest: DatasetManifest, shard: dict) -> tuple[np.ndarray, np.ndarray]:
    path = manifest.root / shard["file"]
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read shard {path}: {exc}") from exc
    if f"{fnv1a64(data):016x}" != shard["digest"]:
        raise DigestMismatch(f"digest mismatch for {path}")
    return decode_shard(data)


def load_arrays(manifest: DatasetManifest) -> tuple[np.ndarray, np.ndarray]:
    """All trajectories as ``(n_traj, N, d_u)`` and ``(n_traj, N, d_y)`` float32 arrays."""
    us, ys = [], []
    for shard in manifest.shards:
        u, y = read_shard(manifest, shard)
        us.append(u)
        ys.append(y)
    if not us:
        return (np.zeros((0, manifest.N, manifest.d_u), np.float32), np.zeros((0, manifest.N, manifest.d_y), np.float32))
    return np.concatenate(us), np.concatenate(ys)


def _channel_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
    mean = flat.mean(axis=0)
    std = np.sqrt(((flat - mean) ** 2).mean(axis=0))
    return mean, np.maximum(std, STD_FLOOR)


def stats_from_arrays(u: np.ndarray, y: np.ndarray) -> NormalizationStats:
    if u.size == 0:
        raise StatsMissing("cannot compute statistics of an empty dataset")
    um, us = _channel_stats(u)
    ym, ys = _channel_stats(y)
    return NormalizationStats(um, us, ym, ys)


def compute_stats(manifest: DatasetManifest) -> NormalizationStats:
    return stats_from_arrays(*load_arrays(manifest))


def normalize(traj: Trajectory, stats: Optional[NormalizationStats]) -> Trajectory:
    if stats is None:
        raise StatsMissing("normalize needs statistics")
    u = ((traj.u - stats.u_mean) / stats.u_std).astype(traj.u.dtype)
    y = ((traj.y - stats.y_mean) / stats.y_std).astype(traj.y.dtype)
    return Trajectory(u, y, dict(traj.meta))


def denormalize(traj: Trajectory, stats: Optional[NormalizationStats]) -> Trajectory:
    if stats is None:
        raise StatsMissing("denormalize needs statistics")
    u = (traj.u * stats.u_std + stats.u_mean).astype(traj.u.dtype)
    y = (traj.y * stats.y_std + stats.y_mean).astype(traj.y.dtype)
    return Trajectory(u, y, dict(traj.meta))


def split(traj: Trajectory, m: int):
    """Return ``((u[:m], y[:m]), (u[m:], y[m:]))``."""
    n = traj.u.shape[0]
    if not (0 < m < n):
        raise BadSplit(f"need 0 < m < n, got m={m}, n={n}")
    return (traj.u[:m], traj.y[:m]), (traj.u[m:], traj.y[m:])


def rejoin(context, future) -> Trajectory:
    return Trajectory(np.concatenate([context[0], future[0]]), np.concatenate([context[1], future[1]]))


@dataclass
class Batch:
    u: torch.Tensor  # (B, N, d_u), normalized
    y: torch.Tensor  # (B, N, d_y), normalized
    m: int
    indices: np.ndarray

    @property
    def ctx_u(self):
        return self.u[:, : self.m]

    @property
    def ctx_y(self):
        return self.y[:, : self.m]

    @property
    def fut_u(self):
        return self.u[:, self.m :]

    @property
    def fut_y(self):
        return self.y[:, self.m :]


def normalized_tensors(u: np.ndarray, y: np.ndarray, stats: NormalizationStats) -> tuple[torch.Tensor, torch.Tensor]:
    un = ((u - stats.u_mean) / stats.u_std).astype(np.float32)
    yn = ((y - stats.y_mean) / stats.y_std).astype(np.float32)
    return torch.from_numpy(un), torch.from_numpy(yn)


def load_batches(
    manifest: DatasetManifest,
    batch_size: int = 64,
    shuffle_seed: int = 0,
    epoch: int = 0,
    stats: Optional[NormalizationStats] = None,
    arrays: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> Iterator[Batch]:
    """Yield full batches in a seeded per-epoch order; the trailing partial batch is dropped."""
    if stats is None:
        stats = manifest.load_stats()
    u, y = arrays if arrays is not None else load_arrays(manifest)
    U, Y = normalized_tensors(u, y, stats)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([shuffle_seed, epoch])))
    order = rng.permutation(len(U))
    for b in range(len(U) // batch_size):
        idx = order[b * batch_size : (b + 1) * batch_size]
        t = torch.from_numpy(idx)
        yield Batch(U[t], Y[t], manifest.m, idx)
