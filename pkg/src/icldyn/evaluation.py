"""Evaluation: RMSE frequency sweeps (ID vs OOD), warm-start degradation and latency benchmarks."""

from __future__ import annotations

import contextlib
import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence
from xml.etree import ElementTree as ET

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict

from .dataset import DatasetConfig, NormalizationStats, make_trajectory
from .diffusion import (
    DiffusionConfig,
    InpaintCondition,
    make_schedule,
    sample,
    shifted_prior,
    warm_start_sample,
)
from .errors import BadK, IoFailure, ShapeMismatch
from .models import ModelConfig, load_model
from .signals import RandomizationProfile
from .systems import SystemClassConfig

log = logging.getLogger(__name__)


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    freq_grid: Optional[list[float]] = None  # None: 8 points over 0.5x-2x the training band
    n_scenarios: int = 100
    seed: int = 1234
    k_list: list[int] = [5, 10, 20, 50, 100]
    n_repeats: int = 10
    samples_per_scenario: int = 1
    workers: int = 1


def default_freq_grid(profile: RandomizationProfile, points: int = 8) -> list[float]:
    lo, hi = profile.freq
    return [float(f) for f in np.linspace(0.5 * lo, 2.0 * hi, points)]


# ----------------------------------------------------------------------------- reports

@dataclass
class SweepRow:
    model_id: str
    frequency_hz: float
    signal_kind: str
    rmse_mean: float
    rmse_std: float
    n_scenarios: int
    in_distribution: bool


@dataclass
class LatencyRow:
    model_id: str
    warm_start_k: int
    wall_time_mean_ms: float
    wall_time_std_ms: float
    rmse_mean: float


@dataclass
class SweepReport:
    rows: list[SweepRow]
    id_band: Optional[tuple[float, float]] = None
    name: str = "sweep"
    row_type = SweepRow


@dataclass
class LatencyReport:
    rows: list[LatencyRow]
    name: str = "latency"
    row_type = LatencyRow

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.warm_start_k)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(v: str, typ):
    if typ in (bool, "bool"):
        return v == "true"
    if typ in (int, "int"):
        return int(v)
    if typ in (float, "float"):
        return float(v)
    return v


def write_csv(report, path) -> Path:
    path = Path(path)
    names = [f.name for f in fields(report.row_type)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in report.rows:
            w.writerow([_fmt(v) for v in astuple(row)])
    return path


def read_csv(path, row_type) -> list:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        flds = {f.name: f.type for f in fields(row_type)}
        if header != list(flds):
            raise IoFailure(f"unexpected CSV header {header}")
        return [row_type(*(_parse(v, flds[n]) for v, n in zip(line, header))) for line in r]


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def render_svg(report, width: int = 640, height: int = 400) -> str:
    """Standalone line plot: one polyline per model id; sweeps shade the ID band."""
    if isinstance(report, SweepReport):
        xs = lambda r: r.frequency_hz
        ys = lambda r: r.rmse_mean
        xlabel, ylabel = "frequency [Hz]", "RMSE"
    else:
        xs = lambda r: float(r.warm_start_k)
        ys = lambda r: r.wall_time_mean_ms
        xlabel, ylabel = "denoising steps k", "wall time [ms]"
    pad = 50
    all_x = [xs(r) for r in report.rows] or [0.0, 1.0]
    all_y = [ys(r) for r in report.rows] or [0.0, 1.0]
    band = getattr(report, "id_band", None)
    if band:
        all_x += list(band)
    x0, x1 = min(all_x), max(all_x)
    y0, y1 = 0.0, max(all_y) * 1.05 or 1.0
    x1 = x1 if x1 > x0 else x0 + 1.0

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height))
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    if band:
        ET.SubElement(
            svg, "rect", {"class": "id-band", "data-low": repr(float(band[0])), "data-high": repr(float(band[1]))},
            x=f"{px(band[0]):.2f}", y=str(pad), width=f"{px(band[1]) - px(band[0]):.2f}",
            height=str(height - 2 * pad), fill="#dddddd",
        )
    ET.SubElement(svg, "line", x1=str(pad), y1=str(height - pad), x2=str(width - pad), y2=str(height - pad), stroke="black")
    ET.SubElement(svg, "line", x1=str(pad), y1=str(pad), x2=str(pad), y2=str(height - pad), stroke="black")
    ET.SubElement(svg, "text", {"text-anchor": "middle"}, x=str(width // 2), y=str(height - 10)).text = xlabel
    ET.SubElement(svg, "text", x="12", y=str(pad - 15)).text = ylabel
    ET.SubElement(svg, "text", x=str(pad), y=str(height - pad + 15)).text = f"{x0:.3g}"
    ET.SubElement(svg, "text", {"text-anchor": "end"}, x=str(width - pad), y=str(height - pad + 15)).text = f"{x1:.3g}"
    ET.SubElement(svg, "text", {"text-anchor": "end"}, x=str(pad - 5), y=str(pad)).text = f"{y1:.3g}"

    models = list(dict.fromkeys(r.model_id for r in report.rows))
    for i, mid in enumerate(models):
        pts = sorted((xs(r), ys(r)) for r in report.rows if r.model_id == mid)
        colour = _PALETTE[i % len(_PALETTE)]
        ET.SubElement(
            svg, "polyline", {"data-model": mid}, fill="none", stroke=colour, points=" ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        )
        ET.SubElement(svg, "text", x=str(width - pad + 5 - 120), y=str(pad + 15 * i), fill=colour).text = mid
    return ET.tostring(svg, encoding="unicode")


def emit_report(report, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = write_csv(report, out / f"{report.name}.csv")
        svg_path = out / f"{report.name}.svg"
        svg_path.write_text(render_svg(report))
    except OSError as exc:
        raise IoFailure(f"cannot write report to {out}: {exc}") from exc
    return csv_path, svg_path


# ----------------------------------------------------------------------------- metrics

def rmse(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs truth {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


# ----------------------------------------------------------------------------- inference

@dataclass
class LoadedModel:
    model: torch.nn.Module
    cfg: ModelConfig
    config: dict
    stats: NormalizationStats
    diffusion: DiffusionConfig
    model_id: str = ""

    @classmethod
    def from_checkpoint(cls, path, model_id: Optional[str] = None) -> "LoadedModel":
        model, cfg, config, stats = load_model(path)
        dcfg = DiffusionConfig.model_validate(config.get("diffusion") or DiffusionConfig.for_arch(cfg.arch, T=cfg.T).model_dump())
        return cls(model, cfg, config, stats, dcfg, model_id or cfg.arch)

    @property
    def dataset(self) -> DatasetConfig:
        return DatasetConfig.model_validate(self.config["dataset"])


def predict_horizon(
    lm: LoadedModel,
    u: torch.Tensor,
    y_ctx: torch.Tensor,
    gen: Optional[torch.Generator] = None,
    k: Optional[int] = None,
    prior: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Normalized horizon prediction ``(B, N - m, d_y)`` from normalized ``u (B, N, d_u)`` and ``y_ctx (B, m, d_y)``.

    Diffusion models draw one sample; with ``k`` set they warm-start from ``prior`` (a
    normalized horizon estimate) and run only ``k`` reverse steps.
    """
    c, model = lm.cfg, lm.model
    with torch.inference_mode():
        if c.arch == "RoboMorph":
            return model(u[:, : c.m], y_ctx, u[:, c.m :])
        sched = make_schedule(lm.diffusion.T, lm.diffusion.schedule, lm.diffusion.clip_x0)
        gen = gen if gen is not None else torch.Generator().manual_seed(0)
        B = u.shape[0]
        if c.arch == "Diffuser":
            y_known = torch.cat([y_ctx, y_ctx.new_zeros(B, c.horizon, c.d_y)], dim=1)
            known = torch.cat([u, y_known], dim=-1)
            mask = torch.zeros_like(known, dtype=torch.bool)
            mask[:, :, : c.d_u] = True
            mask[:, : c.m, c.d_u :] = True
            cond = InpaintCondition(known, mask)
            if k is None:
                x = sample(model, cond, known.shape, sched, gen, dtype=known.dtype)
            else:
                joint_prior = known.clone()
                joint_prior[:, c.m :, c.d_u :] = prior
                x = warm_start_sample(model, joint_prior, k, cond, sched, gen)
            return x[:, c.m :, c.d_u :]
        cond = model.condition(u, y_ctx)
        if k is None:
            return sample(model, cond, (B, c.horizon, c.d_y), sched, gen, dtype=u.dtype)
        return warm_start_sample(model, prior, k, cond, sched, gen)


@dataclass
class Scenarios:
    u: np.ndarray  # (S, N, d_u) raw units
    y: np.ndarray  # (S, N, d_y) raw units

    def normalized(self, stats: NormalizationStats):
        un = torch.from_numpy(((self.u - stats.u_mean) / stats.u_std).astype(np.float32))
        yn = torch.from_numpy(((self.y - stats.y_mean) / stats.y_std).astype(np.float32))
        return un, yn


def _scenario_job(args):
    profile_json, system_json, N, dt, seed, index = args
    profile = RandomizationProfile.model_validate_json(profile_json)
    system = SystemClassConfig.model_validate_json(system_json)
    tr = make_trajectory(profile, system, N, dt, seed, index)
    return tr.u, tr.y


def make_scenarios(
    profile: RandomizationProfile, system: SystemClassConfig, N: int, dt: float, seed: int, n: int, workers: int = 1
) -> Scenarios:
    jobs = [(profile.model_dump_json(), system.model_dump_json(), N, dt, seed, i) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            res = list(pool.map(_scenario_job, jobs, chunksize=max(1, n // (4 * workers))))
    else:
        res = [_scenario_job(j) for j in jobs]
    return Scenarios(np.stack([r[0] for r in res]), np.stack([r[1] for r in res]))


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _scenario_rmses(lm: LoadedModel, sc: Scenarios, gen: torch.Generator, samples: int = 1) -> np.ndarray:
    c, st = lm.cfg, lm.stats
    u, y = sc.normalized(st)
    preds = []
    for _ in range(samples):
        preds.append(predict_horizon(lm, u, y[:, : c.m], gen).numpy().astype(np.float64))
    pred = np.mean(preds, axis=0) * st.y_std + st.y_mean
    truth = sc.y[:, c.m :].astype(np.float64)
    return np.sqrt(np.mean((pred - truth) ** 2, axis=(1, 2)))


def frequency_sweep(
    checkpoint,
    class_config: Optional[SystemClassConfig] = None,
    freq_grid: Optional[Sequence[float]] = None,
    n_scenarios: int = 100,
    master_seed: int = 1234,
    model_id: Optional[str] = None,
    workers: int = 1,
    samples_per_scenario: int = 1,
) -> SweepReport:
    """RMSE over fresh scenarios with the excitation pinned to each grid frequency.

    The training profile recorded in the checkpoint fixes the signal kind and the ID band.
    Scenario draws depend only on ``master_seed`` and the grid position, so every model
    swept with the same seed sees the same trajectories.
    """
    lm = checkpoint if isinstance(checkpoint, LoadedModel) else LoadedModel.from_checkpoint(checkpoint, model_id)
    ds = lm.dataset
    system = class_config or ds.system
    profile = ds.profile
    grid = list(freq_grid) if freq_grid else default_freq_grid(profile)
    lo, hi = profile.freq
    rows = []
    for gi, f in enumerate(grid):
        sc = make_scenarios(profile.pinned(f), system, ds.N, ds.dt, _derived_seed(master_seed, gi), n_scenarios, workers)
        gen = torch.Generator().manual_seed(_derived_seed(master_seed, gi, 1))
        errs = _scenario_rmses(lm, sc, gen, samples_per_scenario)
        rows.append(SweepRow(lm.model_id, float(f), profile.signal.value, float(errs.mean()), float(errs.std()), n_scenarios, bool(lo <= f <= hi)))
        log.info("%s f=%.3f rmse=%.4g", lm.model_id, f, errs.mean())
    return SweepReport(rows, id_band=(lo, hi))


@contextlib.contextmanager
def single_thread():
    n = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(n)


class BenchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_scenarios: int = 20
    seed: int = 1234
    stride: int = 8
    warmup: int = 3


def _bench_scenarios(lm: LoadedModel, bench: BenchConfig) -> Scenarios:
    ds = lm.dataset
    return make_scenarios(ds.profile, ds.system, ds.N, ds.dt, _derived_seed(bench.seed, 7), bench.n_scenarios)


def _timed_prediction(lm, u, yc, prior, k, seed):
    gen = torch.Generator().manual_seed(seed)
    t0 = time.perf_counter()
    pred = predict_horizon(lm, u, yc, gen, k=k, prior=prior)
    return time.perf_counter() - t0, pred


def warmstart_degradation(checkpoint, k_list: Optional[Sequence[int]] = None, bench: Optional[BenchConfig] = None, model_id=None) -> LatencyReport:
    """RMSE and single-trajectory wall time of warm-started sampling for each ``k``.

    The prior is the true horizon advanced by ``bench.stride`` steps with its last value held.
    ``k = T`` is plain ancestral sampling under the same per-scenario seeds.
    """
    lm = checkpoint if isinstance(checkpoint, LoadedModel) else LoadedModel.from_checkpoint(checkpoint, model_id)
    if not lm.cfg.is_diffusion:
        raise BadK("warm-start degradation needs a diffusion checkpoint")
    bench = bench or BenchConfig()
    T = lm.diffusion.T
    k_list = sorted(set(k_list or [lm.diffusion.warm_start_k, T]))
    if any(not (1 <= k <= T) for k in k_list):
        raise BadK(f"k_list {k_list} must lie in [1, {T}]")
    sc = _bench_scenarios(lm, bench)
    u, y = sc.normalized(lm.stats)
    m, st = lm.cfg.m, lm.stats
    priors = shifted_prior(y[:, m:], bench.stride)
    rows = []
    with single_thread():
        for _ in range(bench.warmup):
            _timed_prediction(lm, u[:1], y[:1, :m], priors[:1], k_list[0], 0)
        for k in k_list:
            times, errs = [], []
            for s in range(len(u)):
                dt, pred = _timed_prediction(lm, u[s : s + 1], y[s : s + 1, :m], priors[s : s + 1], k, _derived_seed(bench.seed, s))
                times.append(dt * 1e3)
                errs.append(rmse(pred[0].numpy() * st.y_std + st.y_mean, sc.y[s, m:]))
            rows.append(LatencyRow(lm.model_id, int(k), float(np.mean(times)), float(np.std(times)), float(np.mean(errs))))
    return LatencyReport(rows, name=f"warmstart_{lm.model_id}")


def latency_bench(checkpoints: Sequence, n_repeats: int = 10, bench: Optional[BenchConfig] = None, warm_start_k: Optional[int] = None) -> LatencyReport:
    """Single-trajectory inference time per model after warm-up calls.

    Deterministic models report ``warm_start_k = 0`` (one forward pass); diffusion models
    report the full chain (``k = T``) and the warm-started chain.
    """
    bench = bench or BenchConfig()
    rows = []
    for ck in checkpoints:
        lm = ck if isinstance(ck, LoadedModel) else LoadedModel.from_checkpoint(ck)
        sc = make_scenarios(lm.dataset.profile, lm.dataset.system, lm.dataset.N, lm.dataset.dt, _derived_seed(bench.seed, 7), 1)
        u, y = sc.normalized(lm.stats)
        m, st = lm.cfg.m, lm.stats
        prior = shifted_prior(y[:, m:], bench.stride)
        if lm.cfg.is_diffusion:
            ks = sorted({lm.diffusion.T, warm_start_k or lm.diffusion.warm_start_k})
        else:
            ks = [0]
        with single_thread():
            for k in ks:
                kk = None if k in (0,) else k
                for w in range(bench.warmup):
                    _timed_prediction(lm, u, y[:, :m], prior, kk, w)
                times, errs = [], []
                for r in range(n_repeats):
                    dt, pred = _timed_prediction(lm, u, y[:, :m], prior, kk, _derived_seed(bench.seed, r))
                    times.append(dt * 1e3)
                    errs.append(rmse(pred[0].numpy() * st.y_std + st.y_mean, sc.y[0, m:]))
                rows.append(LatencyRow(lm.model_id, int(k), float(np.mean(times)), float(np.std(times)), float(np.mean(errs))))
    return LatencyReport(rows)
