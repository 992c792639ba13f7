"""Command-line entry point: ``icldyn {gen,train,eval,sample,bench}``.

Every subcommand takes an optional JSON config plus ``--set section.key=value`` overrides,
writes ``config.resolved.json`` next to its outputs and exits with 0 on success, 1 on bad
configuration, 2 on I/O problems and 3 on numerical failure. Errors are reported as one
JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import LARGE_DATASET, RunConfig, load_config
from .dataset import DatasetManifest, generate_dataset, load_arrays, make_trajectory
from .errors import ConfigInvalid, IcldynError, IoFailure
from .evaluation import (
    BenchConfig,
    LoadedModel,
    emit_report,
    frequency_sweep,
    latency_bench,
    predict_horizon,
    warmstart_degradation,
)
from .trainer import train

log = logging.getLogger("icldyn")


def _common(p: argparse.ArgumentParser):
    p.add_argument("config", nargs="?", default=None, help="JSON run config (defaults to the desk preset)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config entry, e.g. model.arch=CDT (repeatable)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icldyn", description="In-context dynamics prediction toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a sharded trajectory dataset")
    _common(p)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    _common(p)
    p.add_argument("--data", required=True, help="dataset directory (holds manifest.json)")

    p = sub.add_parser("eval", help="frequency sweep (and warm-start sweep for diffusion models)")
    _common(p)
    p.add_argument("--ckpt", required=True)

    p = sub.add_parser("sample", help="predict one trajectory and write it as CSV")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--traj-index", type=int, required=True)
    p.add_argument("--data", default=None, help="read the trajectory from this dataset instead of regenerating it")

    p = sub.add_parser("bench", help="single-trajectory latency of one or more checkpoints")
    _common(p)
    p.add_argument("--ckpt", required=True, nargs="+")
    return parser


def _manifest(path) -> DatasetManifest:
    p = Path(path)
    return DatasetManifest.load(p / "manifest.json" if p.is_dir() else p)


def cmd_gen(cfg: RunConfig, args) -> dict:
    if cfg.dataset.n_traj > LARGE_DATASET:
        print(f"warning: generating {cfg.dataset.n_traj} trajectories; this needs substantial disk and time",
              file=sys.stderr)
    manifest = generate_dataset(cfg.dataset, args.out, workers=args.workers)
    return {"manifest": str(Path(manifest.root) / "manifest.json"), "n_traj": manifest.n_traj}


def cmd_train(cfg: RunConfig, args) -> dict:
    manifest = _manifest(args.data)
    model_cfg = cfg.model.model_copy(update=dict(N=manifest.N, m=manifest.m, d_u=manifest.d_u, d_y=manifest.d_y))
    model_cfg = type(model_cfg).model_validate(model_cfg.model_dump())
    res = train(model_cfg, cfg.train, manifest, args.out, cfg.diffusion)
    return {"checkpoint": str(res.checkpoint), "final_loss": res.final_loss, "steps": res.steps}


def _bench(cfg: RunConfig) -> BenchConfig:
    return cfg.bench.model_copy(update={"stride": cfg.diffusion.warm_start_stride})


def cmd_eval(cfg: RunConfig, args) -> dict:
    ev = cfg.eval
    reports = Path(args.out) / "reports"
    lm = LoadedModel.from_checkpoint(args.ckpt)
    sweep = frequency_sweep(lm, freq_grid=ev.freq_grid, n_scenarios=ev.n_scenarios, master_seed=ev.seed,
                            workers=max(args.workers, ev.workers), samples_per_scenario=ev.samples_per_scenario)
    sweep.name = f"sweep_{lm.model_id}"
    files = [str(p) for p in emit_report(sweep, reports)]
    if lm.cfg.is_diffusion:
        ks = [k for k in ev.k_list if 1 <= k <= lm.diffusion.T]
        ws = warmstart_degradation(lm, ks, _bench(cfg))
        files += [str(p) for p in emit_report(ws, reports)]
    return {"reports": files}


def _sample_rows(cfg: RunConfig, args):
    lm = LoadedModel.from_checkpoint(args.ckpt)
    c, st = lm.cfg, lm.stats
    if args.data:
        u_all, y_all = load_arrays(_manifest(args.data))
        if not (0 <= args.traj_index < len(u_all)):
            raise ConfigInvalid(f"--traj-index {args.traj_index} outside [0, {len(u_all)})")
        u, y = u_all[args.traj_index], y_all[args.traj_index]
        dt = lm.dataset.dt
    else:
        if args.traj_index < 0:
            raise ConfigInvalid("--traj-index must be non-negative")
        ds = lm.dataset
        tr = make_trajectory(ds.profile, ds.system, ds.N, ds.dt, ds.seed, args.traj_index, ds.max_retries)
        u, y, dt = tr.u, tr.y, ds.dt
    un = torch.from_numpy(((u - st.u_mean) / st.u_std).astype(np.float32))[None]
    yn = torch.from_numpy(((y[: c.m] - st.y_mean) / st.y_std).astype(np.float32))[None]
    gen = torch.Generator().manual_seed(cfg.eval.seed)
    pred = predict_horizon(lm, un, yn, gen)[0].numpy().astype(np.float64) * st.y_std + st.y_mean
    return u, y, pred, dt, c


def cmd_sample(cfg: RunConfig, args) -> dict:
    u, y, pred, dt, c = _sample_rows(cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sample_{args.traj_index}.csv"
    header = (["t"] + [f"u_{i}" for i in range(c.d_u)] + [f"y_true_{i}" for i in range(c.d_y)]
              + [f"y_pred_{i}" for i in range(c.d_y)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(u)):
            p = [repr(float(v)) for v in pred[k - c.m]] if k >= c.m else [""] * c.d_y
            w.writerow([repr(k * dt)] + [repr(float(v)) for v in u[k]] + [repr(float(v)) for v in y[k]] + p)
    return {"csv": str(path)}


def cmd_bench(cfg: RunConfig, args) -> dict:
    report = latency_bench(args.ckpt, cfg.eval.n_repeats, _bench(cfg), cfg.diffusion.warm_start_k)
    report.name = "latency"
    return {"reports": [str(p) for p in emit_report(report, Path(args.out) / "reports")]}


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "sample": cmd_sample, "bench": cmd_bench}


def _error_line(exc: Exception, code: int) -> str:
    return json.dumps({"error": type(exc).__name__, "exit_code": code, "message": str(exc)})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        cfg.write_snapshot(args.out)
        result = COMMANDS[args.command](cfg, args)
    except IcldynError as exc:
        print(_error_line(exc, exc.exit_code), file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        err = ConfigInvalid(str(exc).splitlines()[0])
        print(_error_line(err, err.exit_code), file=sys.stderr)
        return err.exit_code
    except OSError as exc:
        err = IoFailure(str(exc))
        print(_error_line(err, err.exit_code), file=sys.stderr)
        return err.exit_code
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
