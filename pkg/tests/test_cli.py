import csv
import json

import pytest

from icldyn import cli
from icldyn.dataset import DatasetManifest
from icldyn.errors import NonFiniteLoss

SMALL = ["--set", "dataset.n_traj=12", "--set", "dataset.N=32", "--set", "dataset.m=24",
         "--set", "diffusion.T=6", "--set", "diffusion.warm_start_k=2",
         "--set", "train.epochs=1", "--set", "train.batch_size=4",
         "--set", "eval.n_scenarios=2", "--set", "eval.freq_grid=[0.3,0.7]", "--set", "eval.k_list=[2,6]",
         "--set", "eval.n_repeats=1", "--set", "bench.n_scenarios=2", "--set", "bench.warmup=0"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen", "--out", str(root / "data"), *SMALL]) == 0
    ckpts = {}
    for arch in ("RoboMorph", "CDT"):
        assert cli.main(["train", "--data", str(root / "data"), "--out", str(root / arch),
                         *SMALL, "--set", f"model.arch={arch}"]) == 0
        ckpts[arch] = next((root / arch).glob("ckpt_*.bin"))
    return root, ckpts


def test_gen_desk_preset(tmp_path, capsys):
    code, res, _ = run(capsys, "gen", "--out", str(tmp_path), "--set", "dataset.n_traj=4")
    assert code == 0 and res["n_traj"] == 4
    man = DatasetManifest.load(tmp_path / "manifest.json")
    assert (man.N, man.m) == (128, 96)
    snap = json.loads((tmp_path / "config.resolved.json").read_text())
    assert snap["dataset"]["N"] == 128 and snap["dataset"]["n_traj"] == 4


def test_gen_is_rerunnable(pipeline, tmp_path):
    root, _ = pipeline
    assert cli.main(["gen", "--out", str(tmp_path), *SMALL, "--workers", "2"]) == 0
    for a in sorted((root / "data").glob("shard_*")):
        assert (tmp_path / a.name).read_bytes() == a.read_bytes()


def test_large_dataset_warning(tmp_path, capsys, monkeypatch):
    class Stub:
        root, n_traj = tmp_path, 200_000

    monkeypatch.setattr(cli, "generate_dataset", lambda cfg, out, workers=1: Stub)
    code, _, err = run(capsys, "gen", "--out", str(tmp_path), "--set", "preset=paper")
    assert code == 0 and "warning" in err and "3500000" in err
    code, _, err = run(capsys, "gen", "--out", str(tmp_path), "--set", "dataset.n_traj=100000")
    assert code == 0 and "warning" not in err


def test_unknown_key_exit_1(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"modle": {"arch": "CDT"}}))
    code, _, err = run(capsys, "gen", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 1
    line = json.loads(err.strip().splitlines()[-1])
    assert line["exit_code"] == 1 and "modle" in line["message"]


def test_missing_paths_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o"))
    assert code == 2 and json.loads(err.strip())["exit_code"] == 2
    code, _, _ = run(capsys, "eval", "--ckpt", str(tmp_path / "nope.bin"), "--out", str(tmp_path / "o"))
    assert code == 2
    code, _, _ = run(capsys, "gen", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o"))
    assert code == 2


def test_numerical_failure_exit_3(tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise NonFiniteLoss("non-finite loss at step 0")

    monkeypatch.setattr(cli, "train", boom)
    assert cli.main(["gen", "--out", str(tmp_path / "d"), *SMALL]) == 0
    capsys.readouterr()
    code, _, err = run(capsys, "train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "o"), *SMALL)
    assert code == 3 and json.loads(err.strip()) == {"error": "NonFiniteLoss", "exit_code": 3, "message": "non-finite loss at step 0"}


def test_divergent_generation_exit_3(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "--out", str(tmp_path), *SMALL,
                       "--set", "dataset.system.blowup=1e-9", "--set", "dataset.max_retries=0")
    assert code == 3 and json.loads(err.strip())["exit_code"] == 3


def test_train_writes_snapshot_and_reproduces(pipeline, tmp_path, capsys):
    root, ckpts = pipeline
    snap = root / "RoboMorph" / "config.resolved.json"
    assert json.loads(snap.read_text())["model"]["arch"] == "RoboMorph"
    # The snapshot alone reproduces the run.
    code, res, _ = run(capsys, "train", str(snap), "--data", str(root / "data"), "--out", str(tmp_path))
    assert code == 0
    assert (tmp_path / ckpts["RoboMorph"].name).read_bytes() == ckpts["RoboMorph"].read_bytes()


def test_seed_env_changes_run(pipeline, tmp_path, monkeypatch):
    root, ckpts = pipeline
    monkeypatch.setenv("ICL_DYN_SEED", "42")
    assert cli.main(["train", "--data", str(root / "data"), "--out", str(tmp_path), *SMALL]) == 0
    assert json.loads((tmp_path / "config.resolved.json").read_text())["train"]["seed"] == 42
    assert (tmp_path / ckpts["RoboMorph"].name).read_bytes() != ckpts["RoboMorph"].read_bytes()


def test_eval_reports(pipeline, tmp_path, capsys):
    root, ckpts = pipeline
    code, res, _ = run(capsys, "eval", "--ckpt", str(ckpts["CDT"]), "--out", str(tmp_path), *SMALL)
    assert code == 0
    names = sorted(p.split("/")[-1] for p in res["reports"])
    assert names == ["sweep_CDT.csv", "sweep_CDT.svg", "warmstart_CDT.csv", "warmstart_CDT.svg"]
    with open(tmp_path / "reports" / "warmstart_CDT.csv") as fh:
        assert [int(r["warm_start_k"]) for r in csv.DictReader(fh)] == [2, 6]
    code, res, _ = run(capsys, "eval", "--ckpt", str(ckpts["RoboMorph"]), "--out", str(tmp_path / "r"), *SMALL)
    assert code == 0 and len(res["reports"]) == 2


@pytest.mark.parametrize("from_data", [False, True])
def test_sample_csv(pipeline, tmp_path, capsys, from_data):
    root, ckpts = pipeline
    extra = ["--data", str(root / "data")] if from_data else []
    code, res, _ = run(capsys, "sample", "--ckpt", str(ckpts["RoboMorph"]), "--traj-index", "3",
                       "--out", str(tmp_path), *extra, *SMALL)
    assert code == 0
    with open(res["csv"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "u_0", "u_1", "y_true_0", "y_true_1", "y_pred_0", "y_pred_1"]
    assert len(rows) == 33
    assert rows[24][5:] == ["", ""] and all(v != "" for v in rows[25][5:])
    assert float(rows[2][0]) == pytest.approx(0.05)


def test_sample_regenerated_matches_dataset(pipeline, tmp_path, capsys):
    root, ckpts = pipeline
    a = cli.main(["sample", "--ckpt", str(ckpts["RoboMorph"]), "--traj-index", "5", "--out", str(tmp_path / "a")])
    b = cli.main(["sample", "--ckpt", str(ckpts["RoboMorph"]), "--traj-index", "5", "--out", str(tmp_path / "b"),
                  "--data", str(root / "data")])
    assert a == b == 0
    assert (tmp_path / "a" / "sample_5.csv").read_text() == (tmp_path / "b" / "sample_5.csv").read_text()
    capsys.readouterr()
    code, _, _ = run(capsys, "sample", "--ckpt", str(ckpts["RoboMorph"]), "--traj-index", "99",
                     "--out", str(tmp_path / "c"), "--data", str(root / "data"))
    assert code == 1


def test_bench(pipeline, tmp_path, capsys):
    root, ckpts = pipeline
    code, res, _ = run(capsys, "bench", "--ckpt", str(ckpts["RoboMorph"]), str(ckpts["CDT"]), "--out", str(tmp_path), *SMALL)
    assert code == 0
    with open(tmp_path / "reports" / "latency.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["model_id"], int(r["warm_start_k"])) for r in rows] == [("RoboMorph", 0), ("CDT", 2), ("CDT", 6)]


def test_parser_requires_out():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["gen"])
