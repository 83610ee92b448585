import csv
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from prunekit.cli import main

GOLDEN = Path(__file__).parent / "data" / "cifar10_stepped_epoch_lr.csv"


@pytest.fixture
def runner():
    return CliRunner()


def write_config(tmp_path, name="config.json", **extra):
    d = {
        "model": {"input_shape": [2], "layers": [
            {"kind": "dense", "units": 8}, {"kind": "relu"},
            {"kind": "dense", "units": 2}]},
        "data": {"source": {"kind": "blobs", "n_samples": 40, "n_classes": 2,
                            "noise": 0.3, "seed": 3},
                 "train_fraction": 0.5, "split_seed": 0},
        "pipeline": "dense",
        "batch_size": 20,
        "epochs": 4,
        "schedule": {"kind": "linear", "initial_lr": 0.1},
    }
    d.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(d), encoding="utf-8")
    return path


def test_train_writes_outputs(tmp_path, runner):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    result = runner.invoke(main, ["train", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "trace.jsonl").exists()
    assert (out / "result.json").exists()
    assert (out / "checkpoints" / "final.npz").exists()


def test_experiment_and_prune_roundtrip(tmp_path, runner):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    result = runner.invoke(main, ["train", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 0, result.output
    ckpt = out / "checkpoints" / "final.npz"
    pruned_dir = tmp_path / "pruned"
    result = runner.invoke(main, ["prune", "--checkpoint", str(ckpt),
                                  "--sparsity", "0.5", "--out", str(pruned_dir)])
    assert result.exit_code == 0, result.output
    assert "sparsity=0.5" in result.output
    assert (pruned_dir / "pruned.npz").exists()
    with open(pruned_dir / "kept_per_layer.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["layer", "kept", "total", "sparsity"]
    assert len(rows) == 3


def test_experiment_pipeline_summary(tmp_path, runner):
    cfg = write_config(tmp_path, pipeline="one_shot_imp", epochs=6,
                       sparsity={"target": 0.5},
                       retrain={"scheme": "allr", "epochs": 2, "cycles": 1})
    out = tmp_path / "exp"
    result = runner.invoke(main, ["experiment", "--config", str(cfg),
                                  "--out", str(out), "--seed", "5"])
    assert result.exit_code == 0, result.output
    payload = json.loads((out / "result.json").read_text())
    assert payload["seed"] == 5
    assert payload["stability"], "pruning events must produce stability records"
    assert payload["sparsity"] == pytest.approx(0.5, abs=0.02)


def test_grid_cli(tmp_path, runner):
    base = json.loads(write_config(tmp_path).read_text())
    grid_doc = {"base": base, "overrides": {"schedule.initial_lr": [0.05, 0.1]},
                "seeds": [0, 1]}
    grid_path = tmp_path / "grid.json"
    grid_path.write_text(json.dumps(grid_doc))
    out = tmp_path / "grid_out"
    result = runner.invoke(main, ["grid", "--config", str(grid_path),
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "results.csv").exists()
    assert (out / "best.json").exists()
    traces = list((out / "traces").iterdir())
    assert len(traces) == 4  # 2 cells x 2 seeds, raw traces retained

    reported = tmp_path / "rereport"
    result = runner.invoke(main, ["report", "--input", str(out / "results.json"),
                                  "--format", "plotdata", "--out", str(reported)])
    assert result.exit_code == 0, result.output
    assert (reported / "accuracy_vs_sparsity.csv").exists()


def test_schedule_dump_matches_golden_file(tmp_path, runner):
    cfg = write_config(
        tmp_path, epochs=200,
        schedule={"kind": "stepped", "initial_lr": 0.1,
                  "milestones": [0.45, 0.9], "decay_factors": [0.1, 0.1]})
    out = tmp_path / "sched"
    result = runner.invoke(main, ["schedule-dump", "--config", str(cfg),
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    produced = (out / "schedule.csv").read_text()
    assert produced == GOLDEN.read_text()


def test_schedule_dump_translated_scheme(tmp_path, runner):
    cfg = write_config(
        tmp_path, epochs=200,
        retrain={"scheme": "ft", "epochs": 60, "cycles": 1},
        schedule={"kind": "stepped", "initial_lr": 0.1,
                  "milestones": [0.45, 0.9], "decay_factors": [0.1, 0.1]})
    out = tmp_path / "sched"
    result = runner.invoke(main, ["schedule-dump", "--config", str(cfg),
                                  "--scheme", "ft", "--out", str(out)])
    assert result.exit_code == 0, result.output
    rows = (out / "schedule.csv").read_text().strip().splitlines()[1:]
    values = {row.split(",")[1] for row in rows}
    assert len(rows) == 60
    assert values == {repr(0.1 * 0.1 * 0.1)}


def test_cli_rejects_bad_config(tmp_path, runner):
    path = tmp_path / "bad.json"
    path.write_text('{"pipeline": "dense"}')
    result = runner.invoke(main, ["train", "--config", str(path)])
    assert result.exit_code != 0
