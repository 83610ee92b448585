"""Command-line front door.

Subcommands: train, prune, experiment, grid, schedule-dump, report.
The default output directory comes from $PRUNEKIT_OUT (falling back to
./runs). All files are UTF-8; CSVs carry a header row; traces are JSON lines.
"""

from __future__ import annotations

import json
import os
from dataclasses import replace

import click
import numpy as np

from . import nn
from .config import config_hash, parse_config
from .grid import parse_grid, row_from_dict, run_grid
from .metrics import count_flops, sparsity_report
from .pipeline import _base_schedule, run_experiment
from .pruning import apply_mask, current_mask, detect_layer_collapse, select_mask
from .report import dump_schedule_csv, emit_report, rows_to_csv, rows_to_json
from .schedules import SCHEMES, translate


def _default_out():
    return os.environ.get("PRUNEKIT_OUT", "runs")


def _load_config(path, seed):
    with open(path, encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _write_result(out_dir, cfg, result):
    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, "trace.jsonl")
    result.trace.to_jsonl(trace_path)
    payload = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "pipeline": cfg.pipeline,
        "accuracy": result.accuracy,
        "loss": result.loss,
        "sparsity": result.sparsity,
        "speedup": result.speedup,
        "flops": result.flops,
        "collapsed_layers": result.collapsed_layers,
        "stability": [
            {"accuracy_before": pre, "accuracy_after": post}
            for pre, post in result.trace.stability_pairs()
        ],
    }
    result_path = os.path.join(out_dir, "result.json")
    with open(result_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return result_path


@click.group()
def main():
    """Magnitude pruning and budgeted retraining experiment harness."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", default=None, help="Output directory.")
def train(config_path, seed, out_dir):
    """Dense training only; writes a checkpoint, trace, and result summary."""
    cfg = _load_config(config_path, seed)
    cfg = replace(cfg, pipeline="dense")
    out_dir = out_dir or os.path.join(_default_out(), f"train_{config_hash(cfg)}_{cfg.seed}")
    os.makedirs(out_dir, exist_ok=True)
    result = run_experiment(cfg, checkpoint_dir=os.path.join(out_dir, "checkpoints"))
    path = _write_result(out_dir, cfg, result)
    click.echo(f"accuracy={result.accuracy:.4f} loss={result.loss:.4f} -> {path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", default=None, help="Output directory.")
def experiment(config_path, seed, out_dir):
    """Run the configured pipeline end to end."""
    cfg = _load_config(config_path, seed)
    out_dir = out_dir or os.path.join(_default_out(), f"{cfg.pipeline}_{config_hash(cfg)}_{cfg.seed}")
    os.makedirs(out_dir, exist_ok=True)
    result = run_experiment(cfg, checkpoint_dir=os.path.join(out_dir, "checkpoints"))
    path = _write_result(out_dir, cfg, result)
    click.echo(f"accuracy={result.accuracy:.4f} sparsity={result.sparsity:.4f} "
               f"speedup={result.speedup:.2f} -> {path}")


@main.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--criterion", default="global", help="Selection criterion.")
@click.option("--sparsity", "target", type=float, required=True, help="Target sparsity.")
@click.option("--out", "out_dir", default=None, help="Output directory.")
def prune(checkpoint_path, criterion, target, out_dir):
    """One-shot hard pruning of a saved checkpoint."""
    net, step, cycle, rng_state = nn.load_checkpoint(checkpoint_path)
    prunable = net.prunable_weights()
    mask = select_mask([p.effective_value() for _, _, p in prunable], criterion,
                       target, [layer.kind for _, layer, _ in prunable])
    apply_mask(net, mask, nn.HARD)
    out_dir = out_dir or _default_out()
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "pruned.npz")
    nn.save_checkpoint(out_path, net, step=step, cycle=cycle, rng_state=rng_state)
    report = count_flops(net)
    summary = sparsity_report(current_mask(net))
    collapsed = detect_layer_collapse(current_mask(net))
    click.echo(f"sparsity={summary['overall']:.4f} speedup={report.speedup:.2f} "
               f"collapsed_layers={collapsed} -> {out_path}")
    kept_path = os.path.join(out_dir, "kept_per_layer.csv")
    with open(kept_path, "w", encoding="utf-8") as fh:
        fh.write("layer,kept,total,sparsity\n")
        for i, (kept, m) in enumerate(zip(mask.kept_per_layer(), mask.masks)):
            fh.write(f"{i},{kept},{m.size},{repr(1.0 - kept / m.size)}\n")


@main.command()
@click.option("--config", "grid_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default=None, help="Output directory.")
@click.option("--workers", type=int, default=1, help="Parallel grid workers.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json", "plotdata"]),
              default="csv")
def grid(grid_path, out_dir, workers, fmt):
    """Run a grid document (base config + override lists + seeds)."""
    with open(grid_path, encoding="utf-8") as fh:
        spec = parse_grid(fh.read())
    rows, best = run_grid(spec, workers=workers)
    out_dir = out_dir or os.path.join(_default_out(), "grid")
    os.makedirs(out_dir, exist_ok=True)
    traces_dir = os.path.join(out_dir, "traces")
    os.makedirs(traces_dir, exist_ok=True)
    for row in rows:
        for trace in row.traces:
            trace.to_jsonl(os.path.join(traces_dir, f"{row.config_hash}_{trace.seed}.jsonl"))
    rows_to_json(rows, os.path.join(out_dir, "results.json"))
    rows_to_csv(rows, os.path.join(out_dir, "results.csv"))
    if fmt == "plotdata":
        emit_report(rows, "plotdata", out_dir)
    with open(os.path.join(out_dir, "best.json"), "w", encoding="utf-8") as fh:
        json.dump(best.to_dict(), fh, indent=2, sort_keys=True)
    click.echo(f"{len(rows)} cells -> {out_dir}; best {best.config_hash} "
               f"accuracy={best.accuracy_mean:.4f}")


@main.command("schedule-dump")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--scheme", default="base",
              type=click.Choice(("base",) + SCHEMES), help="Which schedule to dump.")
@click.option("--granularity", type=click.Choice(["epoch", "step"]), default="epoch")
@click.option("--out", "out_dir", default=None, help="Output directory.")
def schedule_dump(config_path, scheme, granularity, out_dir):
    """Emit (step, lr) pairs as CSV for the configured schedule."""
    cfg = _load_config(config_path, None)
    if granularity == "epoch":
        horizon = cfg.epochs
        retrain_steps = cfg.retrain.epochs
    else:
        from .data import realize
        dataset = realize(cfg.data)
        spe = int(np.ceil(dataset.train_x.shape[0] / cfg.batch_size))
        horizon = cfg.epochs * spe
        retrain_steps = cfg.retrain.epochs * spe
    base = _base_schedule(cfg, horizon)
    schedule = base if scheme == "base" else translate(base, scheme, retrain_steps)
    out_dir = out_dir or _default_out()
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "schedule.csv")
    dump_schedule_csv(schedule, path)
    click.echo(path)


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="results.json produced by the grid subcommand.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json", "plotdata"]),
              default="csv")
@click.option("--out", "out_dir", default=None, help="Output directory.")
def report(input_path, fmt, out_dir):
    """Re-emit stored grid results in another format."""
    rows = []
    with open(input_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(row_from_dict(json.loads(line)))
    paths = emit_report(rows, fmt, out_dir or _default_out())
    for p in paths:
        click.echo(p)


if __name__ == "__main__":
    main()
