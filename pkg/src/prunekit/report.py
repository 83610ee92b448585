"""Result emission: summary CSV/JSON and plot-data series.

The CSV keeps the accuracy/speedup/sparsity triplet adjacent so a results
table can be pasted straight into a comparison. Plot data comes out as
(x, y, series) rows: accuracy vs. sparsity, the monotone upper envelope of
accuracy vs. total retrain epochs per sparsity level, and (step, lr) curves
for the configured schedules.
"""

from __future__ import annotations

import csv
import json
import os

from .config import config_from_dict
from .schedules import iter_lr, translate
from .pipeline import _base_schedule  # shared construction, keeps dumps consistent

CSV_COLUMNS = ["config_hash", "pipeline", "scheme", "criterion", "overrides", "seeds",
               "accuracy_mean", "accuracy_std", "speedup", "sparsity",
               "total_epochs", "phase_epochs", "error"]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([
                r.config_hash, r.config["pipeline"], r.config["retrain"]["scheme"],
                r.config["criterion"], json.dumps(r.overrides, sort_keys=True),
                json.dumps(r.seeds), _fmt(r.accuracy_mean), _fmt(r.accuracy_std),
                _fmt(r.speedup), _fmt(r.sparsity), r.total_epochs,
                json.dumps(r.phase_epochs, sort_keys=True), _fmt(r.error),
            ])


def rows_to_json(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def envelope(points):
    """Monotone upper envelope: sort by budget, apply a running max to accuracy."""
    ordered = sorted(points, key=lambda p: p[0])
    out, best = [], float("-inf")
    for budget, acc in ordered:
        best = max(best, acc)
        out.append((budget, best))
    return out


def _series_label(row):
    cfg = row.config
    label = f"{cfg['pipeline']}/{cfg['retrain']['scheme']}"
    if row.overrides:
        label += "/" + ",".join(f"{k}={v}" for k, v in sorted(row.overrides.items()))
    return label


def _plotdata(rows, out_dir):
    paths = []

    acc_path = os.path.join(out_dir, "accuracy_vs_sparsity.csv")
    with open(acc_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "series"])
        for r in rows:
            if r.accuracy_mean is None:
                continue
            writer.writerow([repr(r.sparsity), repr(r.accuracy_mean), _series_label(r)])
    paths.append(acc_path)

    # envelope of accuracy vs. total retrain epochs, one series per sparsity target
    by_target = {}
    for r in rows:
        if r.accuracy_mean is None:
            continue
        target = r.config["sparsity"]["target"]
        retrain_epochs = r.phase_epochs.get("retrain", 0)
        by_target.setdefault(target, []).append((retrain_epochs, r.accuracy_mean))
    env_path = os.path.join(out_dir, "envelope_accuracy_vs_retrain_epochs.csv")
    with open(env_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "series"])
        for target in sorted(by_target):
            for budget, acc in envelope(by_target[target]):
                writer.writerow([budget, repr(acc), f"sparsity={target}"])
    paths.append(env_path)

    # (step, lr) curves for each distinct config: base schedule and retrain cycle
    sched_path = os.path.join(out_dir, "schedule_curves.csv")
    seen = set()
    with open(sched_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "series"])
        for r in rows:
            if r.config_hash in seen:
                continue
            seen.add(r.config_hash)
            cfg = config_from_dict(r.config)
            base = _base_schedule(cfg, max(cfg.epochs, 1))
            for step, lr in iter_lr(base):
                writer.writerow([step, repr(lr), f"{r.config_hash}/base"])
            if cfg.pipeline in ("one_shot_imp", "iterative_imp", "bimp"):
                retrain = translate(base, cfg.retrain.scheme, max(cfg.retrain.epochs, 1))
                for step, lr in iter_lr(retrain):
                    writer.writerow([step, repr(lr),
                                     f"{r.config_hash}/{cfg.retrain.scheme}"])
    paths.append(sched_path)
    return paths


def emit_report(rows, fmt: str, out_dir) -> list[str]:
    """Write result files in the requested format; returns the paths written."""
    if not rows:
        raise ValueError("no result rows to report")
    if fmt not in ("csv", "json", "plotdata"):
        raise ValueError(f"format must be csv, json or plotdata, got {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    if fmt == "csv":
        path = os.path.join(out_dir, "results.csv")
        rows_to_csv(rows, path)
        return [path]
    if fmt == "json":
        path = os.path.join(out_dir, "results.json")
        rows_to_json(rows, path)
        return [path]
    return _plotdata(rows, out_dir)


def dump_schedule_csv(schedule, path) -> None:
    """(step, lr) pairs; floats use repr so values round-trip exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr"])
        for step, lr in iter_lr(schedule):
            writer.writerow([step, repr(lr)])
