"""Grid search over experiment configs with per-seed aggregation.

A grid document is JSON:

  {"base": {<experiment config>},
   "overrides": {"optimizer.weight_decay": [1e-4, 2e-4, 5e-4],
                 "t0_epochs": [20, 60, 100]},
   "seeds": [0, 1]}

Cells are the cross product of the override lists (keys sorted, values in
given order); each cell runs once per seed. Cells are pure, so execution
order and worker count cannot change results.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .config import ConfigError, ExperimentConfig, config_from_dict, config_hash, config_to_dict
from .pipeline import run_experiment


class GridError(ValueError):
    pass


@dataclass
class GridSpec:
    base: dict
    overrides: dict[str, list] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])


@dataclass
class ResultRow:
    config_hash: str
    config: dict
    overrides: dict
    seeds: list[int]
    accuracy_mean: float | None
    accuracy_std: float | None      # only with >= 2 seeds
    speedup: float | None
    sparsity: float | None
    total_epochs: int
    phase_epochs: dict[str, int]
    error: str | None = None
    traces: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "config_hash": self.config_hash, "config": self.config,
            "overrides": self.overrides, "seeds": self.seeds,
            "accuracy_mean": self.accuracy_mean, "accuracy_std": self.accuracy_std,
            "speedup": self.speedup, "sparsity": self.sparsity,
            "total_epochs": self.total_epochs, "phase_epochs": self.phase_epochs,
            "error": self.error,
        }


def row_from_dict(d: dict) -> ResultRow:
    return ResultRow(
        config_hash=d["config_hash"], config=d["config"], overrides=d.get("overrides", {}),
        seeds=d.get("seeds", []), accuracy_mean=d.get("accuracy_mean"),
        accuracy_std=d.get("accuracy_std"), speedup=d.get("speedup"),
        sparsity=d.get("sparsity"), total_epochs=d.get("total_epochs", 0),
        phase_epochs=d.get("phase_epochs", {}), error=d.get("error"),
    )


def parse_grid(text: str) -> GridSpec:
    raw = json.loads(text)
    if not isinstance(raw, dict) or "base" not in raw:
        raise GridError("grid document needs a 'base' experiment config")
    overrides = raw.get("overrides", {})
    seeds = raw.get("seeds", [0])
    if not isinstance(overrides, dict) or not all(isinstance(v, list) for v in overrides.values()):
        raise GridError("'overrides' must map key paths to lists of values")
    if not isinstance(seeds, list) or not seeds:
        raise GridError("'seeds' must be a nonempty list")
    extra = set(raw) - {"base", "overrides", "seeds"}
    if extra:
        raise GridError(f"unknown grid keys: {sorted(extra)}")
    return GridSpec(base=raw["base"], overrides=overrides, seeds=list(seeds))


def _set_path(d, path, value):
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise GridError(f"override path {path!r} does not address an object")
    cur[keys[-1]] = value


def expand_cells(grid: GridSpec) -> list[tuple[dict, dict]]:
    """(cell config dict, applied overrides) per cell; every cell validates."""
    keys = sorted(grid.overrides)
    combos = list(product(*(grid.overrides[k] for k in keys))) if keys else [()]
    cells = []
    for combo in combos:
        cell = json.loads(json.dumps(grid.base))  # deep copy
        applied = dict(zip(keys, combo))
        for k, v in applied.items():
            _set_path(cell, k, v)
        try:
            config_from_dict(cell)
        except ConfigError as exc:
            raise GridError(f"grid cell {applied} is invalid: {exc}") from None
        cells.append((cell, applied))
    return cells


def _phase_epochs(cfg: ExperimentConfig) -> dict[str, int]:
    if cfg.pipeline == "dense":
        return {"train": cfg.epochs}
    if cfg.pipeline == "gmp":
        return {"gmp": cfg.epochs}
    retrain = cfg.retrain.cycles * cfg.retrain.epochs
    if cfg.pipeline == "bimp":
        return {"train": cfg.t0_epochs, "retrain": retrain}
    return {"train": cfg.epochs, "retrain": retrain}


def _run_cell_seed(args):
    cell, seed = args
    try:
        cell = dict(cell)
        cell["seed"] = seed
        cfg = config_from_dict(cell)
        result = run_experiment(cfg)
        return {
            "seed": seed,
            "accuracy": result.accuracy,
            "sparsity": result.sparsity,
            "speedup": result.speedup,
            "trace": result.trace,
        }
    except Exception as exc:  # cell failure must not sink the grid
        return {"seed": seed, "error": f"{type(exc).__name__}: {exc}"}


def run_grid(grid: GridSpec, workers: int = 1):
    """Run every cell x seed; returns (rows, best_row).

    A failing cell is recorded with its error and the grid continues; if every
    cell fails, raises GridError. Best = highest mean accuracy, ties broken by
    lexicographically smallest config hash.
    """
    cells = expand_cells(grid)
    jobs = [(cell, seed) for cell, _ in cells for seed in grid.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell_seed, jobs))
    else:
        outcomes = [_run_cell_seed(job) for job in jobs]

    rows = []
    per_cell = len(grid.seeds)
    for i, (cell, applied) in enumerate(cells):
        chunk = outcomes[i * per_cell : (i + 1) * per_cell]
        cfg = config_from_dict(cell)
        errors = [c["error"] for c in chunk if "error" in c]
        ok = [c for c in chunk if "error" not in c]
        if ok:
            accs = np.array([c["accuracy"] for c in ok])
            row = ResultRow(
                config_hash=config_hash(cfg), config=config_to_dict(cfg),
                overrides=applied, seeds=[c["seed"] for c in ok],
                accuracy_mean=float(accs.mean()),
                accuracy_std=float(accs.std(ddof=1)) if len(accs) >= 2 else None,
                speedup=float(np.mean([c["speedup"] for c in ok
                                       if math.isfinite(c["speedup"])] or [math.inf])),
                sparsity=float(np.mean([c["sparsity"] for c in ok])),
                total_epochs=cfg.epochs, phase_epochs=_phase_epochs(cfg),
                error="; ".join(errors) if errors else None,
                traces=[c["trace"] for c in ok],
            )
        else:
            row = ResultRow(config_hash=config_hash(cfg), config=config_to_dict(cfg),
                            overrides=applied, seeds=[], accuracy_mean=None,
                            accuracy_std=None, speedup=None, sparsity=None,
                            total_epochs=cfg.epochs, phase_epochs=_phase_epochs(cfg),
                            error="; ".join(errors))
        rows.append(row)

    viable = [r for r in rows if r.accuracy_mean is not None]
    if not viable:
        raise GridError("every grid cell failed: " + "; ".join(
            r.error or "unknown" for r in rows))
    best = min(viable, key=lambda r: (-r.accuracy_mean, r.config_hash))
    return rows, best
