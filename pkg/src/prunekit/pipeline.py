"""Training/pruning procedures: dense training, one-shot and iterative
magnitude pruning, the budgeted variant that fits initial training plus all
prune-retrain cycles into one fixed epoch budget, and gradual magnitude
pruning along a cubic sparsity ramp.

Every procedure takes an ExperimentConfig, runs strictly sequentially on one
network, and returns (network, trace). Runs are bit-reproducible: all
randomness flows from one seed sequence (init and batch shuffling use separate
spawned streams), and every pruning event forces a pre/post evaluation pair so
the stability of the step is exact.
"""

from __future__ import annotations

import json
import math
import os
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import ExperimentConfig, config_hash
from .data import Dataset, realize
from .metrics import count_flops, stability
from .pruning import (CubicSchedule, PruneMask, apply_mask, cubic_sparsity,
                      current_mask, detect_layer_collapse, per_cycle_fraction,
                      select_mask)
from .schedules import BaseSchedule, allr_cycle_policy, translate


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; the trace holds a diagnostic record."""


@dataclass
class TraceRecord:
    step: int
    phase: str
    cycle: int
    lr: float
    sparsity: float
    train_loss: float | None
    eval_accuracy: float | None
    event: str
    speedup: float | None = None
    stability: float | None = None

    def to_dict(self):
        return {
            "step": self.step, "phase": self.phase, "cycle": self.cycle,
            "lr": self.lr, "sparsity": self.sparsity, "train_loss": self.train_loss,
            "eval_accuracy": self.eval_accuracy, "event": self.event,
            "speedup": self.speedup, "stability": self.stability,
        }


@dataclass
class Trace:
    """Event stream of one run; the header carries the seed and config hash."""

    seed: int
    config_hash: str | None = None
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, **kw) -> TraceRecord:
        rec = TraceRecord(**kw)
        self.records.append(rec)
        return rec

    def select(self, event: str | None = None, phase: str | None = None):
        out = self.records
        if event is not None:
            out = [r for r in out if r.event == event]
        if phase is not None:
            out = [r for r in out if r.phase == phase]
        return out

    def stability_pairs(self):
        """(before, after) accuracies for every pruning event, in order."""
        pre = [r for r in self.records if r.event == "prune_pre"]
        post = [r for r in self.records if r.event == "prune_post"]
        return list(zip([r.eval_accuracy for r in pre], [r.eval_accuracy for r in post]))

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"seed": self.seed, "config_hash": self.config_hash}) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict()) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            trace = cls(seed=header["seed"], config_hash=header.get("config_hash"))
            for line in fh:
                d = json.loads(line)
                d["event"] = d.pop("event")
                trace.records.append(TraceRecord(**d))
        return trace


def build_network(model_cfg, rng: np.random.Generator) -> nn.Network:
    """Realize a model config; input sizes are inferred by shape propagation."""
    shape = tuple(model_cfg.input_shape)
    layers = []
    for i, spec in enumerate(model_cfg.layers):
        kind = spec["kind"]
        if kind == "dense":
            if len(shape) != 1:
                raise nn.ConfigurationError(
                    f"layer {i} (dense): needs a flat input, got shape {shape}; "
                    f"insert a flatten layer first"
                )
            layer = nn.Dense(shape[0], spec["units"], spec.get("bias", True), rng)
            layer.weight.value *= spec.get("init_scale", 1.0)
        elif kind == "conv2d":
            if len(shape) != 3:
                raise nn.ConfigurationError(
                    f"layer {i} (conv2d): needs a (C, H, W) input, got shape {shape}"
                )
            kh, kw = spec["kernel"]
            layer = nn.Conv2D(shape[0], spec["channels"], kh, kw,
                              spec.get("stride", 1), spec.get("padding", 0),
                              spec.get("bias", True), rng)
            layer.weight.value *= spec.get("init_scale", 1.0)
        elif kind == "relu":
            layer = nn.ReLU()
        elif kind == "flatten":
            layer = nn.Flatten()
        else:
            raise nn.ConfigurationError(f"layer {i}: unknown kind {kind!r}")
        try:
            shape = layer.output_shape(shape)
        except nn.ConfigurationError as exc:
            raise nn.ConfigurationError(f"layer {i} ({kind}): {exc}") from None
        layers.append(layer)
    return nn.Network(layers, model_cfg.input_shape)


def evaluate(net: nn.Network, dataset: Dataset, batch_size: int = 512):
    """Deterministic top-1 accuracy and mean loss over the full eval split.

    Argmax ties resolve to the lowest class index.
    """
    x, y = dataset.eval_x, dataset.eval_y
    if x.shape[0] == 0:
        raise ValueError("evaluation split is empty")
    correct = 0
    loss_sum = 0.0
    for i in range(0, x.shape[0], batch_size):
        bx, by = x[i : i + batch_size], y[i : i + batch_size]
        logits = net.forward(bx)
        loss, _ = nn.loss_softmax_ce(logits, by)
        loss_sum += loss * bx.shape[0]
        correct += int((np.argmax(logits, axis=1) == by).sum())
    n = x.shape[0]
    return correct / n, loss_sum / n


class _PiecewiseLinear:
    """Cyclic linear schedule: fresh linear decay in each window between
    pruning events, with a warmed-up restart in every window after the first."""

    def __init__(self, initial_lr, boundaries, horizon, first_warmup_frac, restart_warmup_frac):
        starts = sorted(set(b for b in boundaries if 0 <= b < horizon) | {0})
        self.starts = starts
        self.horizon = horizon
        self.segments = []
        for i, b in enumerate(starts):
            end = starts[i + 1] if i + 1 < len(starts) else horizon
            warm = first_warmup_frac if i == 0 else restart_warmup_frac
            self.segments.append(
                BaseSchedule(kind="linear", initial_lr=initial_lr,
                             horizon=end - b, warmup_frac=warm)
            )

    def lr_at(self, t: int) -> float:
        if not 0 <= t < self.horizon:
            raise ValueError(f"step {t} outside schedule horizon [0, {self.horizon})")
        i = bisect_right(self.starts, t) - 1
        return self.segments[i].lr_at(t - self.starts[i])


class _Runner:
    """Shared training-loop state for one run."""

    def __init__(self, cfg: ExperimentConfig, dataset: Dataset | None = None,
                 checkpoint_dir=None):
        self.cfg = cfg
        self.dataset = dataset if dataset is not None else realize(cfg.data)
        seq = np.random.SeedSequence(cfg.seed)
        init_seq, shuffle_seq = seq.spawn(2)
        self.shuffle_rng = np.random.default_rng(shuffle_seq)
        self.net = build_network(cfg.model, np.random.default_rng(init_seq))
        n_train = self.dataset.train_x.shape[0]
        self.steps_per_epoch = math.ceil(n_train / cfg.batch_size)
        self.trace = Trace(seed=cfg.seed, config_hash=config_hash(cfg))
        self.step = 0
        self.checkpoint_dir = checkpoint_dir
        self._order = None
        self._pos = n_train
        self._eval_interval = cfg.eval_every_epochs * self.steps_per_epoch

    def epochs_to_steps(self, epochs: int) -> int:
        return epochs * self.steps_per_epoch

    def _next_batch(self):
        n = self.dataset.train_x.shape[0]
        if self._pos >= n:
            self._order = self.shuffle_rng.permutation(n)
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.cfg.batch_size]
        self._pos += self.cfg.batch_size
        return self.dataset.train_x[idx], self.dataset.train_y[idx]

    def sparsity(self) -> float:
        return current_mask(self.net).sparsity()

    def record_eval(self, phase, cycle, lr, event="eval", train_loss=None,
                    speedup=None, stability_value=None):
        acc, _ = evaluate(self.net, self.dataset)
        self.trace.append(step=self.step, phase=phase, cycle=cycle, lr=lr,
                          sparsity=self.sparsity(), train_loss=train_loss,
                          eval_accuracy=acc, event=event, speedup=speedup,
                          stability=stability_value)
        return acc

    def train(self, schedule, n_steps, phase, cycle, offset=0):
        """Run n_steps of masked SGD under `schedule`, starting at its `offset`."""
        for local in range(n_steps):
            lr = schedule.lr_at(offset + local)
            bx, by = self._next_batch()
            logits = self.net.forward(bx)
            loss, dlogits = nn.loss_softmax_ce(logits, by)
            if not math.isfinite(loss):
                self.trace.append(step=self.step, phase=phase, cycle=cycle, lr=lr,
                                  sparsity=self.sparsity(), train_loss=loss,
                                  eval_accuracy=None, event="diverged")
                raise TrainingDivergedError(
                    f"non-finite loss at step {self.step} (phase {phase}, cycle {cycle})"
                )
            self.net.backward(dlogits)
            nn.sgd_step(self.net.parameters(), lr, self.cfg.optimizer)
            self.step += 1
            if self.step % self._eval_interval == 0:
                self.record_eval(phase, cycle, lr, train_loss=loss)

    def prune_to(self, target, phase, cycle, mode=None, from_stored=False):
        """One pruning event with forced pre/post evaluation.

        Returns (pruned_fraction_of_remaining, weights_before, weights_after,
        acc_before, acc_after). `from_stored` selects on dense stored values
        (soft-mode recomputation); otherwise selection sees effective weights.
        """
        mode = mode if mode is not None else self.cfg.optimizer.mask_mode
        prunable = self.net.prunable_weights()
        kinds = [layer.kind for _, layer, _ in prunable]
        if from_stored:
            weight_views = [p.value for _, _, p in prunable]
        else:
            weight_views = [p.effective_value() for _, _, p in prunable]
        before = np.concatenate([w.ravel() for w in
                                 (p.effective_value() for _, _, p in prunable)])
        kept_before = current_mask(self.net).kept

        acc_before = self.record_eval(phase, cycle, lr=0.0, event="prune_pre")
        mask = select_mask(weight_views, self.cfg.criterion, target, kinds)
        apply_mask(self.net, mask, mode)
        after = np.concatenate([p.effective_value().ravel() for _, _, p in prunable])
        kept_after = current_mask(self.net).kept
        pruned_fraction = (kept_before - kept_after) / kept_before if kept_before else 0.0

        report = count_flops(self.net)
        acc_after, _ = evaluate(self.net, self.dataset)
        stab = stability(acc_before, acc_after) if acc_before > 0 else None
        self.trace.append(step=self.step, phase=phase, cycle=cycle, lr=0.0,
                          sparsity=self.sparsity(), train_loss=None,
                          eval_accuracy=acc_after, event="prune_post",
                          speedup=report.speedup, stability=stab)
        return pruned_fraction, before, after, acc_before, acc_after

    def maybe_checkpoint(self, tag):
        if self.checkpoint_dir is None:
            return
        os.makedirs(self.checkpoint_dir, exist_ok=True)
        path = os.path.join(self.checkpoint_dir, f"{tag}.npz")
        nn.save_checkpoint(path, self.net, step=self.step)

    def finish(self, phase, cycle, lr=0.0):
        self.record_eval(phase, cycle, lr, event="final")
        self.maybe_checkpoint("final")
        return self.net, self.trace


def _base_schedule(cfg: ExperimentConfig, horizon_steps: int) -> BaseSchedule:
    s = cfg.schedule
    return BaseSchedule(kind=s.kind, initial_lr=s.initial_lr, horizon=horizon_steps,
                        warmup_frac=s.warmup_frac, milestones=s.milestones,
                        decay_factors=s.decay_factors)


def _retrain_discount(runner, scheme, cycle, total_cycles, origin_steps,
                      retrain_steps, prune_info):
    """Discount for one retrain cycle; 1 except on the final adaptive cycle."""
    if scheme != "allr" or not allr_cycle_policy(cycle, total_cycles):
        return 1.0
    pruned_fraction, before, after, _, _ = prune_info
    d2 = min(max(retrain_steps / origin_steps, 0.0), 1.0)
    if pruned_fraction <= 0.0:
        return d2  # nothing was removed, the distance term is vacuously zero
    norm_before = float(np.linalg.norm(before))
    if norm_before == 0.0:
        return d2
    d1 = float(np.linalg.norm(before - after)) / (norm_before * math.sqrt(pruned_fraction))
    return max(min(max(d1, 0.0), 1.0), d2)


def train_dense(cfg: ExperimentConfig, dataset: Dataset | None = None,
                checkpoint_dir=None):
    """Plain budgeted training under the base schedule."""
    runner = _Runner(cfg, dataset, checkpoint_dir)
    total = runner.epochs_to_steps(cfg.epochs)
    if total > 0:
        schedule = _base_schedule(cfg, total)
        runner.train(schedule, total, phase="train", cycle=0)
        runner.maybe_checkpoint("train_end")
        return runner.finish("train", 0, schedule.lr_at(total - 1))
    return runner.finish("train", 0)


def _dense_phase(runner, epochs):
    total = runner.epochs_to_steps(epochs)
    schedule = _base_schedule(runner.cfg, total)
    runner.train(schedule, total, phase="train", cycle=0)
    runner.maybe_checkpoint("train_end")
    return schedule


def _retrain_cycles(runner, origin, total_cycles, cycle_target):
    """Shared prune-retrain loop for the one-shot/iterative/budgeted variants."""
    cfg = runner.cfg
    retrain_steps = runner.epochs_to_steps(cfg.retrain.epochs)
    for cycle in range(1, total_cycles + 1):
        target = cycle_target(cycle)
        prune_info = runner.prune_to(target, phase="retrain", cycle=cycle, mode=nn.HARD)
        d = _retrain_discount(runner, cfg.retrain.scheme, cycle, total_cycles,
                              origin.horizon, retrain_steps, prune_info)
        sched = translate(origin, cfg.retrain.scheme, retrain_steps, d)
        runner.trace.append(step=runner.step, phase="retrain", cycle=cycle,
                            lr=sched.initial_value, sparsity=runner.sparsity(),
                            train_loss=None, eval_accuracy=None, event="cycle_start")
        runner.train(sched, retrain_steps, phase="retrain", cycle=cycle)
        runner.maybe_checkpoint(f"cycle{cycle}_end")
    return runner.finish("retrain", total_cycles)


def one_shot_imp(cfg: ExperimentConfig, dataset: Dataset | None = None,
                 checkpoint_dir=None):
    """Train, prune once to the target, retrain once."""
    if cfg.pipeline != "one_shot_imp":
        raise ValueError(f"config pipeline is {cfg.pipeline!r}, expected 'one_shot_imp'")
    runner = _Runner(cfg, dataset, checkpoint_dir)
    origin = _dense_phase(runner, cfg.epochs)
    return _retrain_cycles(runner, origin, 1, lambda cycle: cfg.sparsity_target)


def iterative_imp(cfg: ExperimentConfig, dataset: Dataset | None = None,
                  checkpoint_dir=None):
    """Train, then repeat prune-retrain; each cycle removes an equal fraction
    of the remaining weights so the final cycle lands on the target exactly."""
    if cfg.pipeline != "iterative_imp":
        raise ValueError(f"config pipeline is {cfg.pipeline!r}, expected 'iterative_imp'")
    cycles = cfg.retrain.cycles
    if cycles < 2:
        raise ValueError(f"iterative_imp needs >= 2 cycles, got {cycles}; "
                         f"use one_shot_imp for a single cycle")
    runner = _Runner(cfg, dataset, checkpoint_dir)
    origin = _dense_phase(runner, cfg.epochs)
    p = per_cycle_fraction(cfg.sparsity_target, cycles)
    return _retrain_cycles(runner, origin, cycles,
                           lambda cycle: 1.0 - (1.0 - p) ** cycle)


def bimp(cfg: ExperimentConfig, dataset: Dataset | None = None, checkpoint_dir=None):
    """Budgeted variant: a linearly decayed initial phase of t0 epochs, then
    prune-retrain cycles that exactly fill the remaining budget. No training
    happens past the declared total."""
    if cfg.pipeline != "bimp":
        raise ValueError(f"config pipeline is {cfg.pipeline!r}, expected 'bimp'")
    runner = _Runner(cfg, dataset, checkpoint_dir)
    origin = _dense_phase(runner, cfg.t0_epochs)
    cycles = cfg.retrain.cycles
    p = per_cycle_fraction(cfg.sparsity_target, cycles)
    net, trace = _retrain_cycles(runner, origin, cycles,
                                 lambda cycle: 1.0 - (1.0 - p) ** cycle)
    expected = runner.epochs_to_steps(cfg.epochs)
    assert runner.step == expected, (
        f"budget violation: ran {runner.step} steps, declared {expected}"
    )
    return net, trace


def gmp_run(cfg: ExperimentConfig, dataset: Dataset | None = None,
            checkpoint_dir=None):
    """Sparsify during training: every `interval` steps the mask is recomputed
    to the cubic schedule's current target. Soft mode recomputes from the dense
    stored values (pruned weights may recover); hard mode only extends the mask."""
    if cfg.pipeline != "gmp":
        raise ValueError(f"config pipeline is {cfg.pipeline!r}, expected 'gmp'")
    runner = _Runner(cfg, dataset, checkpoint_dir)
    total = runner.epochs_to_steps(cfg.epochs)
    g = cfg.gmp
    end_epoch = g.end_epoch if g.end_epoch is not None else cfg.epochs
    t0 = runner.epochs_to_steps(g.start_epoch)
    span = runner.epochs_to_steps(end_epoch) - t0
    interval = span // g.pruning_steps
    if interval < 1:
        raise ValueError(
            f"gmp pruning window of {span} steps cannot hold {g.pruning_steps} prunings"
        )
    sched = CubicSchedule(g.initial_sparsity, cfg.sparsity_target, t0,
                          g.pruning_steps, interval)
    prune_steps = set(sched.prune_steps())

    if g.cyclic_lr:
        lr_schedule = _PiecewiseLinear(cfg.schedule.initial_lr, sorted(prune_steps),
                                       total, cfg.schedule.warmup_frac, 0.1)
    else:
        lr_schedule = _base_schedule(cfg, total)

    soft = cfg.optimizer.mask_mode == nn.SOFT
    cursor = 0
    # an update scheduled exactly at the end of training still fires, as a
    # final mask recompute after the last step, so the ramp endpoint is reached
    for boundary in sorted(b for b in prune_steps if b <= total):
        if boundary > cursor:
            runner.train(lr_schedule, boundary - cursor, phase="gmp", cycle=0,
                         offset=cursor)
            cursor = boundary
        target = cubic_sparsity(sched, boundary)
        runner.prune_to(target, phase="gmp", cycle=0,
                        mode=nn.SOFT if soft else nn.HARD, from_stored=soft)
    if total > cursor:
        runner.train(lr_schedule, total - cursor, phase="gmp", cycle=0, offset=cursor)
    return runner.finish("gmp", 0, lr_schedule.lr_at(total - 1) if total else 0.0)


@dataclass
class RunResult:
    network: nn.Network
    trace: Trace
    accuracy: float
    loss: float
    sparsity: float
    speedup: float
    flops: dict
    mask: PruneMask
    collapsed_layers: list[int]


_DISPATCH = {
    "dense": train_dense,
    "one_shot_imp": one_shot_imp,
    "iterative_imp": iterative_imp,
    "bimp": bimp,
    "gmp": gmp_run,
}


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None,
                   checkpoint_dir=None) -> RunResult:
    """Run the configured pipeline and bundle the final metrics."""
    dataset = dataset if dataset is not None else realize(cfg.data)
    net, trace = _DISPATCH[cfg.pipeline](cfg, dataset, checkpoint_dir)
    accuracy, loss = evaluate(net, dataset)
    mask = current_mask(net)
    report = count_flops(net)
    return RunResult(network=net, trace=trace, accuracy=accuracy, loss=loss,
                     sparsity=mask.sparsity(), speedup=report.speedup,
                     flops=report.to_dict(), mask=mask,
                     collapsed_layers=detect_layer_collapse(mask))
