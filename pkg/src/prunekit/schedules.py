"""Learning-rate schedules.

Base schedules (constant, stepped, cosine, linear) over a discrete step
horizon, an optional half-cosine warmup, and the retrain translations that
map an original training schedule into a (usually much shorter) retraining
window:

  ft    constant at the original schedule's final value
  lrw   replay of the original schedule's last ``steps`` values
  slr   the original schedule compressed proportionally into the window
  clr   cosine restart from the original initial value
  llr   linear restart from the original initial value
  allr  llr with the initial value discounted by how disruptive the
        preceding pruning step was and by how short the window is

Epoch-denominated configs must be converted to optimizer steps before
constructing schedules; everything here is step-indexed from 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BASE_KINDS = ("constant", "stepped", "cosine", "linear")
SCHEMES = ("ft", "lrw", "slr", "clr", "llr", "allr")

RETRAIN_WARMUP_FRAC = 0.1  # fixed warmup share for slr/clr/llr/allr restarts


class DegenerateModelError(ValueError):
    """All prunable weights are zero; the discount is undefined."""


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _warmup_rise(target: float, t: int, n_warmup: int) -> float:
    # half-cosine rise from 0 at t=0 toward `target` at the end of the window
    return target * 0.5 * (1.0 - math.cos(math.pi * t / n_warmup))


@dataclass(frozen=True)
class BaseSchedule:
    """Total function step -> lr on [0, horizon)."""

    kind: str
    initial_lr: float
    horizon: int
    warmup_frac: float = 0.0
    milestones: tuple[float, ...] = ()     # stepped only; fractions of the horizon
    decay_factors: tuple[float, ...] = ()  # stepped only; one factor per milestone

    def __post_init__(self):
        if self.kind not in BASE_KINDS:
            raise ValueError(f"kind must be one of {BASE_KINDS}, got {self.kind!r}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.initial_lr < 0:
            raise ValueError(f"initial_lr must be nonnegative, got {self.initial_lr}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError(f"warmup_frac must be in [0, 1), got {self.warmup_frac}")
        if self.kind == "stepped":
            ms = self.milestones
            if len(ms) != len(self.decay_factors):
                raise ValueError("need one decay factor per milestone")
            if any(not 0.0 < m < 1.0 for m in ms):
                raise ValueError(f"milestones must lie strictly inside (0, 1), got {ms}")
            if any(b <= a for a, b in zip(ms, ms[1:])):
                raise ValueError(f"milestones must be strictly increasing, got {ms}")
        elif self.milestones or self.decay_factors:
            raise ValueError(f"milestones/decay_factors only apply to stepped, not {self.kind}")

    @property
    def warmup_steps(self) -> int:
        return _round_half_up(self.warmup_frac * self.horizon)

    def _value_at_fraction(self, x: float) -> float:
        if self.kind == "constant":
            return self.initial_lr
        if self.kind == "stepped":
            lr = self.initial_lr
            for milestone, factor in zip(self.milestones, self.decay_factors):
                if x >= milestone:
                    lr *= factor
            return lr
        if self.kind == "cosine":
            return self.initial_lr * 0.5 * (1.0 + math.cos(math.pi * x))
        return self.initial_lr * (1.0 - x)  # linear

    def lr_at(self, t: int) -> float:
        if not 0 <= t < self.horizon:
            raise ValueError(f"step {t} outside schedule horizon [0, {self.horizon})")
        n = self.warmup_steps
        if t < n:
            return _warmup_rise(self._value_at_fraction(0.0), t, n)
        return self._value_at_fraction((t - n) / (self.horizon - n))

    @property
    def initial_value(self) -> float:
        """Nominal peak value (what the schedule reaches once warmup is done)."""
        return self.lr_at(min(self.warmup_steps, self.horizon - 1))

    @property
    def final_value(self) -> float:
        return self.lr_at(self.horizon - 1)


@dataclass(frozen=True)
class RetrainSchedule:
    """Translated schedule for one retraining window of ``steps`` steps."""

    scheme: str
    origin: BaseSchedule
    steps: int
    discount: float = 1.0
    warmup_frac: float = 0.0
    _restart: BaseSchedule | None = field(default=None, repr=False, compare=False)

    @property
    def horizon(self) -> int:
        return self.steps

    @property
    def warmup_steps(self) -> int:
        return _round_half_up(self.warmup_frac * self.steps)

    def lr_at(self, t: int) -> float:
        if not 0 <= t < self.steps:
            raise ValueError(f"step {t} outside retrain window [0, {self.steps})")
        if self.scheme == "ft":
            return self.origin.final_value
        if self.scheme == "lrw":
            return self.origin.lr_at(self.origin.horizon - self.steps + t)
        if self.scheme == "slr":
            n = self.warmup_steps
            if t < n:
                return _warmup_rise(self._compressed(n), t, n)
            return self._compressed(t)
        return self._restart.lr_at(t)  # clr/llr/allr

    def _compressed(self, t: int) -> float:
        # proportional position in the origin, ties truncated to the earlier step
        return self.origin.lr_at(t * self.origin.horizon // self.steps)

    @property
    def initial_value(self) -> float:
        """Value at the first post-warmup step (the restart peak)."""
        return self.lr_at(min(self.warmup_steps, self.steps - 1))


def translate(origin: BaseSchedule, scheme: str, retrain_steps: int,
              discount: float = 1.0) -> RetrainSchedule:
    """Build the retraining schedule for one cycle.

    ``discount`` only affects the restart schemes' initial value and is 1
    everywhere except the final allr cycle.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if retrain_steps < 1:
        raise ValueError(f"retrain_steps must be >= 1, got {retrain_steps}")
    if not 0.0 <= discount <= 1.0:
        raise ValueError(f"discount must lie in [0, 1], got {discount}")
    if scheme == "lrw" and retrain_steps > origin.horizon:
        raise ValueError(
            f"lrw replays the origin tail, so retrain_steps ({retrain_steps}) "
            f"cannot exceed the origin horizon ({origin.horizon})"
        )
    if scheme in ("ft", "lrw"):
        return RetrainSchedule(scheme, origin, retrain_steps)
    if scheme == "slr":
        return RetrainSchedule(scheme, origin, retrain_steps,
                               warmup_frac=RETRAIN_WARMUP_FRAC)
    kind = "cosine" if scheme == "clr" else "linear"
    restart = BaseSchedule(kind=kind, initial_lr=discount * origin.initial_value,
                           horizon=retrain_steps, warmup_frac=RETRAIN_WARMUP_FRAC)
    return RetrainSchedule(scheme, origin, retrain_steps, discount=discount,
                           warmup_frac=RETRAIN_WARMUP_FRAC, _restart=restart)


@dataclass(frozen=True)
class AllrDiscountInput:
    """Inputs for the adaptive restart discount.

    ``weights_before``/``weights_after`` are the concatenated prunable weights
    around one pruning step (after = before with the pruned entries zeroed),
    ``pruned_fraction`` is the share of *remaining* weights removed by that
    step, and the two step counts describe the retraining window and the
    original training horizon.
    """

    weights_before: np.ndarray
    weights_after: np.ndarray
    pruned_fraction: float
    retrain_steps: int
    origin_steps: int

    def __post_init__(self):
        before = np.asarray(self.weights_before, dtype=np.float64).ravel()
        after = np.asarray(self.weights_after, dtype=np.float64).ravel()
        object.__setattr__(self, "weights_before", before)
        object.__setattr__(self, "weights_after", after)
        if before.shape != after.shape:
            raise ValueError("weight vectors must have identical shape")
        if not np.all((after == before) | (after == 0.0)):
            raise ValueError("weights_after must equal weights_before with a subset zeroed")
        if not 0.0 < self.pruned_fraction <= 1.0:
            raise ValueError(f"pruned_fraction must lie in (0, 1], got {self.pruned_fraction}")


def compute_allr_discount(inp: AllrDiscountInput) -> float:
    """max of the normalized pruning distance and the retrain/train ratio.

    The distance term is ||before - after||_2 / (||before||_2 * sqrt(s)),
    clamped to [0, 1]; for pure magnitude pruning of the smallest s-fraction
    it cannot exceed 1 before clamping. The ratio term retrain/train is
    likewise clamped.
    """
    norm_before = float(np.linalg.norm(inp.weights_before))
    if norm_before == 0.0:
        raise DegenerateModelError("all prunable weights are zero")
    dist = float(np.linalg.norm(inp.weights_before - inp.weights_after))
    d1 = dist / (norm_before * math.sqrt(inp.pruned_fraction))
    d1 = min(max(d1, 0.0), 1.0)
    d2 = min(max(inp.retrain_steps / inp.origin_steps, 0.0), 1.0)
    return max(d1, d2)


def allr_cycle_policy(cycle_index: int, total_cycles: int) -> bool:
    """Discount only on the last cycle; a one-shot run counts as its last cycle."""
    if not 1 <= cycle_index <= total_cycles:
        raise ValueError(f"cycle_index must lie in [1, {total_cycles}], got {cycle_index}")
    return cycle_index == total_cycles


def iter_lr(schedule) -> list[tuple[int, float]]:
    """Materialize (step, lr) pairs; used by schedule dumps and golden tests."""
    return [(t, schedule.lr_at(t)) for t in range(schedule.horizon)]
