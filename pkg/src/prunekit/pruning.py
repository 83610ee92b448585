"""Magnitude-based mask selection, sparsity schedules, and collapse diagnostics.

All criteria rank weights by |w| (exact zeros sort first and are pruned
first). Integer quotas use round-half-up, and ties at a threshold are broken
in ascending flat-index order, so selection is deterministic and independent
of the seed. Biases are never pruned; criteria operate on the prunable weight
tensors only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CRITERIA = ("global", "uniform", "uniform_plus", "erk", "lamp")

LAST_DENSE_MAX_SPARSITY = 0.8  # uniform_plus cap on the final dense layer


class InfeasibleTargetError(ValueError):
    """The sparsity target cannot be met under the criterion's constraints."""


class PruneMask:
    """Per-layer binary keep masks (1 = kept) with sparsity accounting."""

    def __init__(self, masks):
        self.masks = [np.ascontiguousarray(m, dtype=np.float64) for m in masks]
        for i, m in enumerate(self.masks):
            bad = (m != 0.0) & (m != 1.0)
            if bad.any():
                raise ValueError(f"mask {i} contains values other than 0/1")
        self.kept = int(sum(int(m.sum()) for m in self.masks))
        self.total = int(sum(m.size for m in self.masks))

    @classmethod
    def all_ones(cls, shapes):
        return cls([np.ones(s) for s in shapes])

    def sparsity(self) -> float:
        return 1.0 - self.kept / self.total

    def kept_per_layer(self) -> list[int]:
        return [int(m.sum()) for m in self.masks]

    def sparsity_per_layer(self) -> list[float]:
        return [1.0 - int(m.sum()) / m.size for m in self.masks]

    def intersect(self, other: "PruneMask") -> "PruneMask":
        if len(self.masks) != len(other.masks):
            raise ValueError("mask layer counts differ")
        return PruneMask([a * b for a, b in zip(self.masks, other.masks)])

    def __len__(self):
        return len(self.masks)


def per_cycle_fraction(target_sparsity: float, cycles: int) -> float:
    """Per-cycle fraction p of the *remaining* weights such that pruning p for
    ``cycles`` rounds composes to exactly ``target_sparsity`` overall."""
    if not 0.0 < target_sparsity < 1.0:
        raise ValueError(f"target sparsity must lie in (0, 1), got {target_sparsity}")
    if cycles < 1:
        raise ValueError(f"cycles must be >= 1, got {cycles}")
    return 1.0 - (1.0 - target_sparsity) ** (1.0 / cycles)


def cycles_to_reach(step_fraction: float, target_sparsity: float) -> int:
    """Smallest cycle count J with 1 - (1-p)^J >= target."""
    if not 0.0 < step_fraction < 1.0:
        raise ValueError(f"step fraction must lie in (0, 1), got {step_fraction}")
    if not 0.0 < target_sparsity < 1.0:
        raise ValueError(f"target sparsity must lie in (0, 1), got {target_sparsity}")
    cycles = math.ceil(math.log(1.0 - target_sparsity) / math.log(1.0 - step_fraction))
    # guard against log rounding at exact composition boundaries
    while 1.0 - (1.0 - step_fraction) ** cycles < target_sparsity:
        cycles += 1
    while cycles > 1 and 1.0 - (1.0 - step_fraction) ** (cycles - 1) >= target_sparsity:
        cycles -= 1
    return cycles


@dataclass(frozen=True)
class CubicSchedule:
    """Gradual sparsity ramp: cubic interpolation from s_initial to s_final
    over ``num_prunings`` mask updates spaced ``interval`` steps apart."""

    s_initial: float
    s_final: float
    start_step: int
    num_prunings: int
    interval: int

    def __post_init__(self):
        if not 0.0 <= self.s_initial <= self.s_final < 1.0:
            raise ValueError(
                f"need 0 <= s_initial <= s_final < 1, got {self.s_initial}, {self.s_final}"
            )
        if self.num_prunings < 1 or self.interval < 1 or self.start_step < 0:
            raise ValueError("num_prunings and interval must be >= 1, start_step >= 0")

    @property
    def end_step(self) -> int:
        return self.start_step + self.num_prunings * self.interval

    def prune_steps(self) -> list[int]:
        return [self.start_step + k * self.interval for k in range(self.num_prunings + 1)]


def cubic_sparsity(sched: CubicSchedule, t: int) -> float:
    """Target sparsity at step t; monotone, hits both endpoints exactly."""
    if t <= sched.start_step:
        return sched.s_initial
    if t >= sched.end_step:
        return sched.s_final
    u = (t - sched.start_step) / (sched.num_prunings * sched.interval)
    return sched.s_final + (sched.s_initial - sched.s_final) * (1.0 - u) ** 3


def _quota(sparsity: float, n: int) -> int:
    return int(math.floor(sparsity * n + 0.5))


def _prune_smallest(weights: np.ndarray, n_prune: int) -> np.ndarray:
    """Keep-mask that zeros the n_prune smallest-|w| entries (stable ties)."""
    mask = np.ones(weights.size)
    if n_prune > 0:
        order = np.argsort(np.abs(weights.ravel()), kind="stable")
        mask[order[:n_prune]] = 0.0
    return mask.reshape(weights.shape)


def _select_global(weights, target):
    sizes = [w.size for w in weights]
    flat = np.concatenate([np.abs(w).ravel() for w in weights])
    n_prune = _quota(target, flat.size)
    keep = np.ones(flat.size)
    keep[np.argsort(flat, kind="stable")[:n_prune]] = 0.0
    return _split(keep, weights, sizes)


def _select_uniform(weights, target):
    return PruneMask([_prune_smallest(w, _quota(target, w.size)) for w in weights])


def _split(flat_keep, weights, sizes):
    masks, pos = [], 0
    for w, n in zip(weights, sizes):
        masks.append(flat_keep[pos : pos + n].reshape(w.shape))
        pos += n
    return PruneMask(masks)


def _waterfill_proportional(need: float, sizes, capacity):
    """Spread ``need`` over layers proportionally to size, clipping at each
    layer's capacity and redistributing the overflow. Returns float allocations."""
    alloc = [0.0] * len(sizes)
    active = [i for i in range(len(sizes)) if capacity[i] > 0]
    remaining = float(need)
    while remaining > 1e-9 and active:
        pool = sum(sizes[i] for i in active)
        bump = remaining / pool
        overflow = [i for i in active if alloc[i] + bump * sizes[i] >= capacity[i]]
        if not overflow:
            for i in active:
                alloc[i] += bump * sizes[i]
            remaining = 0.0
            break
        for i in overflow:
            remaining -= capacity[i] - alloc[i]
            alloc[i] = float(capacity[i])
            active.remove(i)
    return alloc, remaining


def _select_uniform_plus(weights, target, layer_kinds):
    if layer_kinds is None or len(layer_kinds) != len(weights):
        raise ValueError("uniform_plus needs one layer kind per weight tensor")
    sizes = [w.size for w in weights]
    total = sum(sizes)
    target_prune = _quota(target, total)

    conv_idx = [i for i, k in enumerate(layer_kinds) if k == "conv2d"]
    dense_idx = [i for i, k in enumerate(layer_kinds) if k == "dense"]
    first_conv = conv_idx[0] if conv_idx else None
    last_dense = dense_idx[-1] if dense_idx else None

    quotas = [0] * len(weights)
    fixed = 0
    if last_dense is not None and last_dense != first_conv:
        quotas[last_dense] = min(_quota(target, sizes[last_dense]),
                                 _quota(LAST_DENSE_MAX_SPARSITY, sizes[last_dense]))
        fixed += quotas[last_dense]

    remaining_idx = [i for i in range(len(weights)) if i not in (first_conv, last_dense)]
    capacity = [0.0] * len(weights)
    for i in remaining_idx:
        capacity[i] = float(sizes[i])
    need = target_prune - fixed
    alloc, leftover = _waterfill_proportional(max(need, 0), sizes, capacity)
    if leftover > 0.5:
        constraints = []
        if first_conv is not None:
            constraints.append(f"first conv layer {first_conv} kept dense ({sizes[first_conv]} weights)")
        if last_dense is not None and last_dense != first_conv:
            constraints.append(
                f"last dense layer {last_dense} capped at sparsity {LAST_DENSE_MAX_SPARSITY}"
            )
        raise InfeasibleTargetError(
            f"uniform_plus cannot reach overall sparsity {target}: after redistributing "
            f"the protected layers' share proportionally over the remaining layers, "
            f"{int(round(leftover))} weights have nowhere to go; binding constraints: "
            + "; ".join(constraints)
        )
    for i in remaining_idx:
        quotas[i] = min(_quota(1.0, sizes[i]), int(math.floor(alloc[i] + 0.5)))
    return PruneMask([_prune_smallest(w, q) for w, q in zip(weights, quotas)])


def _erk_raw_density(shape) -> float:
    return sum(shape) / float(np.prod(shape))


def _select_erk(weights, target):
    sizes = [w.size for w in weights]
    total = sum(sizes)
    kept_budget = total - _quota(target, total)
    raw = [_erk_raw_density(w.shape) for w in weights]

    clipped: set[int] = set()
    densities = [1.0] * len(weights)
    for _ in range(len(weights) + 1):
        free = [i for i in range(len(weights)) if i not in clipped]
        budget_free = kept_budget - sum(sizes[i] for i in clipped)
        denom = sum(raw[i] * sizes[i] for i in free)
        if not free or denom == 0:
            break
        scale = budget_free / denom
        over = [i for i in free if scale * raw[i] >= 1.0]
        if not over:
            for i in free:
                densities[i] = max(scale * raw[i], 0.0)
            break
        clipped.update(over)
    quotas = []
    for i, n in enumerate(sizes):
        kept = n if i in clipped else min(int(math.floor(densities[i] * n + 0.5)), n)
        quotas.append(n - kept)
    return PruneMask([_prune_smallest(w, q) for w, q in zip(weights, quotas)])


def lamp_scores(weights: np.ndarray) -> np.ndarray:
    """Suffix-normalized squared magnitudes: each weight's square divided by
    the sum of squares of all weights ranked at or above it (|w| ascending).
    The layer's largest weight always scores exactly 1."""
    flat = np.abs(np.asarray(weights, dtype=np.float64)).ravel()
    order = np.argsort(flat, kind="stable")
    sq = flat[order] ** 2
    suffix = np.cumsum(sq[::-1])[::-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        sorted_scores = np.where(suffix > 0.0, sq / suffix, 0.0)
    scores = np.empty_like(flat)
    scores[order] = sorted_scores
    return scores.reshape(weights.shape)


def _select_lamp(weights, target):
    sizes = [w.size for w in weights]
    flat_scores = np.concatenate([lamp_scores(w).ravel() for w in weights])
    n_prune = _quota(target, flat_scores.size)
    keep = np.ones(flat_scores.size)
    keep[np.argsort(flat_scores, kind="stable")[:n_prune]] = 0.0
    return _split(keep, weights, sizes)


def select_mask(weights, criterion: str, target_sparsity: float,
                layer_kinds=None) -> PruneMask:
    """Choose which weights survive at an overall sparsity target.

    ``weights`` is the list of prunable weight tensors in layer order;
    ``layer_kinds`` (parallel list of "dense"/"conv2d") is only needed by
    uniform_plus. Pure function of the weights and config.
    """
    if not 0.0 <= target_sparsity < 1.0:
        raise ValueError(f"target sparsity must lie in [0, 1), got {target_sparsity}")
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    weights = [np.asarray(w, dtype=np.float64) for w in weights]
    if not weights:
        raise ValueError("no prunable weight tensors given")
    if criterion == "global":
        return _select_global(weights, target_sparsity)
    if criterion == "uniform":
        return _select_uniform(weights, target_sparsity)
    if criterion == "uniform_plus":
        return _select_uniform_plus(weights, target_sparsity, layer_kinds)
    if criterion == "erk":
        return _select_erk(weights, target_sparsity)
    return _select_lamp(weights, target_sparsity)


def apply_mask(net, mask: PruneMask, mode: str) -> None:
    """Attach a mask to a network's prunable weights.

    hard: zero masked weights and momentum entries, and intersect with any
    existing mask so the kept set can only shrink across cycles.
    soft: store the mask for forward/backward masking only; stored values and
    buffers stay dense and a later selection may recompute the mask from them.
    """
    from . import nn  # local import to avoid a cycle

    if mode not in nn.MASK_MODES:
        raise ValueError(f"mode must be one of {nn.MASK_MODES}, got {mode!r}")
    prunable = net.prunable_weights()
    if len(prunable) != len(mask.masks):
        raise ValueError(
            f"mask has {len(mask.masks)} layers but network has {len(prunable)} prunable tensors"
        )
    for (i, _, param), m in zip(prunable, mask.masks):
        if m.shape != param.value.shape:
            raise ValueError(f"mask shape {m.shape} does not match layer {i} "
                             f"weight shape {param.value.shape}")
    for (_, _, param), m in zip(prunable, mask.masks):
        if mode == nn.HARD:
            new = m if param.mask is None else m * param.mask
            param.mask = new
            param.value *= new
            param.momentum_buf *= new
        else:
            param.mask = m.copy()
    net.mask_mode = mode


def current_mask(net) -> PruneMask:
    """The network's effective mask (all-ones where nothing was pruned)."""
    masks = []
    for _, _, param in net.prunable_weights():
        masks.append(np.ones(param.value.shape) if param.mask is None else param.mask.copy())
    return PruneMask(masks)


def detect_layer_collapse(mask: PruneMask) -> list[int]:
    """Indices of prunable layers whose mask keeps nothing."""
    return [i for i, kept in enumerate(mask.kept_per_layer()) if kept == 0]
