"""Evaluation quantities: pruning stability, theoretical FLOP speedup,
and sparsity accounting.

FLOPs are counted per sample, with one multiply-add = 2 FLOPs. Activation and
bias work is included identically in the dense and sparse totals (it does not
shrink under unstructured sparsity), which slightly deflates speedups compared
to weight-only counting; the report exposes both conventions. Counts depend
only on mask positions, never on weight values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .pruning import PruneMask, current_mask


class UndefinedMetricError(ValueError):
    """Metric denominator is zero (e.g. stability with zero pre-accuracy)."""


@dataclass(frozen=True)
class StabilityRecord:
    accuracy_before: float
    accuracy_after: float

    @property
    def value(self) -> float:
        return stability(self.accuracy_before, self.accuracy_after)


def stability(accuracy_before: float, accuracy_after: float) -> float:
    """1 minus the relative accuracy drop caused by a pruning step.

    Equals 1 when pruning had no effect; values above 1 mean pruning improved
    accuracy and are reported as-is.
    """
    if accuracy_before <= 0.0:
        raise UndefinedMetricError(
            f"stability undefined for pre-pruning accuracy {accuracy_before}"
        )
    return 1.0 - (accuracy_before - accuracy_after) / accuracy_before


@dataclass(frozen=True)
class LayerFlops:
    name: str
    dense_weight: int      # multiply-add FLOPs with a dense weight tensor
    sparse_weight: int     # same with masked weights skipped
    bias: int
    activation: int


@dataclass(frozen=True)
class FlopsReport:
    per_layer: tuple[LayerFlops, ...]
    collapsed_layers: tuple[int, ...] = field(default=())

    @property
    def dense_total(self) -> int:
        return sum(l.dense_weight + l.bias + l.activation for l in self.per_layer)

    @property
    def sparse_total(self) -> int:
        return sum(l.sparse_weight + l.bias + l.activation for l in self.per_layer)

    @property
    def speedup(self) -> float:
        sparse = self.sparse_total
        return math.inf if sparse == 0 else self.dense_total / sparse

    @property
    def weight_only_speedup(self) -> float:
        dense = sum(l.dense_weight for l in self.per_layer)
        sparse = sum(l.sparse_weight for l in self.per_layer)
        return math.inf if sparse == 0 else dense / sparse

    @property
    def collapsed(self) -> bool:
        return bool(self.collapsed_layers)

    def to_dict(self) -> dict:
        return {
            "dense_total": self.dense_total,
            "sparse_total": self.sparse_total,
            "speedup": self.speedup,
            "weight_only_speedup": self.weight_only_speedup,
            "collapsed_layers": list(self.collapsed_layers),
            "per_layer": [
                {"name": l.name, "dense_weight": l.dense_weight,
                 "sparse_weight": l.sparse_weight, "bias": l.bias,
                 "activation": l.activation}
                for l in self.per_layer
            ],
        }


def count_flops(net: nn.Network, mask: PruneMask | None = None,
                input_shape=None) -> FlopsReport:
    """Per-sample inference FLOPs of the dense and masked network."""
    if mask is None:
        mask = current_mask(net)
    shape = tuple(input_shape) if input_shape is not None else net.input_shape
    rows = []
    mask_iter = iter(mask.masks)
    for i, layer in enumerate(net.layers):
        name = f"layer{i}:{layer.kind}"
        if layer.kind == "dense":
            m = next(mask_iter)
            nnz = int(m.sum())
            dense = 2 * layer.n_in * layer.n_out
            sparse = 2 * nnz
            bias = layer.n_out if layer.has_bias else 0
            rows.append(LayerFlops(name, dense, sparse, bias, 0))
        elif layer.kind == "conv2d":
            m = next(mask_iter)
            nnz = int(m.sum())
            out_c, out_h, out_w = layer.output_shape(shape)
            positions = out_h * out_w
            dense = 2 * layer.c_in * layer.k_h * layer.k_w * layer.c_out * positions
            sparse = 2 * nnz * positions
            bias = out_c * positions if layer.has_bias else 0
            rows.append(LayerFlops(name, dense, sparse, bias, 0))
        else:
            elements = int(np.prod(shape))
            rows.append(LayerFlops(name, 0, 0, 0, elements))
        shape = layer.output_shape(shape)
    collapsed = tuple(i for i, kept in enumerate(mask.kept_per_layer()) if kept == 0)
    return FlopsReport(per_layer=tuple(rows), collapsed_layers=collapsed)


def sparsity_report(mask: PruneMask) -> dict:
    """Overall and per-layer sparsity, consistent with the mask's caches."""
    return {
        "overall": mask.sparsity(),
        "kept": mask.kept,
        "total": mask.total,
        "per_layer": mask.sparsity_per_layer(),
        "kept_per_layer": mask.kept_per_layer(),
    }
