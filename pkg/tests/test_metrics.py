import math

import numpy as np
import pytest
from conftest import random_network

from prunekit import nn
from prunekit.metrics import (FlopsReport, UndefinedMetricError, count_flops,
                              sparsity_report, stability)
from prunekit.pruning import PruneMask, apply_mask, current_mask, select_mask


# --- stability ----------------------------------------------------------------

def test_stability_no_drop():
    assert stability(0.935, 0.935) == 1.0


def test_stability_half_drop():
    assert stability(0.90, 0.45) == 0.5


@pytest.mark.parametrize("acc", [0.1, 0.5, 0.99])
def test_stability_identity(acc):
    assert stability(acc, acc) == 1.0


def test_stability_forward_masking_has_no_further_effect(rng):
    # a method that already evaluates through the mask loses nothing when the
    # mask is finally baked in, so before == after and stability is exactly 1
    l1 = nn.Dense(6, 4, rng=rng)
    net = nn.Network([l1], (6,))
    mask = select_mask([l1.weight.value], "global", 0.5)
    apply_mask(net, mask, nn.SOFT)
    x = rng.standard_normal((5, 6))
    soft_out = net.forward(x)
    apply_mask(net, mask, nn.HARD)
    hard_out = net.forward(x)
    np.testing.assert_array_equal(soft_out, hard_out)
    assert stability(0.8, 0.8) == 1.0


def test_stability_above_one_reported_as_is():
    assert stability(0.5, 0.6) == pytest.approx(1.2)


def test_stability_zero_pre_accuracy():
    with pytest.raises(UndefinedMetricError):
        stability(0.0, 0.5)


# --- flops ----------------------------------------------------------------------

def enumerate_flops(net, mask):
    """Brute-force oracle: walk every nonzero multiply-add explicitly."""
    shape = net.input_shape
    dense_total = 0
    sparse_total = 0
    mask_iter = iter(mask.masks)
    for layer in net.layers:
        if layer.kind == "dense":
            m = next(mask_iter)
            for j in range(layer.n_out):
                for i in range(layer.n_in):
                    dense_total += 2
                    if m[j, i] == 1.0:
                        sparse_total += 2
            if layer.has_bias:
                dense_total += layer.n_out
                sparse_total += layer.n_out
        elif layer.kind == "conv2d":
            m = next(mask_iter)
            _, out_h, out_w = layer.output_shape(shape)
            for p in range(out_h):
                for q in range(out_w):
                    for o in range(layer.c_out):
                        for c in range(layer.c_in):
                            for i in range(layer.k_h):
                                for j in range(layer.k_w):
                                    dense_total += 2
                                    if m[o, c, i, j] == 1.0:
                                        sparse_total += 2
                    if layer.has_bias:
                        dense_total += layer.c_out
                        sparse_total += layer.c_out
        else:
            n = int(np.prod(shape))
            dense_total += n
            sparse_total += n
        shape = layer.output_shape(shape)
    return dense_total, sparse_total


def test_dense_90pct_uniform_sparse():
    layer = nn.Dense(100, 10, has_bias=False)
    net = nn.Network([layer], (100,))
    mask = select_mask([np.arange(1.0, 1001.0).reshape(10, 100)], "uniform", 0.9)
    report = count_flops(net, mask)
    assert report.dense_total == 2000
    assert report.sparse_total == 200
    assert report.speedup == 10.0


def test_all_ones_speedup_exactly_one(rng):
    net, _, _ = random_network(rng)
    report = count_flops(net)
    assert report.speedup == 1.0
    assert report.dense_total == report.sparse_total


def test_conv_hand_count():
    layer = nn.Conv2D(1, 1, 2, 2, stride=1, padding=0, has_bias=False)
    net = nn.Network([layer], (1, 3, 3))
    report = count_flops(net)
    assert report.dense_total == 32  # 4 output positions x 4 kernel weights x 2


def test_count_matches_enumeration_oracle(rng):
    for _ in range(8):
        net, _, _ = random_network(rng)
        prunable = [p for _, _, p in net.prunable_weights()]
        target = float(rng.uniform(0.0, 0.9))
        mask = select_mask([p.value for p in prunable], "uniform", target)
        report = count_flops(net, mask)
        dense_ref, sparse_ref = enumerate_flops(net, mask)
        assert report.dense_total == dense_ref
        assert report.sparse_total == sparse_ref


def test_speedup_invariant_to_weight_values(rng):
    net, _, _ = random_network(rng, with_conv=True)
    prunable = [p for _, _, p in net.prunable_weights()]
    mask = select_mask([p.value for p in prunable], "global", 0.7)
    before = count_flops(net, mask)
    for p in prunable:
        p.value *= 17.5
    after = count_flops(net, mask)
    assert before.dense_total == after.dense_total
    assert before.sparse_total == after.sparse_total
    assert before.speedup == after.speedup


def test_speedup_monotone_as_mask_shrinks(rng):
    layer = nn.Dense(40, 20, rng=rng)
    net = nn.Network([layer], (40,))
    previous = 1.0
    for target in (0.0, 0.3, 0.6, 0.9):
        mask = select_mask([layer.weight.value], "global", target)
        speedup = count_flops(net, mask).speedup
        assert speedup >= previous
        previous = speedup


def test_collapsed_network_infinite_sentinel():
    layer = nn.Dense(4, 3, has_bias=False)
    net = nn.Network([layer], (4,))
    mask = PruneMask([np.zeros((3, 4))])
    report = count_flops(net, mask)
    assert report.weight_only_speedup == math.inf
    assert report.speedup == math.inf  # no bias, no activations: F_s is zero
    assert report.collapsed
    assert report.collapsed_layers == (0,)


def test_flops_report_serializes():
    layer = nn.Dense(4, 3)
    net = nn.Network([layer], (4,))
    d = count_flops(net).to_dict()
    assert d["speedup"] == 1.0
    assert len(d["per_layer"]) == 1


# --- sparsity report ---------------------------------------------------------------

def test_sparsity_report_all_ones():
    assert sparsity_report(PruneMask([np.ones(10)]))["overall"] == 0.0


def test_sparsity_report_all_zeros():
    assert sparsity_report(PruneMask([np.zeros(10)]))["overall"] == 1.0


def test_sparsity_report_fraction():
    m = np.ones(1000)
    m[:150] = 0.0
    report = sparsity_report(PruneMask([m]))
    assert report["overall"] == pytest.approx(0.15)
    assert report["kept"] == 850
    assert report["total"] == 1000
