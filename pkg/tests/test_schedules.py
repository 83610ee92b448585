import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prunekit import schedules
from prunekit.schedules import (
    AllrDiscountInput, BaseSchedule, DegenerateModelError, allr_cycle_policy,
    compute_allr_discount, translate,
)

GOLDEN = Path(__file__).parent / "data" / "cifar10_stepped_epoch_lr.csv"


def stepped_origin(horizon=200):
    # 0.1 for the first 45% of the run, then x0.1 at 45% and again at 90%
    return BaseSchedule(kind="stepped", initial_lr=0.1, horizon=horizon,
                        milestones=(0.45, 0.90), decay_factors=(0.1, 0.1))


# --- base schedules ------------------------------------------------------------

def test_stepped_reference_epochs():
    sched = stepped_origin()
    assert sched.lr_at(0) == 0.1          # epoch 1
    assert sched.lr_at(89) == 0.1         # epoch 90
    assert sched.lr_at(99) == pytest.approx(0.01)   # epoch 100
    assert sched.lr_at(189) == pytest.approx(0.001)  # epoch 190


def test_stepped_matches_golden_file():
    sched = stepped_origin()
    lines = GOLDEN.read_text().strip().splitlines()
    assert lines[0] == "step,lr"
    for line in lines[1:]:
        t, lr = line.split(",")
        assert sched.lr_at(int(t)) == float(lr)  # bit-exact


def test_linear_endpoints():
    sched = BaseSchedule(kind="linear", initial_lr=0.1, horizon=50)
    assert sched.lr_at(0) == 0.1
    assert sched.lr_at(49) == pytest.approx(0.1 / 50)  # zero within one quantum


def test_cosine_midpoint():
    sched = BaseSchedule(kind="cosine", initial_lr=0.2, horizon=100)
    assert sched.lr_at(50) == pytest.approx(0.1, abs=1e-15)


def test_constant():
    sched = BaseSchedule(kind="constant", initial_lr=0.05, horizon=10)
    assert all(sched.lr_at(t) == 0.05 for t in range(10))


def test_warmup_rises_to_nominal_value():
    sched = BaseSchedule(kind="constant", initial_lr=0.4, horizon=100, warmup_frac=0.1)
    assert sched.warmup_steps == 10
    assert sched.lr_at(0) == 0.0
    values = [sched.lr_at(t) for t in range(10)]
    assert all(b > a for a, b in zip(values, values[1:]))
    assert sched.lr_at(10) == 0.4
    assert sched.lr_at(5) == pytest.approx(0.4 * 0.5 * (1 - math.cos(math.pi * 0.5)))


def test_out_of_range_step_rejected():
    sched = BaseSchedule(kind="linear", initial_lr=0.1, horizon=5)
    with pytest.raises(ValueError):
        sched.lr_at(5)
    with pytest.raises(ValueError):
        sched.lr_at(-1)


def test_milestone_validation():
    with pytest.raises(ValueError):
        BaseSchedule(kind="stepped", initial_lr=0.1, horizon=10,
                     milestones=(0.9, 0.45), decay_factors=(0.1, 0.1))
    with pytest.raises(ValueError):
        BaseSchedule(kind="stepped", initial_lr=0.1, horizon=10,
                     milestones=(1.0,), decay_factors=(0.1,))


# --- translations ---------------------------------------------------------------

def test_ft_is_constant_final_value():
    origin = stepped_origin()
    ft = translate(origin, "ft", 60)
    expected = origin.lr_at(199)
    assert all(ft.lr_at(t) == expected for t in range(60))  # bit-exact


def test_lrw_replays_tail():
    origin = stepped_origin()
    lrw = translate(origin, "lrw", 60)
    for t in range(60):
        assert lrw.lr_at(t) == origin.lr_at(140 + t)
    # tail covers origin epochs 141..200: 0.01 until the last 20, then 0.001
    assert lrw.lr_at(0) == pytest.approx(0.01)
    assert lrw.lr_at(39) == pytest.approx(0.01)
    assert lrw.lr_at(40) == pytest.approx(0.001)


def test_lrw_longer_than_origin_rejected():
    with pytest.raises(ValueError):
        translate(stepped_origin(), "lrw", 201)


def test_slr_relative_position_identity():
    origin = stepped_origin(200)
    slr = translate(origin, "slr", 20)
    assert slr.warmup_steps == 2
    # relative position 0.5 sits inside the second region of the origin
    assert slr.lr_at(10) == pytest.approx(0.01)
    # strictly inside a region, compression reproduces the origin's region value
    def region_value(x):
        lr = 0.1
        for m, f in ((0.45, 0.1), (0.90, 0.1)):
            if x >= m:
                lr *= f
        return lr
    for t in range(2, 20):
        x = t / 20
        if min(abs(x - 0.45), abs(x - 0.90)) > 1 / 20:
            assert slr.lr_at(t) == region_value(x)


def test_clr_is_warmed_cosine_restart():
    origin = stepped_origin()
    clr = translate(origin, "clr", 40)
    assert clr.warmup_steps == 4
    assert clr.initial_value == 0.1
    ref = BaseSchedule(kind="cosine", initial_lr=0.1, horizon=40, warmup_frac=0.1)
    assert all(clr.lr_at(t) == ref.lr_at(t) for t in range(40))


def test_llr_linearity_and_final_value():
    origin = stepped_origin()
    llr = translate(origin, "llr", 40)
    n = llr.warmup_steps
    values = [llr.lr_at(t) for t in range(n, 40)]
    second_diffs = [values[i + 2] - 2 * values[i + 1] + values[i]
                    for i in range(len(values) - 2)]
    assert max(abs(d) for d in second_diffs) <= 4 * np.finfo(float).eps * 0.1
    assert llr.lr_at(39) <= 0.1 / (0.9 * 40) + 1e-15
    assert llr.lr_at(39) == pytest.approx(0.1 / 36)


def test_allr_discount_scales_initial_value():
    origin = stepped_origin()
    allr = translate(origin, "allr", 40, discount=0.25)
    llr = translate(origin, "llr", 40)
    for t in range(40):
        assert allr.lr_at(t) == pytest.approx(0.25 * llr.lr_at(t), abs=1e-18)
    assert allr.initial_value == pytest.approx(0.025)


def test_translate_validation():
    origin = stepped_origin()
    with pytest.raises(ValueError):
        translate(origin, "nope", 10)
    with pytest.raises(ValueError):
        translate(origin, "llr", 0)
    with pytest.raises(ValueError):
        translate(origin, "allr", 10, discount=1.5)


@given(st.sampled_from(schedules.SCHEMES),
       st.integers(min_value=1, max_value=80),
       st.floats(min_value=0.0, max_value=1.0))
@settings(max_examples=120, deadline=None)
def test_all_schemes_nonnegative(scheme, retrain_steps, discount):
    origin = stepped_origin(100)
    if scheme == "lrw":
        retrain_steps = min(retrain_steps, 100)
    sched = translate(origin, scheme, retrain_steps, discount)
    assert all(sched.lr_at(t) >= 0.0 for t in range(retrain_steps))


# --- allr discount ---------------------------------------------------------------

def test_allr_discount_hand_example():
    # prune the smallest of [1, 2, 2]: distance 1, norm 3, s = 1/3
    inp = AllrDiscountInput(np.array([1.0, 2.0, 2.0]), np.array([0.0, 2.0, 2.0]),
                            pruned_fraction=1 / 3, retrain_steps=1, origin_steps=100)
    expected = 1.0 / (3.0 * math.sqrt(1 / 3))
    assert compute_allr_discount(inp) == pytest.approx(expected, abs=1e-3)
    assert expected == pytest.approx(0.577, abs=1e-3)


def test_allr_discount_zero_distance_gives_time_ratio():
    w = np.array([0.0, 0.0, 3.0, 4.0])
    inp = AllrDiscountInput(w, np.array([0.0, 0.0, 3.0, 4.0]),
                            pruned_fraction=0.5, retrain_steps=20, origin_steps=200)
    assert compute_allr_discount(inp) == pytest.approx(0.1)


def test_allr_discount_ratio_dominates_small_distance():
    w = np.array([1e-6, 1.0, 1.0, 1.0])
    wp = w.copy()
    wp[0] = 0.0
    inp = AllrDiscountInput(w, wp, pruned_fraction=0.25, retrain_steps=20, origin_steps=200)
    assert compute_allr_discount(inp) == pytest.approx(0.1)


def test_allr_discount_degenerate_model():
    z = np.zeros(3)
    with pytest.raises(DegenerateModelError):
        compute_allr_discount(AllrDiscountInput(z, z, 0.5, 1, 10))


def test_allr_input_rejects_non_subset():
    with pytest.raises(ValueError):
        AllrDiscountInput(np.array([1.0, 2.0]), np.array([1.0, 2.5]), 0.5, 1, 10)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=200, deadline=None)
def test_allr_d1_bounded_for_global_magnitude_pruning(seed):
    # pruning the smallest s-fraction by |w| keeps the distance term below 1
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(int(rng.integers(2, 64)))
    s = float(rng.uniform(0.01, 1.0))
    k = max(1, int(round(s * w.size)))
    order = np.argsort(np.abs(w), kind="stable")
    wp = w.copy()
    wp[order[:k]] = 0.0
    d1 = np.linalg.norm(w - wp) / (np.linalg.norm(w) * math.sqrt(k / w.size))
    assert d1 <= 1.0 + 1e-12


def test_allr_cycle_policy():
    assert allr_cycle_policy(1, 3) is False
    assert allr_cycle_policy(3, 3) is True
    assert allr_cycle_policy(1, 1) is True
    with pytest.raises(ValueError):
        allr_cycle_policy(0, 3)
    with pytest.raises(ValueError):
        allr_cycle_policy(4, 3)
