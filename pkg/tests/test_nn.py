import math

import numpy as np
import pytest
from conftest import finite_difference_grads, random_network

from prunekit import nn


def relative_error(a, b, floor=1e-3):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


# --- forward -----------------------------------------------------------------

def test_dense_identity_weights():
    layer = nn.Dense(2, 2, has_bias=False)
    layer.weight.value[:] = np.eye(2)
    net = nn.Network([layer], (2,))
    out = net.forward(np.array([[3.0, 4.0]]))
    assert np.array_equal(out, [[3.0, 4.0]])


def test_dense_sum_plus_one():
    layer = nn.Dense(2, 1)
    layer.weight.value[:] = [[1.0, 1.0]]
    layer.bias.value[:] = [1.0]
    net = nn.Network([layer], (2,))
    out = net.forward(np.array([[2.0, 3.0]]))
    assert np.array_equal(out, [[6.0]])


def test_conv_all_ones_kernel():
    # direct convolution by hand: every 2x2 window of ones sums to 4
    layer = nn.Conv2D(1, 1, 2, 2, stride=1, padding=0, has_bias=False)
    layer.weight.value[:] = 1.0
    net = nn.Network([layer], (1, 3, 3))
    out = net.forward(np.ones((1, 1, 3, 3)))
    assert out.shape == (1, 1, 2, 2)
    assert np.array_equal(out, np.full((1, 1, 2, 2), 4.0))


def test_forward_shape_mismatch_names_layer():
    net = nn.Network([nn.Dense(3, 2)], (3,))
    with pytest.raises(nn.ConfigurationError):
        net.forward(np.zeros((1, 4)))
    with pytest.raises(nn.ConfigurationError, match="layer 1"):
        nn.Network([nn.Dense(3, 2), nn.Dense(5, 2)], (3,))


def test_forward_finite_on_finite_inputs(rng):
    for _ in range(5):
        net, batch, _ = random_network(rng)
        assert np.all(np.isfinite(net.forward(batch)))


# --- loss --------------------------------------------------------------------

def test_loss_uniform_softmax_is_ln2():
    loss, dlogits = nn.loss_softmax_ce(np.array([[0.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(math.log(2.0), abs=1e-15)
    np.testing.assert_allclose(dlogits, [[-0.5, 0.5]])


def test_loss_confident_logits():
    # closed form: -log softmax([10, -10])[0] = log(1 + e^-20)
    expected = math.log1p(math.exp(-20.0))
    loss, _ = nn.loss_softmax_ce(np.array([[10.0, -10.0]]), np.array([0]))
    assert loss == pytest.approx(expected, rel=1e-12)
    assert loss == pytest.approx(2.0611536e-9, rel=1e-6)


def test_loss_mean_invariance_over_identical_rows():
    row = np.array([[1.0, -0.3, 0.7]])
    single, _ = nn.loss_softmax_ce(row, np.array([2]))
    double, _ = nn.loss_softmax_ce(np.vstack([row, row]), np.array([2, 2]))
    assert double == pytest.approx(single, abs=1e-15)


def test_loss_shift_invariance():
    logits = np.array([[0.5, -1.0, 2.0], [3.0, 3.0, -4.0]])
    labels = np.array([2, 0])
    base, _ = nn.loss_softmax_ce(logits, labels)
    shifted, _ = nn.loss_softmax_ce(logits + 123.456, labels)
    assert abs(base - shifted) < 1e-12


def test_loss_label_out_of_range():
    with pytest.raises(ValueError, match="labels"):
        nn.loss_softmax_ce(np.zeros((1, 3)), np.array([3]))


# --- backward ----------------------------------------------------------------

def test_backward_linear_map_gradient():
    layer = nn.Dense(1, 1, has_bias=False)
    layer.weight.value[:] = [[0.5]]
    net = nn.Network([layer], (1,))
    x = np.array([[2.0]])
    net.forward(x)
    net.backward(np.array([[1.0]]))  # d(loss)/d(logit) = 1 so dW = x = 2
    np.testing.assert_allclose(layer.weight.grad, [[2.0]])


def test_backward_matches_finite_differences(rng):
    for _ in range(3):
        net, batch, labels = random_network(rng)
        loss, dlogits = nn.loss_softmax_ce(net.forward(batch), labels)
        net.backward(dlogits)
        fd = finite_difference_grads(net, batch, labels)
        for p, ref in zip(net.parameters(), fd):
            assert relative_error(p.grad, ref) < 1e-4


def test_backward_before_forward_raises():
    net = nn.Network([nn.Dense(2, 2)], (2,))
    with pytest.raises(nn.StateError):
        net.backward(np.zeros((1, 2)))


def test_backward_fully_masked_hard_param_grad_is_zero():
    layer = nn.Dense(2, 2, has_bias=False)
    layer.weight.value[:] = [[1.0, 2.0], [3.0, 4.0]]
    layer.weight.mask = np.zeros((2, 2))
    layer.weight.value *= layer.weight.mask
    net = nn.Network([layer], (2,))
    net.mask_mode = nn.HARD
    net.forward(np.array([[1.0, 1.0]]))
    net.backward(np.array([[1.0, 1.0]]))
    assert np.array_equal(layer.weight.grad, np.zeros((2, 2)))


def test_backward_soft_mask_keeps_dense_gradient():
    layer = nn.Dense(2, 1, has_bias=False)
    layer.weight.value[:] = [[5.0, 2.0]]
    layer.weight.mask = np.array([[0.0, 1.0]])
    net = nn.Network([layer], (2,))
    net.mask_mode = nn.SOFT
    out = net.forward(np.array([[3.0, 4.0]]))
    np.testing.assert_allclose(out, [[8.0]])  # masked 5 contributes nothing
    net.backward(np.array([[1.0]]))
    # gradient w.r.t. the effective weight is the input, dense across the mask
    np.testing.assert_allclose(layer.weight.grad, [[3.0, 4.0]])
    np.testing.assert_allclose(layer.weight.value, [[5.0, 2.0]])  # stored value untouched


# --- sgd ---------------------------------------------------------------------

def _param(value):
    return nn.Parameter(np.array(value, dtype=float), prunable=True)


def test_sgd_vanilla_step():
    p = _param([1.0])
    p.grad = np.array([0.5])
    nn.sgd_step([p], 0.1, nn.SgdConfig(momentum=0.0, weight_decay=0.0))
    assert p.value == pytest.approx([0.95])


def test_sgd_momentum_unroll():
    # two steps, grad 1, lr 1: buf becomes 1 then 1.9, value 0 -> -1 -> -2.9
    p = _param([0.0])
    cfg = nn.SgdConfig(momentum=0.9, weight_decay=0.0)
    for _ in range(2):
        p.grad = np.array([1.0])
        nn.sgd_step([p], 1.0, cfg)
    assert p.value == pytest.approx([-2.9])


def test_sgd_weight_decay_coupled():
    p = _param([2.0])
    p.grad = np.array([0.0])
    nn.sgd_step([p], 0.5, nn.SgdConfig(momentum=0.0, weight_decay=0.1))
    assert p.value == pytest.approx([2.0 - 0.5 * 0.2])


def test_sgd_hard_mask_invariant():
    p = _param([1.0, 2.0])
    p.mask = np.array([0.0, 1.0])
    p.value *= p.mask
    cfg = nn.SgdConfig(momentum=0.9, weight_decay=1e-4, mask_mode=nn.HARD)
    for _ in range(100):
        p.grad = np.array([0.3, -0.2])
        nn.sgd_step([p], 0.05, cfg)
    assert p.value[0] == 0.0
    assert p.momentum_buf[0] == 0.0


def test_sgd_soft_mask_keeps_dense_buffers():
    p = _param([1.0, 2.0])
    p.mask = np.array([0.0, 1.0])
    cfg = nn.SgdConfig(momentum=0.9, weight_decay=0.0, mask_mode=nn.SOFT)
    p.grad = np.array([0.3, -0.2])
    nn.sgd_step([p], 0.1, cfg)
    assert p.value[0] != 0.0
    assert p.momentum_buf[0] != 0.0


def test_sgd_negative_lr_rejected():
    with pytest.raises(ValueError):
        nn.sgd_step([_param([1.0])], -0.1, nn.SgdConfig())


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        nn.SgdConfig(momentum=1.0)
    with pytest.raises(ValueError):
        nn.SgdConfig(weight_decay=-1e-4)
    with pytest.raises(ValueError):
        nn.SgdConfig(mask_mode="fuzzy")


# --- grad_check --------------------------------------------------------------

def test_grad_check_passes_on_random_net(rng):
    net, batch, labels = random_network(rng)
    report = nn.grad_check(net, batch, labels, h=1e-5, tol=1e-4)
    assert report.passed, report.per_layer


def test_grad_check_zero_input_only_bias_grad():
    layer = nn.Dense(3, 2)
    layer.weight.value[:] = np.arange(6.0).reshape(2, 3)
    net = nn.Network([layer], (3,))
    batch = np.zeros((2, 3))
    labels = np.array([0, 0])  # identical labels so the bias gradients cannot cancel
    loss, dlogits = nn.loss_softmax_ce(net.forward(batch), labels)
    net.backward(dlogits)
    assert np.array_equal(layer.weight.grad, np.zeros((2, 3)))
    assert np.any(layer.bias.grad != 0.0)
    assert nn.grad_check(net, batch, labels).passed


def test_grad_check_detects_corruption(rng):
    net, batch, labels = random_network(rng, with_conv=False)

    original = nn.Dense.backward

    def corrupted(self, dy, mask_mode):
        dx = original(self, dy, mask_mode)
        self.weight.grad = self.weight.grad + 1.0
        return dx

    nn.Dense.backward = corrupted
    try:
        report = nn.grad_check(net, batch, labels)
    finally:
        nn.Dense.backward = original
    assert not report.passed
    assert any(err >= 1e-4 for name, err in report.per_layer.items() if "dense" in name)


# --- determinism & checkpoints ------------------------------------------------

def test_init_is_seed_deterministic():
    a = nn.Dense(4, 3, rng=np.random.default_rng(7))
    b = nn.Dense(4, 3, rng=np.random.default_rng(7))
    assert np.array_equal(a.weight.value, b.weight.value)
    bound = math.sqrt(6.0 / (4 + 3))
    assert np.all(np.abs(a.weight.value) <= bound)
    assert np.array_equal(a.bias.value, np.zeros(3))


def test_checkpoint_roundtrip_bitexact(tmp_path, rng):
    net, batch, labels = random_network(rng)
    loss, dlogits = nn.loss_softmax_ce(net.forward(batch), labels)
    net.backward(dlogits)
    nn.sgd_step(net.parameters(), 0.1, nn.SgdConfig())
    net.prunable_weights()[0][2].mask = np.zeros_like(net.prunable_weights()[0][2].value)
    state = np.random.default_rng(5).bit_generator.state
    path = tmp_path / "ckpt.npz"
    nn.save_checkpoint(path, net, step=17, cycle=3, rng_state=state)
    restored, step, cycle, rng_state = nn.load_checkpoint(path)
    assert step == 17 and cycle == 3 and rng_state == state
    for p, q in zip(net.parameters(), restored.parameters()):
        assert np.array_equal(p.value, q.value)
        assert np.array_equal(p.momentum_buf, q.momentum_buf)
        assert (p.mask is None) == (q.mask is None)
        if p.mask is not None:
            assert np.array_equal(p.mask, q.mask)
    assert np.array_equal(net.forward(batch), restored.forward(batch))
