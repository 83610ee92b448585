import numpy as np
import pytest

from prunekit import nn


def finite_difference_grads(net, batch, labels, h=1e-5):
    """Independent central-difference oracle for every parameter gradient."""

    def total_loss():
        return nn.loss_softmax_ce(net.forward(batch), labels)[0]

    grads = []
    for p in net.parameters():
        flat = p.value.reshape(-1)
        fd = np.zeros_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = total_loss()
            flat[k] = orig - h
            down = total_loss()
            flat[k] = orig
            fd[k] = (up - down) / (2 * h)
        grads.append(fd.reshape(p.value.shape))
    return grads


def random_network(rng, max_dim=8, with_conv=None):
    """Small random net (dims <= max_dim) plus a matching batch and labels."""
    with_conv = rng.random() < 0.5 if with_conv is None else with_conv
    layers = []
    if with_conv:
        c = int(rng.integers(1, 4))
        hw = int(rng.integers(4, max_dim + 1))
        input_shape = (c, hw, hw)
        shape = input_shape
        for _ in range(int(rng.integers(1, 3))):
            c_out = int(rng.integers(1, 5))
            k = int(rng.integers(1, min(4, shape[1]) + 1))
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, 2))
            layer = nn.Conv2D(shape[0], c_out, k, k, stride, padding,
                              has_bias=bool(rng.integers(0, 2)), rng=rng)
            try:
                shape = layer.output_shape(shape)
            except nn.ConfigurationError:
                break
            layers.append(layer)
            if rng.random() < 0.5:
                layers.append(nn.ReLU())
        layers.append(nn.Flatten())
        flat = int(np.prod(shape))
    else:
        flat = int(rng.integers(2, max_dim + 1))
        input_shape = (flat,)
    for _ in range(int(rng.integers(0, 3))):
        units = int(rng.integers(2, max_dim + 1))
        layers.append(nn.Dense(flat, units, has_bias=bool(rng.integers(0, 2)), rng=rng))
        layers.append(nn.ReLU())
        flat = units
    n_classes = int(rng.integers(2, 5))
    layers.append(nn.Dense(flat, n_classes, rng=rng))
    net = nn.Network(layers, input_shape)
    # randomize biases: zero-initialized biases park dead ReLU rows exactly on
    # the kink, where central differences disagree with the subgradient
    for p in net.parameters():
        if not p.prunable:
            p.value[:] = 0.1 * rng.standard_normal(p.value.shape)
    batch_size = int(rng.integers(1, 5))
    batch = rng.standard_normal((batch_size, *input_shape))
    labels = rng.integers(0, n_classes, size=batch_size)
    return net, batch, labels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
