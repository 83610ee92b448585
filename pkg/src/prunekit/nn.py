"""Minimal deterministic feedforward-network core.

Dense/Conv2D/ReLU/Flatten layers with hand-written backprop, softmax
cross-entropy, and SGD with momentum that respects pruning masks. Everything
runs in float64 so finite-difference gradient checks are tight.

Masking semantics:
  * hard  -- masked weights are stored as exact zeros, their gradients and
             momentum entries are zeroed after every step, and they never
             move again.
  * soft  -- the forward/backward computation treats masked weights as zero,
             but the stored values keep training: the gradient written to a
             parameter is the gradient w.r.t. its *effective* (masked) value,
             which is dense, so a masked weight keeps receiving the signal it
             would see if it were active and may later be unmasked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import backend

HARD = "hard"
SOFT = "soft"
MASK_MODES = (HARD, SOFT)


class ConfigurationError(ValueError):
    """Network structure does not compose."""


class StateError(RuntimeError):
    """Operation called out of order (e.g. backward before forward)."""


@dataclass
class SgdConfig:
    momentum: float = 0.9
    weight_decay: float = 0.0
    mask_mode: str = HARD

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")


class Parameter:
    """Trainable array plus gradient, momentum buffer, and optional mask."""

    def __init__(self, value: np.ndarray, prunable: bool):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.momentum_buf = np.zeros_like(self.value)
        self.mask: np.ndarray | None = None  # float64 zeros/ones, same shape
        self.prunable = prunable

    @property
    def shape(self):
        return self.value.shape

    def effective_value(self) -> np.ndarray:
        if self.mask is None:
            return self.value
        return self.value * self.mask


def _glorot_uniform(shape, fan_in, fan_out, rng):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base class; subclasses cache whatever forward state backward needs."""

    params: list[Parameter]

    def __init__(self):
        self.params = []

    @property
    def kind(self) -> str:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, mask_mode: str) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class Dense(Layer):
    """Affine map; weight shape (n_out, n_in), prunable; bias not prunable."""

    def __init__(self, n_in: int, n_out: int, has_bias: bool = True,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.has_bias = bool(has_bias)
        if rng is None:
            w = np.zeros((self.n_out, self.n_in))
        else:
            w = _glorot_uniform((self.n_out, self.n_in), self.n_in, self.n_out, rng)
        self.weight = Parameter(w, prunable=True)
        self.params = [self.weight]
        self.bias = None
        if self.has_bias:
            self.bias = Parameter(np.zeros(self.n_out), prunable=False)
            self.params.append(self.bias)
        self._x = None

    @property
    def kind(self):
        return "dense"

    def output_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.n_in:
            raise ConfigurationError(
                f"dense layer expects flat input of size {self.n_in}, got shape {in_shape}"
            )
        return (self.n_out,)

    def forward(self, x):
        self._x = x
        y = x @ self.weight.effective_value().T
        if self.bias is not None:
            y += self.bias.value
        return y

    def backward(self, dy, mask_mode):
        if self._x is None:
            raise StateError("backward called before forward")
        dw = dy.T @ self._x
        if mask_mode == HARD and self.weight.mask is not None:
            dw *= self.weight.mask
        self.weight.grad = dw
        if self.bias is not None:
            self.bias.grad = dy.sum(axis=0)
        return dy @ self.weight.effective_value()

    def spec(self):
        return {"kind": "dense", "n_in": self.n_in, "n_out": self.n_out,
                "has_bias": self.has_bias}


class Conv2D(Layer):
    """2-D cross-correlation; weight shape (c_out, c_in, k_h, k_w), prunable."""

    def __init__(self, c_in: int, c_out: int, k_h: int, k_w: int,
                 stride: int = 1, padding: int = 0, has_bias: bool = True,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.c_in, self.c_out = int(c_in), int(c_out)
        self.k_h, self.k_w = int(k_h), int(k_w)
        self.stride, self.padding = int(stride), int(padding)
        self.has_bias = bool(has_bias)
        if self.stride < 1 or self.padding < 0:
            raise ConfigurationError("conv2d needs stride >= 1 and padding >= 0")
        shape = (self.c_out, self.c_in, self.k_h, self.k_w)
        fan_in = self.c_in * self.k_h * self.k_w
        fan_out = self.c_out * self.k_h * self.k_w
        w = np.zeros(shape) if rng is None else _glorot_uniform(shape, fan_in, fan_out, rng)
        self.weight = Parameter(w, prunable=True)
        self.params = [self.weight]
        self.bias = None
        if self.has_bias:
            self.bias = Parameter(np.zeros(self.c_out), prunable=False)
            self.params.append(self.bias)
        self._x = None

    @property
    def kind(self):
        return "conv2d"

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.c_in:
            raise ConfigurationError(
                f"conv2d layer expects input (C={self.c_in}, H, W), got shape {in_shape}"
            )
        out_h, out_w = backend.output_hw(in_shape[1], in_shape[2], self.k_h, self.k_w,
                                         self.stride, self.padding)
        if out_h < 1 or out_w < 1:
            raise ConfigurationError(
                f"conv2d kernel {self.k_h}x{self.k_w} does not fit input {in_shape}"
            )
        return (self.c_out, out_h, out_w)

    def forward(self, x):
        self._x = np.ascontiguousarray(x)
        w_eff = np.ascontiguousarray(self.weight.effective_value())
        b = self.bias.value if self.bias is not None else None
        return backend.conv2d_forward(self._x, w_eff, b, self.stride, self.padding)

    def backward(self, dy, mask_mode):
        if self._x is None:
            raise StateError("backward called before forward")
        w_eff = np.ascontiguousarray(self.weight.effective_value())
        dx, dw = backend.conv2d_backward(self._x, w_eff, np.ascontiguousarray(dy),
                                         self.stride, self.padding)
        if mask_mode == HARD and self.weight.mask is not None:
            dw *= self.weight.mask
        self.weight.grad = dw
        if self.bias is not None:
            self.bias.grad = dy.sum(axis=(0, 2, 3))
        return dx

    def spec(self):
        return {"kind": "conv2d", "c_in": self.c_in, "c_out": self.c_out,
                "k_h": self.k_h, "k_w": self.k_w, "stride": self.stride,
                "padding": self.padding, "has_bias": self.has_bias}


class ReLU(Layer):
    @property
    def kind(self):
        return "relu"

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        self._x = x
        return np.maximum(x, 0.0)

    def backward(self, dy, mask_mode):
        return dy * (self._x > 0.0)

    def spec(self):
        return {"kind": "relu"}


class Flatten(Layer):
    @property
    def kind(self):
        return "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, mask_mode):
        return dy.reshape(self._shape)

    def spec(self):
        return {"kind": "flatten"}


LAYER_KINDS = {"dense": Dense, "conv2d": Conv2D, "relu": ReLU, "flatten": Flatten}


class Network:
    """Ordered layer stack with a fixed per-sample input shape."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.mask_mode = HARD
        self.output_shape = self._check_composition()
        self._forward_done = False

    def _check_composition(self):
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ConfigurationError as exc:
                raise ConfigurationError(f"layer {i} ({layer.kind}): {exc}") from None
        return shape

    def forward(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if tuple(batch.shape[1:]) != self.input_shape:
            raise ConfigurationError(
                f"batch shape {batch.shape[1:]} does not match input shape {self.input_shape}"
            )
        x = batch
        for layer in self.layers:
            x = layer.forward(x)
        self._forward_done = True
        return x

    def backward(self, dlogits: np.ndarray) -> None:
        if not self._forward_done:
            raise StateError("backward called before forward")
        dy = dlogits
        for layer in reversed(self.layers):
            dy = layer.backward(dy, self.mask_mode)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.params]

    def prunable_weights(self):
        """(layer_index, layer, parameter) for every prunable parameter."""
        out = []
        for i, layer in enumerate(self.layers):
            for p in layer.params:
                if p.prunable:
                    out.append((i, layer, p))
        return out

    def num_weights(self) -> int:
        return sum(p.value.size for p in self.parameters())


def loss_softmax_ce(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def sgd_step(params, lr: float, cfg: SgdConfig) -> None:
    """One SGD-with-momentum update; weight decay is folded into the gradient."""
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")
    for p in params:
        g = p.grad
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.value
        p.momentum_buf *= cfg.momentum
        p.momentum_buf += g
        p.value -= lr * p.momentum_buf
        if cfg.mask_mode == HARD and p.mask is not None:
            p.value *= p.mask
            p.momentum_buf *= p.mask


@dataclass
class GradCheckReport:
    per_layer: dict[str, float]  # max relative error per parameterized layer
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(net: Network, batch, labels, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Meaningful for unmasked or hard-masked networks; soft masks decouple the
    stored value from the loss, so finite differences are zero there while the
    stored gradient is intentionally dense.
    """
    if h <= 0 or tol <= 0:
        raise ValueError("h and tol must be positive")

    def batch_loss():
        logits = net.forward(batch)
        return loss_softmax_ce(logits, labels)[0]

    loss, dlogits = loss_softmax_ce(net.forward(batch), labels)
    net.backward(dlogits)
    analytic = [p.grad.copy() for p in net.parameters()]

    per_layer: dict[str, float] = {}
    worst = 0.0
    param_idx = 0
    for li, layer in enumerate(net.layers):
        if not layer.params:
            continue
        layer_err = 0.0
        for p in layer.params:
            a = analytic[param_idx]
            param_idx += 1
            flat = p.value.reshape(-1)
            fd = np.zeros_like(flat)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = batch_loss()
                flat[k] = orig - h
                down = batch_loss()
                flat[k] = orig
                fd[k] = (up - down) / (2.0 * h)
            fd = fd.reshape(p.value.shape)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-3)
            layer_err = max(layer_err, float(np.max(np.abs(a - fd) / denom)))
        per_layer[f"layer{li}:{layer.kind}"] = layer_err
        worst = max(worst, layer_err)
    # restore the analytic gradients clobbered by the FD probes
    for p, a in zip(net.parameters(), analytic):
        p.grad = a
    return GradCheckReport(per_layer=per_layer, max_rel_err=worst, tol=tol)


def build_layer(spec: dict, rng: np.random.Generator | None = None) -> Layer:
    kind = spec["kind"]
    if kind == "dense":
        return Dense(spec["n_in"], spec["n_out"], spec.get("has_bias", True), rng)
    if kind == "conv2d":
        return Conv2D(spec["c_in"], spec["c_out"], spec["k_h"], spec["k_w"],
                      spec.get("stride", 1), spec.get("padding", 0),
                      spec.get("has_bias", True), rng)
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    raise ConfigurationError(f"unknown layer kind {kind!r}")


def save_checkpoint(path, net: Network, step: int = 0, cycle: int = 0,
                    rng_state: dict | None = None) -> None:
    """Write a single .npz with structure, weights, masks, buffers and counters."""
    meta = {
        "input_shape": list(net.input_shape),
        "layers": [layer.spec() for layer in net.layers],
        "mask_mode": net.mask_mode,
        "step": int(step),
        "cycle": int(cycle),
        "rng_state": rng_state,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for i, p in enumerate(net.parameters()):
        arrays[f"p{i}_value"] = p.value
        arrays[f"p{i}_momentum"] = p.momentum_buf
        if p.mask is not None:
            arrays[f"p{i}_mask"] = p.mask
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Rebuild (network, step, cycle, rng_state) bit-exactly from save_checkpoint."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        net = Network([build_layer(s) for s in meta["layers"]], meta["input_shape"])
        net.mask_mode = meta["mask_mode"]
        for i, p in enumerate(net.parameters()):
            p.value[...] = data[f"p{i}_value"]
            p.momentum_buf[...] = data[f"p{i}_momentum"]
            if f"p{i}_mask" in data:
                p.mask = data[f"p{i}_mask"].copy()
    return net, meta["step"], meta["cycle"], meta.get("rng_state")
