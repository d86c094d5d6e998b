"""Small differentiable network stack in numpy.

Layers are an explicit ordered list (dense, conv2d, maxpool2, relu, dropout,
batchnorm, softmax) with hand-written forward/backward passes; there is no
autodiff graph.  The model records which layer's output is the activation
vector (the feature the open-set losses operate on), and the backward pass
accepts an extra gradient injected additively at that point, so a feature-
space loss and a logit loss can train the same stack.

Everything is float64.  Convolution and pooling delegate their gather/scatter
inner loops to :mod:`superosr.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, InputError, NumericError

LAYER_KINDS = ("dense", "conv2d", "maxpool2", "relu", "dropout", "batchnorm", "softmax")


@dataclass
class LayerSpec:
    """Declarative description of one layer; see the module constructors."""

    kind: str
    in_dim: int = 0  # dense; 0 means infer from the incoming shape
    out_dim: int = 0
    kernel: int = 0
    in_channels: int = 0
    out_channels: int = 0
    stride: int = 1
    keep_prob: float = 1.0
    momentum: float = 0.9
    epsilon: float = 1e-5


def dense(out_dim: int, in_dim: int = 0) -> LayerSpec:
    return LayerSpec("dense", in_dim=in_dim, out_dim=out_dim)


def conv2d(in_channels: int, out_channels: int, kernel: int = 3, stride: int = 1) -> LayerSpec:
    return LayerSpec(
        "conv2d", kernel=kernel, in_channels=in_channels, out_channels=out_channels, stride=stride
    )


def maxpool2() -> LayerSpec:
    return LayerSpec("maxpool2")


def relu() -> LayerSpec:
    return LayerSpec("relu")


def dropout(keep_prob: float) -> LayerSpec:
    return LayerSpec("dropout", keep_prob=keep_prob)


def batchnorm(momentum: float = 0.9, epsilon: float = 1e-5) -> LayerSpec:
    return LayerSpec("batchnorm", momentum=momentum, epsilon=epsilon)


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


class Param:
    """A parameter tensor together with its gradient slot."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)


class _Layer:
    params: list[Param]

    def __init__(self, spec: LayerSpec, index: int):
        self.spec = spec
        self.index = index
        self.params = []

    @property
    def label(self) -> str:
        return f"{self.spec.kind}[{self.index}]"

    def forward(self, x, train, rng):
        raise NotImplementedError

    def backward(self, dout, ctx):
        raise NotImplementedError


class _Dense(_Layer):
    def __init__(self, spec, index, rng):
        super().__init__(spec, index)
        scale = 1.0 / np.sqrt(spec.in_dim)
        w = rng.uniform(-1.0, 1.0, size=(spec.in_dim, spec.out_dim)) * scale
        self.w = Param(f"{self.label}.w", w)
        self.b = Param(f"{self.label}.b", np.zeros(spec.out_dim))
        self.params = [self.w, self.b]

    def forward(self, x, train, rng):
        orig_shape = x.shape
        x2 = x.reshape(orig_shape[0], -1)
        if x2.shape[1] != self.spec.in_dim:
            raise ConfigError(
                f"{self.label}: expected input width {self.spec.in_dim}, got {x2.shape[1]}"
            )
        return x2 @ self.w.value + self.b.value, (x2, orig_shape)

    def backward(self, dout, ctx):
        x2, orig_shape = ctx
        self.w.grad = x2.T @ dout
        self.b.grad = dout.sum(axis=0)
        return (dout @ self.w.value.T).reshape(orig_shape)


class _Conv2d(_Layer):
    def __init__(self, spec, index, rng):
        super().__init__(spec, index)
        k, cin, cout = spec.kernel, spec.in_channels, spec.out_channels
        fan_in = k * k * cin
        w = rng.uniform(-1.0, 1.0, size=(k, k, cin, cout)) / np.sqrt(fan_in)
        self.w = Param(f"{self.label}.w", w)
        self.b = Param(f"{self.label}.b", np.zeros(cout))
        self.params = [self.w, self.b]

    def forward(self, x, train, rng):
        k, s = self.spec.kernel, self.spec.stride
        if x.ndim != 4 or x.shape[3] != self.spec.in_channels:
            raise ConfigError(f"{self.label}: expected NHWC input with C={self.spec.in_channels}")
        n, h, w_, _ = x.shape
        oh = (h - k) // s + 1
        ow = (w_ - k) // s + 1
        cols = kernels.im2col(x, k, k, s)
        w2 = self.w.value.reshape(-1, self.spec.out_channels)
        out = (cols @ w2 + self.b.value).reshape(n, oh, ow, self.spec.out_channels)
        return out, (cols, x.shape)

    def backward(self, dout, ctx):
        cols, x_shape = ctx
        n, h, w_, c = x_shape
        k, s = self.spec.kernel, self.spec.stride
        dout2 = dout.reshape(-1, self.spec.out_channels)
        self.w.grad = (cols.T @ dout2).reshape(self.w.value.shape)
        self.b.grad = dout2.sum(axis=0)
        dcols = dout2 @ self.w.value.reshape(-1, self.spec.out_channels).T
        return kernels.col2im_add(dcols, n, h, w_, c, k, k, s)


class _MaxPool2(_Layer):
    def forward(self, x, train, rng):
        out, idx = kernels.maxpool2_forward(x)
        return out, (idx, x.shape)

    def backward(self, dout, ctx):
        idx, x_shape = ctx
        return kernels.maxpool2_backward(dout, idx, x_shape[1], x_shape[2])


class _Relu(_Layer):
    def forward(self, x, train, rng):
        mask = x > 0.0
        return np.where(mask, x, 0.0), mask

    def backward(self, dout, ctx):
        return np.where(ctx, dout, 0.0)


class _Dropout(_Layer):
    """Inverted dropout: train-time scaling by 1/keep, eval is identity."""

    def forward(self, x, train, rng):
        if not train:
            return x, None
        keep = self.spec.keep_prob
        mask = (rng.random(x.shape) < keep) / keep
        return x * mask, mask

    def backward(self, dout, ctx):
        if ctx is None:
            return dout
        return dout * ctx


class _BatchNorm(_Layer):
    """Per-feature normalization over the last axis, population variance."""

    def __init__(self, spec, index, channels):
        super().__init__(spec, index)
        self.gamma = Param(f"{self.label}.gamma", np.ones(channels))
        self.beta = Param(f"{self.label}.beta", np.zeros(channels))
        self.params = [self.gamma, self.beta]
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x, train, rng):
        axes = tuple(range(x.ndim - 1))
        if train:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            mom = self.spec.momentum
            self.running_mean = mom * self.running_mean + (1.0 - mom) * mu
            self.running_var = mom * self.running_var + (1.0 - mom) * var
        else:
            mu = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.spec.epsilon)
        xhat = (x - mu) * inv_std
        out = self.gamma.value * xhat + self.beta.value
        return out, (xhat, inv_std, train)

    def backward(self, dout, ctx):
        xhat, inv_std, train = ctx
        axes = tuple(range(dout.ndim - 1))
        self.gamma.grad = (dout * xhat).sum(axis=axes)
        self.beta.grad = dout.sum(axis=axes)
        dxhat = dout * self.gamma.value
        if not train:
            return dxhat * inv_std
        return inv_std * (
            dxhat - dxhat.mean(axis=axes) - xhat * (dxhat * xhat).mean(axis=axes)
        )


class _Softmax(_Layer):
    def forward(self, x, train, rng):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=-1, keepdims=True)
        return y, y

    def backward(self, dout, ctx):
        y = ctx
        return y * (dout - (dout * y).sum(axis=-1, keepdims=True))


class Model:
    """An ordered layer stack plus the activation-vector tap point."""

    def __init__(self, layers, input_shape, penultimate_index):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.penultimate_index = penultimate_index
        self.mode = "train"

    def params(self) -> list[Param]:
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        return out

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self


def _flat_width(shape) -> int:
    return int(np.prod(shape))


def build_model(specs, input_shape, penultimate_index, seed: int) -> Model:
    """Instantiate a layer stack, inferring and validating shape composition.

    ``input_shape`` is the per-sample shape, (H, W, C) or (D,).  Dense weights
    are seeded uniform scaled by 1/sqrt(fan_in); biases start at zero.
    """
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    layers: list[_Layer] = []
    for i, spec in enumerate(specs):
        if spec.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {spec.kind!r}")
        if spec.kind == "dense":
            width = _flat_width(shape)
            if spec.in_dim == 0:
                spec.in_dim = width
            elif spec.in_dim != width:
                raise ConfigError(f"dense[{i}]: in_dim {spec.in_dim} != incoming width {width}")
            if spec.out_dim <= 0:
                raise ConfigError(f"dense[{i}]: out_dim must be positive")
            layers.append(_Dense(spec, i, rng))
            shape = (spec.out_dim,)
        elif spec.kind == "conv2d":
            if len(shape) != 3:
                raise ConfigError(f"conv2d[{i}]: needs (H, W, C) input, got {shape}")
            if spec.kernel <= 0 or spec.stride <= 0:
                raise ConfigError(f"conv2d[{i}]: kernel and stride must be positive")
            h, w, c = shape
            if c != spec.in_channels:
                raise ConfigError(f"conv2d[{i}]: in_channels {spec.in_channels} != incoming {c}")
            oh = (h - spec.kernel) // spec.stride + 1
            ow = (w - spec.kernel) // spec.stride + 1
            if oh <= 0 or ow <= 0:
                raise ConfigError(f"conv2d[{i}]: kernel {spec.kernel} too large for {shape}")
            layers.append(_Conv2d(spec, i, rng))
            shape = (oh, ow, spec.out_channels)
        elif spec.kind == "maxpool2":
            if len(shape) != 3:
                raise ConfigError(f"maxpool2[{i}]: needs (H, W, C) input, got {shape}")
            h, w, c = shape
            if h < 2 or w < 2:
                raise ConfigError(f"maxpool2[{i}]: input {shape} too small")
            layers.append(_MaxPool2(spec, i))
            shape = (h // 2, w // 2, c)
        elif spec.kind == "dropout":
            if not 0.0 < spec.keep_prob <= 1.0:
                raise ConfigError(f"dropout[{i}]: keep_prob must be in (0, 1]")
            layers.append(_Dropout(spec, i))
        elif spec.kind == "batchnorm":
            layers.append(_BatchNorm(spec, i, channels=shape[-1]))
        elif spec.kind == "relu":
            layers.append(_Relu(spec, i))
        elif spec.kind == "softmax":
            layers.append(_Softmax(spec, i))

    if not 0 <= penultimate_index < len(layers):
        raise ConfigError(f"penultimate_index {penultimate_index} out of range")
    tap = specs[penultimate_index]
    if tap.kind != "dense" and not (
        tap.kind == "relu"
        and penultimate_index > 0
        and specs[penultimate_index - 1].kind in ("dense", "batchnorm")
    ):
        raise ConfigError(
            "penultimate_index must address a dense layer or the relu following one"
        )
    return Model(layers, input_shape, penultimate_index)


def forward_pass(model: Model, batch: np.ndarray, rng_seed: int):
    """Run the stack; returns (logits, activation_vectors, cache).

    The cache holds per-layer intermediates for :func:`backward_pass`.  Any
    non-finite activation aborts with the offending layer named.
    """
    if batch.shape[1:] != model.input_shape:
        raise ConfigError(
            f"batch shape {batch.shape[1:]} does not match model input {model.input_shape}"
        )
    rng = np.random.default_rng(rng_seed)
    train = model.mode == "train"
    x = batch
    cache = []
    avs = None
    for i, layer in enumerate(model.layers):
        x, ctx = layer.forward(x, train, rng)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite activation out of {layer.label}")
        cache.append(ctx)
        if i == model.penultimate_index:
            avs = x
    return x, avs, cache


def backward_pass(model: Model, cache, grad_logits: np.ndarray, grad_avs: np.ndarray):
    """Backpropagate logit and activation-vector gradients to all parameters.

    ``grad_avs`` is injected additively where the activation vector was read,
    so either upstream gradient (or both) may be zero.  Returns the gradient
    list aligned with ``model.params()``.
    """
    if len(cache) != len(model.layers):
        raise RuntimeError("cache does not match model layer count")
    dout = grad_logits
    for i in range(len(model.layers) - 1, -1, -1):
        if i == model.penultimate_index:
            dout = dout + grad_avs
        dout = model.layers[i].backward(dout, cache[i])
    return [p.grad for p in model.params()]


def cross_entropy_loss(logits: np.ndarray, labels):
    """Mean negative log softmax probability and its logit gradient."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    probs = np.exp(shifted - log_z[:, None])
    probs[np.arange(n), labels] -= 1.0
    return loss, probs / n


@dataclass
class AdamState:
    """Adam accumulators; one (m, v) pair per parameter tensor."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, values, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
            m=[np.zeros_like(v) for v in values],
            v=[np.zeros_like(v) for v in values],
        )


def adam_update(values, grads, state: AdamState):
    """One bias-corrected Adam step, mutating ``values`` in place."""
    if len(values) != len(state.m) or len(grads) != len(values):
        raise InputError("adam_update: parameter/gradient/state length mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for val, g, m, v in zip(values, grads, state.m, state.v):
        if val.shape != g.shape:
            raise InputError("adam_update: gradient shape mismatch")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        val -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return values, state


def finite_diff_check(loss_fn, params, analytic_grads, epsilon: float = 1e-5) -> float:
    """Worst relative error between central differences and analytic grads.

    ``loss_fn`` must be deterministic and read the (mutated in place) tensors
    in ``params``.  Relative error uses denominator max(|fd|, |analytic|, 1e-12).
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise InputError("epsilon must lie in [1e-7, 1e-3]")
    worst = 0.0
    for tensor, grad in zip(params, analytic_grads):
        flat = tensor.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            f_plus = loss_fn()
            flat[j] = orig - epsilon
            f_minus = loss_fn()
            flat[j] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError("non-finite loss during finite-difference probe")
            fd = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(fd - gflat[j]) / max(abs(fd), abs(gflat[j]), 1e-12)
            worst = max(worst, err)
    return worst
