"""Trainable numeric primitives for the super-resolution network.

Feature maps are numpy arrays laid out ``(height, width, channels)`` with the
channel index innermost.  Every operation also accepts a leading batch axis,
``(batch, height, width, channels)``; this is what the trainer uses.

Convolution is cross-correlation (no kernel flip).  Weights are stored as
``(kernel, kernel, in_channels, out_channels)``.
"""

from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import IndivisibleStride, NonFiniteLoss, NonPositiveOutput, ShapeMismatch

DTYPE = np.float32
PRELU_INIT = 0.25


class Activation(enum.IntEnum):
    NONE = 0
    RELU = 1
    PRELU = 2


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    zero_pad: int = 0
    activation: Activation = Activation.NONE

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.zero_pad < 0:
            raise ValueError(f"invalid conv spec {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"invalid conv spec {self}")

    @property
    def fan_in(self) -> int:
        return self.kernel * self.kernel * self.in_channels


@dataclass
class LayerParams:
    """Parameters of one conv layer plus gradient and momentum buffers."""

    weights: np.ndarray
    biases: np.ndarray
    slopes: Optional[np.ndarray] = None
    grads: dict = field(default_factory=dict)
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.arrays().items():
            self.grads.setdefault(name, np.zeros_like(p))
            self.velocity.setdefault(name, np.zeros_like(p))

    def arrays(self) -> dict:
        out = {"weights": self.weights, "biases": self.biases}
        if self.slopes is not None:
            out["slopes"] = self.slopes
        return out

    @property
    def grad_weights(self):
        return self.grads["weights"]

    @property
    def grad_biases(self):
        return self.grads["biases"]

    @property
    def grad_slopes(self):
        return self.grads.get("slopes")

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def astype(self, dtype) -> "LayerParams":
        """Deep copy with every buffer cast to ``dtype``."""
        cast = lambda d: {k: v.astype(dtype) for k, v in d.items()}
        return LayerParams(
            self.weights.astype(dtype),
            self.biases.astype(dtype),
            None if self.slopes is None else self.slopes.astype(dtype),
            cast(self.grads),
            cast(self.velocity),
        )

    def copy(self) -> "LayerParams":
        return copy.deepcopy(self)

    @property
    def size(self) -> int:
        return sum(p.size for p in self.arrays().values())


@dataclass
class GradCheckReport:
    parameter_name: str
    max_relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance


def conv_output_shape(in_h: int, in_w: int, spec: ConvSpec) -> tuple[int, int, int]:
    def one(n):
        span = n - spec.kernel + 2 * spec.zero_pad
        if span < 0:
            raise NonPositiveOutput(f"kernel {spec.kernel} does not fit input extent {n}")
        if span % spec.stride:
            raise IndivisibleStride(f"({n} - {spec.kernel} + 2*{spec.zero_pad}) not divisible by {spec.stride}")
        return span // spec.stride + 1

    return one(in_h), one(in_w), spec.out_channels


def _batched(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeMismatch(f"expected rank-3 or rank-4 tensor, got shape {x.shape}")


def _im2col(x, spec):
    """(N, H, W, C) -> (N*oh*ow, k*k*C) with columns ordered [dy][dx][c]."""
    k, s, p = spec.kernel, spec.stride, spec.zero_pad
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    if k == 1:
        cols = x[:, ::s, ::s, :]
        return cols.reshape(-1, x.shape[3])
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    # win: (N, oh, ow, C, k, k)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, k * k * x.shape[3])


def conv_forward(x: np.ndarray, params: LayerParams, spec: ConvSpec) -> np.ndarray:
    """Valid cross-correlation plus bias (no activation)."""
    xb, squeeze = _batched(x)
    n, h, w, c = xb.shape
    if c != spec.in_channels:
        raise ShapeMismatch(f"input has {c} channels, layer expects {spec.in_channels}")
    oh, ow, oc = conv_output_shape(h, w, spec)
    wmat = params.weights.reshape(-1, oc)
    out = (_im2col(xb, spec) @ wmat + params.biases).reshape(n, oh, ow, oc)
    return out[0] if squeeze else out


def conv_backward(x, grad_out, params: LayerParams, spec: ConvSpec, input_grad: bool = True):
    """Accumulate weight/bias gradients into ``params.grads``; return dL/dx.

    With ``input_grad=False`` the input gradient is skipped and ``None`` is
    returned (first layer of a network).
    """
    xb, squeeze = _batched(x)
    gb, _ = _batched(grad_out)
    n, h, w, c = xb.shape
    if c != spec.in_channels:
        raise ShapeMismatch(f"input has {c} channels, layer expects {spec.in_channels}")
    oh, ow, oc = conv_output_shape(h, w, spec)
    if gb.shape != (n, oh, ow, oc):
        raise ShapeMismatch(f"grad_out shape {gb.shape} != forward output {(n, oh, ow, oc)}")

    k, s, p = spec.kernel, spec.stride, spec.zero_pad
    go = gb.reshape(-1, oc)
    cols = _im2col(xb, spec)
    params.grads["weights"] += (cols.T @ go).reshape(params.weights.shape)
    params.grads["biases"] += go.sum(axis=0)
    if not input_grad:
        return None

    dcols = (go @ params.weights.reshape(-1, oc).T).reshape(n, oh, ow, k, k, c)
    gin = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dcols.dtype)
    for dy in range(k):
        for dx in range(k):
            gin[:, dy:dy + s * (oh - 1) + 1:s, dx:dx + s * (ow - 1) + 1:s, :] += dcols[:, :, :, dy, dx, :]
    if p:
        gin = gin[:, p:-p, p:-p, :]
    return gin[0] if squeeze else gin


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def prelu_forward(x, slopes):
    if slopes.shape != (x.shape[-1],):
        raise ShapeMismatch(f"{slopes.shape[0]} slopes for {x.shape[-1]} channels")
    return np.where(x > 0, x, slopes * x)


def prelu_backward(x, grad_out, slopes):
    """Return ``(grad_in, grad_slopes)`` where grad_slopes sums over all positions."""
    if slopes.shape != (x.shape[-1],):
        raise ShapeMismatch(f"{slopes.shape[0]} slopes for {x.shape[-1]} channels")
    pos = x > 0
    grad_in = np.where(pos, grad_out, slopes * grad_out)
    neg_term = np.where(pos, 0, x * grad_out)
    grad_slopes = neg_term.reshape(-1, x.shape[-1]).sum(axis=0)
    return grad_in, grad_slopes


def he_init(spec: ConvSpec, rng_seed, dtype=DTYPE) -> LayerParams:
    """Gaussian weights with variance 2 / fan_in, zero biases, PReLU slopes at 0.25."""
    rng = np.random.default_rng(rng_seed)
    shape = (spec.kernel, spec.kernel, spec.in_channels, spec.out_channels)
    w = rng.standard_normal(shape) * math.sqrt(2.0 / spec.fan_in)
    slopes = None
    if spec.activation == Activation.PRELU:
        slopes = np.full(spec.out_channels, PRELU_INIT, dtype=dtype)
    return LayerParams(w.astype(dtype), np.zeros(spec.out_channels, dtype=dtype), slopes)


def mse_loss(pred, target):
    """Sum of squared errors per example, averaged over the batch.

    A rank-3 input counts as a batch of one.  Returns ``(loss, grad_pred)``.
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    n = 1 if pred.ndim == 3 else pred.shape[0]
    diff = pred - target
    loss = float(np.sum(np.square(diff, dtype=np.float64)) / n)
    return loss, (2.0 / n) * diff


def sgd_momentum_step(params: LayerParams, lr: float, momentum: float = 0.9):
    """Heavy-ball update ``v <- mu*v - lr*g; p <- p + v``, then zero the grads."""
    for name, p in params.arrays().items():
        v = params.velocity[name]
        v *= momentum
        v -= lr * params.grads[name]
        p += v
    params.zero_grad()


# Layer stacks: a list of (ConvSpec, LayerParams) evaluated in order.

def layer_forward(x, spec: ConvSpec, params: LayerParams):
    """Conv followed by the layer's activation.  Returns ``(out, pre_activation)``."""
    z = conv_forward(x, params, spec)
    if spec.activation == Activation.RELU:
        return relu_forward(z), z
    if spec.activation == Activation.PRELU:
        return prelu_forward(z, params.slopes), z
    return z, z


def layer_backward(x, z, grad_out, spec: ConvSpec, params: LayerParams, input_grad=True):
    if spec.activation == Activation.RELU:
        grad_out = relu_backward(z, grad_out)
    elif spec.activation == Activation.PRELU:
        grad_out, gs = prelu_backward(z, grad_out, params.slopes)
        params.grads["slopes"] += gs
    return conv_backward(x, grad_out, params, spec, input_grad=input_grad)


def stack_forward(layers, x):
    """Run every layer; return the output and the per-layer cache for backward."""
    cache = []
    for spec, params in layers:
        out, z = layer_forward(x, spec, params)
        cache.append((x, z))
        x = out
    return x, cache


def stack_backward(layers, cache, grad_out, input_grad=False):
    for i in range(len(layers) - 1, -1, -1):
        spec, params = layers[i]
        x, z = cache[i]
        need = input_grad or i > 0
        grad_out = layer_backward(x, z, grad_out, spec, params, input_grad=need)
    return grad_out


def _kink_pattern(layers, cache):
    return [z > 0 for (spec, _), (_, z) in zip(layers, cache) if spec.activation != Activation.NONE]


def grad_check(layers, x, target, tolerance=1e-4, eps=1e-3, min_eps=1e-7):
    """Compare analytic gradients of ``mse_loss(stack(x), target)`` with central differences.

    ``layers`` is a (ConvSpec, LayerParams) list or a single such pair.  All
    arithmetic runs on float64 copies; the caller's parameters are untouched.
    Relative error per entry is ``|ga - gn| / max(|ga|, |gn|, 1e-8)``.

    A step that moves any pre-activation across zero measures the kink rather
    than the derivative, so it is retried at a tenth of the size down to
    ``min_eps``.  Reports are named ``layer<i>.<param>``; a final ``input``
    report covers dL/dx.
    """
    if isinstance(layers, tuple) and isinstance(layers[0], ConvSpec):
        layers = [layers]
    layers = [(spec, params.astype(np.float64)) for spec, params in layers]
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    for _, params in layers:
        params.zero_grad()

    def evaluate(inp):
        out, cache = stack_forward(layers, inp)
        loss, grad = mse_loss(out, target)
        if not math.isfinite(loss):
            raise NonFiniteLoss("non-finite loss during gradient check")
        return loss, grad, cache

    _, grad, cache = evaluate(x)
    base = _kink_pattern(layers, cache)
    grad_x = stack_backward(layers, cache, grad, input_grad=True)

    def probe(inp):
        loss, _, c = evaluate(inp)
        same = all(np.array_equal(a, b) for a, b in zip(base, _kink_pattern(layers, c)))
        return loss, same

    def compare(name, arr, analytic, inp):
        worst = 0.0
        flat = arr.reshape(-1)
        ga_flat = analytic.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            h = eps
            while True:
                flat[i] = old + h
                up, same_up = probe(inp)
                flat[i] = old - h
                down, same_down = probe(inp)
                flat[i] = old
                if (same_up and same_down) or h / 10 < min_eps:
                    break
                h /= 10
            gn = (up - down) / (2 * h)
            ga = float(ga_flat[i])
            worst = max(worst, abs(ga - gn) / max(abs(ga), abs(gn), 1e-8))
        return GradCheckReport(name, worst, tolerance)

    reports = []
    for li, (_, params) in enumerate(layers):
        for name, arr in params.arrays().items():
            reports.append(compare(f"layer{li}.{name}", arr, params.grads[name], x))
    xs = x.copy()
    reports.append(compare("input", xs, grad_x, xs))
    return reports
