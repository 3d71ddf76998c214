"""Dense network core: forward/backward passes, losses and a plain SGD step.

Everything operates on float64 numpy arrays. Batched inputs have shape
``(batch, features)``; a 1-D input is treated as a batch of one and the
output is returned 1-D as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError, StateError

ACTIVATIONS = ("relu", "tanh", "identity")


def as_tensor(data, check_finite: bool = True) -> np.ndarray:
    """Coerce ``data`` to a float64 array, rejecting NaN/Inf in checked mode."""
    arr = np.asarray(data, dtype=np.float64)
    if check_finite and not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"layer weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class ParameterSet:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a ParameterSet needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.in_dim != a.out_dim:
                raise ShapeError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def size(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers]
        )

    def from_vector(self, vec: np.ndarray) -> "ParameterSet":
        """Same architecture, parameters read from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"expected vector of length {self.size}, got {vec.shape}")
        layers, pos = [], 0
        for l in self.layers:
            w = vec[pos:pos + l.weight.size].reshape(l.weight.shape).copy()
            pos += l.weight.size
            b = vec[pos:pos + l.bias.size].copy()
            pos += l.bias.size
            layers.append(Layer(w, b, l.activation))
        return ParameterSet(tuple(layers))


@dataclass(frozen=True)
class GradientSet:
    """Per-layer ``(d_weight, d_bias)`` pairs, congruent with a ParameterSet."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)]
        )

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            tuple(a + b for a, b in zip(self.weights, other.weights)),
            tuple(a + b for a, b in zip(self.biases, other.biases)),
        )

    def scale(self, factor: float) -> "GradientSet":
        return GradientSet(
            tuple(w * factor for w in self.weights), tuple(b * factor for b in self.biases)
        )

    @classmethod
    def zeros_like(cls, params: ParameterSet) -> "GradientSet":
        return cls(
            tuple(np.zeros_like(l.weight) for l in params.layers),
            tuple(np.zeros_like(l.bias) for l in params.layers),
        )


@dataclass(frozen=True)
class Trace:
    """Activation record of one forward pass."""

    params: ParameterSet
    inputs: tuple[np.ndarray, ...]  # input to each layer, (B, in)
    pre: tuple[np.ndarray, ...]  # pre-activations, (B, out)
    post: tuple[np.ndarray, ...]  # activations, (B, out)
    squeeze: bool


def init_params(
    sizes: Sequence[int],
    activations: Sequence[str] | str,
    rng: np.random.Generator,
) -> ParameterSet:
    """Glorot-uniform weights and zero biases for a chain of dense layers.

    ``sizes`` lists the widths including input, e.g. ``[2, 64, 64, 3]``.
    """
    n_layers = len(sizes) - 1
    if n_layers < 1:
        raise ShapeError("need at least input and output sizes")
    if isinstance(activations, str):
        activations = [activations] * n_layers
    if len(activations) != n_layers:
        raise ShapeError("one activation per layer required")
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return ParameterSet(tuple(layers))


def _activate(pre: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(pre, 0.0)
    if act == "tanh":
        return np.tanh(pre)
    return pre


def _activation_grad(pre: np.ndarray, post: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        # derivative at exactly 0 is 0
        return (pre > 0).astype(np.float64)
    if act == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)


def forward(params: ParameterSet, x) -> tuple[np.ndarray, Trace]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.ndim != 2 or a.shape[1] != params.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match layer input {params.in_dim}")
    inputs, pres, posts = [], [], []
    for layer in params.layers:
        inputs.append(a)
        pre = a @ layer.weight.T + layer.bias
        a = _activate(pre, layer.activation)
        pres.append(pre)
        posts.append(a)
    out = a[0] if squeeze else a
    return out, Trace(params, tuple(inputs), tuple(pres), tuple(posts), squeeze)


def backward(
    params: ParameterSet, trace: Trace, grad_output
) -> tuple[GradientSet, np.ndarray]:
    """Reverse-mode pass. Returns parameter gradients and the input gradient."""
    if trace.params is not params:
        raise StateError("trace was produced by a different ParameterSet")
    g = np.asarray(grad_output, dtype=np.float64)
    if trace.squeeze:
        g = g[None, :]
    if g.shape != trace.post[-1].shape:
        raise ShapeError(f"grad_output shape {g.shape} != output {trace.post[-1].shape}")
    dws, dbs = [], []
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        g = g * _activation_grad(trace.pre[i], trace.post[i], layer.activation)
        dws.append(g.T @ trace.inputs[i])
        dbs.append(g.sum(axis=0))
        g = g @ layer.weight
    grads = GradientSet(tuple(reversed(dws)), tuple(reversed(dbs)))
    return grads, (g[0] if trace.squeeze else g)


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ShapeError("softmax of an empty tensor")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label, reduction: str = "mean"):
    """Cross-entropy loss and its gradient with respect to the logits.

    For 1-D logits and an integer label this returns ``(loss, grad)``.
    For a batch, ``reduction`` selects ``"mean"`` (scalar loss, gradient
    scaled by 1/B), ``"sum"`` or ``"none"`` (per-sample losses, unscaled
    per-sample gradients).
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    labels = np.atleast_1d(np.asarray(label))
    n_classes = z.shape[-1]
    if labels.shape != (z.shape[0],):
        raise ShapeError("one label per row of logits required")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise IndexError(f"label out of range for {n_classes} classes")
    rows = np.arange(z.shape[0])
    losses = -log_softmax(z)[rows, labels]
    grad = softmax(z)
    grad[rows, labels] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    if reduction == "mean":
        return float(losses.mean()), grad / z.shape[0]
    if reduction == "sum":
        return float(losses.sum()), grad
    if reduction == "none":
        return losses, grad
    raise ValueError(f"unknown reduction {reduction!r}")


def sgd_step(params: ParameterSet, grads: GradientSet, lr: float) -> ParameterSet:
    if len(grads.weights) != len(params.layers):
        raise ShapeError("gradient set has a different number of layers")
    layers = []
    for layer, dw, db in zip(params.layers, grads.weights, grads.biases):
        if dw.shape != layer.weight.shape or db.shape != layer.bias.shape:
            raise ShapeError("gradient and parameter shapes differ")
        layers.append(Layer(layer.weight - lr * dw, layer.bias - lr * db, layer.activation))
    return ParameterSet(tuple(layers))
