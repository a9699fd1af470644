"""Dense numeric kernel: linear layers, activations, losses, Adam, seeded RNG.

Everything runs in float64 so that analytic gradients can be checked tightly
against central finite differences. Matrices are plain 2-D numpy arrays in
row-major layout; a batch is one sample per row.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, LabelError, TrainingDivergenceError


def as_matrix(x, name: str = "input") -> np.ndarray:
    """Coerce ``x`` to a finite float64 2-D array, or raise."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


class RngStream:
    """Seeded random stream; identical seeds yield identical draw sequences.

    The single randomness source in the package: uniform noise for the
    stochastic code layer, weight init, data shuffling and blob generation
    all draw from an instance of this class.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, *shape) -> np.ndarray:
        return self._gen.random(shape if shape else None)

    def normal(self, *shape) -> np.ndarray:
        return self._gen.standard_normal(shape if shape else None)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed})"


@dataclass
class LinearLayer:
    """Fully-connected layer with weight of shape (out, in) and bias (out,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DimensionError(f"weight must be 2-D, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"bias shape {self.bias.shape} does not match weight rows "
                f"{self.weight.shape[0]}"
            )
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters contain non-finite entries")

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]


def init_linear(rng: RngStream, out_features: int, in_features: int) -> LinearLayer:
    """Centered uniform weights scaled by 1/sqrt(fan_in); zero bias."""
    bound = 1.0 / np.sqrt(in_features)
    weight = (rng.uniform(out_features, in_features) * 2.0 - 1.0) * bound
    return LinearLayer(weight=weight, bias=np.zeros(out_features))


def linear_forward(layer: LinearLayer, x: np.ndarray) -> np.ndarray:
    """Batched affine map: row i of the output is weight @ x[i] + bias."""
    x = as_matrix(x, "input")
    if x.shape[1] != layer.in_features:
        raise DimensionError(
            f"input width {x.shape[1]} does not match layer width {layer.in_features}"
        )
    return x @ layer.weight.T + layer.bias


def linear_backward(layer: LinearLayer, x: np.ndarray, grad_out: np.ndarray):
    """Gradients of sum(grad_out * output) w.r.t. weight, bias and input."""
    x = as_matrix(x, "input")
    grad_out = as_matrix(grad_out, "grad_out")
    if x.shape[1] != layer.in_features:
        raise DimensionError(
            f"input width {x.shape[1]} does not match layer width {layer.in_features}"
        )
    if grad_out.shape != (x.shape[0], layer.out_features):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match "
            f"({x.shape[0]}, {layer.out_features})"
        )
    grad_weight = grad_out.T @ x
    grad_bias = grad_out.sum(axis=0)
    grad_input = grad_out @ layer.weight
    return grad_weight, grad_bias, grad_input


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Subgradient 0 at the kink."""
    return grad_out * (x > 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log softmax with log-sum-exp stabilization."""
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log softmax likelihood and its gradient w.r.t. the logits.

    ``labels`` holds one class index per row. The gradient is
    (softmax - onehot) / batch.
    """
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise DimensionError(
            f"labels shape {labels.shape} does not match batch {logits.shape[0]}"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError("single-label targets must be integer class indices")
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise LabelError(f"label out of range for {c} classes")
    log_probs = log_softmax(logits)
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


def sigmoid_bce(logits: np.ndarray, targets) -> tuple[float, np.ndarray]:
    """Mean per-element binary cross-entropy on sigmoid(logits).

    Stabilized in logit space: per element the loss is
    max(z, 0) - z*t + log(1 + exp(-|z|)). The gradient is
    (sigmoid(z) - t) / size.
    """
    logits = as_matrix(logits, "logits")
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise DimensionError(
            f"targets shape {targets.shape} does not match logits {logits.shape}"
        )
    if not np.all((targets == 0.0) | (targets == 1.0)):
        raise LabelError("multi-hot targets must be exactly 0 or 1")
    z = logits
    per_elem = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    loss = float(per_elem.mean())
    grad = (sigmoid(z) - targets) / z.size
    return loss, grad


@dataclass
class AdamState:
    """Adam accumulators for an ordered list of parameter arrays."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    mean: list = field(default_factory=list)
    var: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, learning_rate: float = 1e-4, **kwargs) -> "AdamState":
        state = cls(learning_rate=learning_rate, **kwargs)
        state.mean = [np.zeros_like(p) for p in params]
        state.var = [np.zeros_like(p) for p in params]
        return state


def adam_step(state: AdamState, params, grads) -> list:
    """One bias-corrected Adam update; returns the new parameter arrays.

    The moment accumulators in ``state`` are updated in place and the step
    counter is incremented before bias correction.
    """
    if len(params) != len(grads):
        raise DimensionError("params and grads must pair up")
    if not state.mean:
        state.mean = [np.zeros_like(p) for p in params]
        state.var = [np.zeros_like(p) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError("non-finite gradient in adam_step")
    state.step += 1
    t = state.step
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    new_params = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match parameter {p.shape}"
            )
        state.mean[i] = state.beta1 * state.mean[i] + (1.0 - state.beta1) * g
        state.var[i] = state.beta2 * state.var[i] + (1.0 - state.beta2) * g * g
        m_hat = state.mean[i] / bias1
        v_hat = state.var[i] / bias2
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
    return new_params
