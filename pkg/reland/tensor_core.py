"""
Module for the dense numerical kernel: fully-connected layers, batch
normalization, ReLU, sigmoid, SparseMax and Adam, each with its exact
backward pass. Everything runs at 64-bit precision on numpy arrays.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._constants import \
    BN_MOMENTUM, BN_EPSILON, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, \
    DEFAULT_BASE_LR, DEFAULT_DECAY_FACTOR, DEFAULT_DECAY_EVERY, DEFAULT_WEIGHT_DECAY
from .exceptions import DimensionError, DomainError, OptimizerError


@dataclass
class DenseLayer:
    """
    Fully-connected layer ``y = x W^T + b`` with ``weights`` of shape
    ``(d_out, d_in)`` and ``bias`` of shape ``(d_out,)``.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"dense layer shapes disagree: weights {self.weights.shape}, "
                f"bias {self.bias.shape}")

    @property
    def d_in(self):
        """Input width."""
        return self.weights.shape[1]

    @property
    def d_out(self):
        """Output width."""
        return self.weights.shape[0]

    @classmethod
    def initialize(cls, d_in, d_out, rng):
        """
        Glorot-uniform weights in ``+-sqrt(6 / (fan_in + fan_out))``, zero bias.
        """
        limit = np.sqrt(6.0 / (d_in + d_out))
        return cls(rng.uniform(-limit, limit, size=(d_out, d_in)), np.zeros(d_out))


@dataclass
class BatchNormLayer:
    """
    Per-feature batch normalization with learnable ``scale``/``shift`` and
    running statistics for inference.
    """

    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPSILON

    def __post_init__(self):
        for name in ("scale", "shift", "running_mean", "running_var"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        width = self.scale.shape
        if any(getattr(self, name).shape != width
               for name in ("shift", "running_mean", "running_var")):
            raise DimensionError("batch norm vectors must share one shape")
        if not self.epsilon > 0:
            raise DomainError("batch norm epsilon must be positive")
        if not 0 < self.momentum < 1:
            raise DomainError("batch norm momentum must be in (0, 1)")

    @property
    def width(self):
        """Number of normalized features."""
        return self.scale.shape[0]

    @classmethod
    def initialize(cls, width):
        """
        Identity affine transform, zero running mean and unit running variance.
        """
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width))


@dataclass
class AdamState:
    """
    Adam moments plus the step-decay learning rate schedule and decoupled
    weight decay. Moments are keyed by parameter name.
    """

    base_lr: float = DEFAULT_BASE_LR
    decay_factor: float = DEFAULT_DECAY_FACTOR
    decay_every: int = DEFAULT_DECAY_EVERY
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def learning_rate(self, epoch):
        """
        ``base_lr * decay_factor ** floor(epoch / decay_every)``.
        """
        return self.base_lr * self.decay_factor ** (epoch // self.decay_every)


def _check_2d(x, width, what):
    if x.ndim != 2 or x.shape[1] != width:
        raise DimensionError(f"{what}: expected (n, {width}) input, got {x.shape}")


def dense_forward(layer, x):
    """
    Return ``x W^T + b`` for a batch ``x`` of shape ``(n, d_in)``.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_2d(x, layer.d_in, "dense_forward")
    return x @ layer.weights.T + layer.bias


def dense_backward(layer, x, grad_out):
    """
    Return ``(grad_x, grad_weights, grad_bias)`` for upstream ``grad_out`` of
    shape ``(n, d_out)``.
    """
    _check_2d(x, layer.d_in, "dense_backward")
    _check_2d(grad_out, layer.d_out, "dense_backward upstream")
    if grad_out.shape[0] != x.shape[0]:
        raise DimensionError("dense_backward: batch sizes of input and upstream differ")
    return grad_out @ layer.weights, grad_out.T @ x, grad_out.sum(axis=0)


def bn_forward(layer, x, training, update_running=True):
    """
    Normalize ``x`` of shape ``(n, width)``.

    In training mode batch statistics are used (``n >= 2`` required) and the
    running statistics are updated in place unless ``update_running`` is off;
    the running variance takes the unbiased batch variance. In inference mode
    the running statistics are used, making the output independent of the
    batch composition. Returns ``(y, cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_2d(x, layer.width, "bn_forward")
    if training:
        n = x.shape[0]
        if n < 2:
            raise DomainError("batch norm in training mode needs at least 2 samples")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if update_running:
            layer.running_mean = layer.momentum * layer.running_mean + (1 - layer.momentum) * mean
            layer.running_var = layer.momentum * layer.running_var + \
                (1 - layer.momentum) * var * n / (n - 1)
    else:
        mean = layer.running_mean
        var = layer.running_var
    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
    x_hat = (x - mean) * inv_std
    return layer.scale * x_hat + layer.shift, (x_hat, inv_std, training)


def bn_backward(layer, cache, grad_out):
    """
    Return ``(grad_x, grad_scale, grad_shift)`` given the cache of
    :func:`bn_forward`.
    """
    x_hat, inv_std, training = cache
    if grad_out.shape != x_hat.shape:
        raise DimensionError(
            f"bn_backward: upstream {grad_out.shape} does not match input {x_hat.shape}")
    grad_scale = (grad_out * x_hat).sum(axis=0)
    grad_shift = grad_out.sum(axis=0)
    grad_x_hat = grad_out * layer.scale
    if not training:
        return grad_x_hat * inv_std, grad_scale, grad_shift
    n = x_hat.shape[0]
    grad_x = inv_std / n * (
        n * grad_x_hat - grad_x_hat.sum(axis=0) - x_hat * (grad_x_hat * x_hat).sum(axis=0))
    return grad_x, grad_scale, grad_shift


def relu(x):
    """Elementwise ``max(x, 0)``."""
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    """Pass ``grad_out`` where ``x > 0``."""
    return np.where(x > 0, grad_out, 0.0)


def sigmoid(x):
    """Numerically stable logistic function."""
    return expit(x)


def sigmoid_backward(y, grad_out):
    """Gradient through the sigmoid given its output ``y``."""
    return grad_out * y * (1.0 - y)


def sparsemax(z):
    """
    Euclidean projection of ``z`` onto the probability simplex.

    ``z`` may be a vector or a 2-D batch (projected row by row). Uses the
    sort-threshold rule with the strict support test
    ``1 + k z_(k) > sum_{j<=k} z_(j)``.
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError("sparsemax input contains NaN or infinite values")
    rows = np.atleast_2d(z)
    d = rows.shape[1]
    z_sorted = -np.sort(-rows, axis=1)
    cumulative = np.cumsum(z_sorted, axis=1)
    ks = np.arange(1, d + 1, dtype=np.float64)
    support = 1.0 + ks * z_sorted > cumulative
    k_z = support.sum(axis=1)
    tau = (cumulative[np.arange(rows.shape[0]), k_z - 1] - 1.0) / k_z
    out = np.maximum(rows - tau[:, None], 0.0)
    return out.reshape(z.shape)


def sparsemax_backward(p, upstream):
    """
    Jacobian-vector product of sparsemax at output ``p``:
    ``s * (g - mean_{S} g)`` with ``s`` the support indicator.
    """
    p = np.asarray(p, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if p.shape != upstream.shape:
        raise DimensionError(
            f"sparsemax_backward: output {p.shape} and upstream {upstream.shape} differ")
    support = (p > 0).astype(np.float64)
    centered = (upstream * support).sum(axis=-1, keepdims=True) / \
        support.sum(axis=-1, keepdims=True)
    return support * (upstream - centered)


def adam_step(state, params, grads, epoch):
    """
    Apply one Adam update in place to every array in ``params`` (a name ->
    array dict) and return ``params``.

    Weight decay is decoupled: ``p -= lr * (adam_update + weight_decay * p)``.
    Any non-finite gradient aborts before a single parameter moves.
    """
    for name, grad in grads.items():
        if name not in params:
            raise DimensionError(f"gradient for unknown parameter {name}")
        if grad.shape != params[name].shape:
            raise DimensionError(
                f"gradient for {name} has shape {grad.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(grad)):
            raise OptimizerError(f"non-finite gradient for parameter {name}")

    state.step += 1
    lr = state.learning_rate(epoch)
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        first = state.first_moment.get(name, np.zeros_like(grad))
        second = state.second_moment.get(name, np.zeros_like(grad))
        first = state.beta1 * first + (1.0 - state.beta1) * grad
        second = state.beta2 * second + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = first
        state.second_moment[name] = second
        update = (first / bias1) / (np.sqrt(second / bias2) + state.epsilon)
        param = params[name]
        param -= lr * (update + state.weight_decay * param)
    return params
