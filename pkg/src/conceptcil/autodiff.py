"""Forward/backward building blocks and the optimizer for the fusion head.

Gradients are hand-derived per operation and composed explicitly by the
caller; there is no tape. Each ``*_forward`` returns the output plus a
cache object, and the matching ``*_backward`` consumes the cache, adds
parameter gradients into the involved :class:`ParamTensor` objects and
returns the gradient w.r.t. the operation input.

Everything runs in float64. Arrays handed to these functions must be
2-D and C-contiguous.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import LabelError, RangeError, ShapeError

DEFAULT_LAYERNORM_EPS = 1e-5


class ParamTensor:
    """A trainable matrix with an accumulated gradient of the same shape."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        if self.value.ndim != 2:
            raise ShapeError(f"ParamTensor must be 2-D, got shape {self.value.shape}")
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def _as_matrix(x, name):
    if not isinstance(x, np.ndarray) or x.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D array")
    return np.ascontiguousarray(x, dtype=np.float64)


@dataclass
class LinearCache:
    x: np.ndarray
    w: ParamTensor
    b: "ParamTensor | None"


def linear_forward(x, w, b=None):
    """out = x @ w.value (+ broadcast bias). Returns (out, cache)."""
    x = _as_matrix(x, "x")
    if x.shape[1] != w.value.shape[0]:
        raise ShapeError(
            f"linear: input shape {x.shape} does not match weight shape {w.value.shape}"
        )
    if b is not None and b.value.shape != (1, w.value.shape[1]):
        raise ShapeError(
            f"linear: bias shape {b.value.shape} does not match weight shape {w.value.shape}"
        )
    out = x @ w.value
    if b is not None:
        out = out + b.value
    return out, LinearCache(x, w, b)


def linear_backward(cache, g_out):
    """Accumulates weight/bias grads; returns the gradient w.r.t. x."""
    cache.w.grad += cache.x.T @ g_out
    if cache.b is not None:
        cache.b.grad += g_out.sum(axis=0, keepdims=True)
    return g_out @ cache.w.value.T


@dataclass
class LayerNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gain: ParamTensor
    shift: ParamTensor


def layernorm_forward(x, gain, shift, eps=DEFAULT_LAYERNORM_EPS):
    """Row-wise layernorm (population variance, eps inside the sqrt)."""
    x = _as_matrix(x, "x")
    d = x.shape[1]
    if d < 1:
        raise ShapeError("layernorm: input must have at least one column")
    if eps < 0:
        raise RangeError("layernorm: eps must be >= 0")
    if gain.value.shape != (1, d) or shift.value.shape != (1, d):
        raise ShapeError(
            f"layernorm: gain/shift shapes {gain.value.shape}/{shift.value.shape} "
            f"do not match input width {d}"
        )
    out, xhat, inv_std = kernels.layernorm_forward(x, gain.value[0], shift.value[0], eps)
    return out, LayerNormCache(xhat, inv_std, gain, shift)


def layernorm_backward(cache, g_out):
    g_x, g_gain, g_shift = kernels.layernorm_backward(
        np.ascontiguousarray(g_out), cache.xhat, cache.inv_std, cache.gain.value[0]
    )
    cache.gain.grad[0] += g_gain
    cache.shift.grad[0] += g_shift
    return g_x


def softmax_rows(x):
    """Row-wise softmax; rows sum to 1 and entries are in [0, 1]."""
    return kernels.softmax_rows(_as_matrix(x, "x"))


def softmax_backward(probs, g_probs):
    return kernels.softmax_backward(probs, np.ascontiguousarray(g_probs))


def cross_entropy(logits, labels):
    """Mean NLL over the batch plus its gradient w.r.t. the logits."""
    logits = _as_matrix(logits, "logits")
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    n_classes = logits.shape[1]
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy: labels shape {labels.shape} does not match logits {logits.shape}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise LabelError(f"label {bad} outside [0, {n_classes})")
    return kernels.cross_entropy(logits, labels)


def cosine_lr(step, total_steps, base_lr):
    """Cosine annealing from base_lr at step 0 down to 0 at total_steps."""
    if total_steps < 1:
        raise RangeError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise RangeError(f"step {step} outside [0, {total_steps}]")
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


class AdamW:
    """Decoupled-weight-decay Adam over a fixed list of ParamTensors.

    The decay multiplies the parameter value directly and never passes
    through the moment estimates.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-4):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._moments = [
            (np.zeros(p.value.size), np.zeros(p.value.size)) for p in self.params
        ]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr):
        self.step_count += 1
        for p, (m, v) in zip(self.params, self._moments):
            kernels.adamw_update(
                p.value.reshape(-1),
                p.grad.reshape(-1),
                m,
                v,
                self.step_count,
                lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            )
