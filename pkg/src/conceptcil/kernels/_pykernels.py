"""Pure-NumPy implementations of the training kernels.

This is the fallback backend and the reference the compiled backend is
tested against. All matrices are C-contiguous float64; per-feature
parameters (layernorm gain/shift) are 1-D views of length D.
"""

import numpy as np

NAME = "python"


def layernorm_forward(x, gain, shift, eps):
    """Row-wise layernorm with population variance and eps inside the sqrt.

    Returns (out, xhat, inv_std); the latter two are the backward cache.
    """
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gain + shift, xhat, inv_std


def layernorm_backward(g_out, xhat, inv_std, gain):
    """Returns (g_x, g_gain, g_shift) for the forward above."""
    g_shift = g_out.sum(axis=0)
    g_gain = (g_out * xhat).sum(axis=0)
    g_xhat = g_out * gain
    mean_g = g_xhat.mean(axis=1, keepdims=True)
    mean_gx = np.mean(g_xhat * xhat, axis=1, keepdims=True)
    g_x = inv_std * (g_xhat - mean_g - xhat * mean_gx)
    return g_x, g_gain, g_shift


def softmax_rows(x):
    """Row-wise softmax with max-subtraction for overflow safety."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs, g_probs):
    """Gradient w.r.t. the softmax input given probs and d(loss)/d(probs)."""
    inner = (g_probs * probs).sum(axis=1, keepdims=True)
    return probs * (g_probs - inner)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient (softmax - onehot)/B."""
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=1, keepdims=True)
    rows = np.arange(b)
    loss = float(np.mean(np.log(total[:, 0]) - shifted[rows, labels]))
    grad = e / total
    grad[rows, labels] -= 1.0
    grad /= b
    return loss, grad


def adamw_update(value, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """One decoupled-weight-decay Adam update, in place on 1-D views.

    Decay multiplies the value directly (never enters the moments).
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    if weight_decay != 0.0:
        value *= 1.0 - lr * weight_decay
    value -= lr * mhat / (np.sqrt(vhat) + eps)
