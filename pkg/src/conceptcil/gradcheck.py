"""Central finite-difference verification of the hand-derived gradients.

Each check perturbs every scalar of the inputs/parameters by +/-step,
differences the recomputed scalar loss and compares against the analytic
gradient with relative error |a - n| / max(|a|, |n|, 1e-8).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff, fusion

FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance


def max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def central_diff(loss_fn, array, step=FD_STEP):
    """Numeric gradient of loss_fn() w.r.t. ``array``, perturbed in place."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = loss_fn()
        flat[i] = keep - step
        down = loss_fn()
        flat[i] = keep
        out[i] = (up - down) / (2.0 * step)
    return grad


def check_linear(seed=0):
    rng = np.random.default_rng([seed, 1])
    x = rng.uniform(-1.0, 1.0, size=(2, 3))
    w = autodiff.ParamTensor(rng.uniform(-1.0, 1.0, size=(3, 4)))
    b = autodiff.ParamTensor(rng.uniform(-1.0, 1.0, size=(1, 4)))
    coeff = rng.uniform(-1.0, 1.0, size=(2, 4))

    def loss():
        out, _ = autodiff.linear_forward(x, w, b)
        return float(np.sum(coeff * out))

    out, cache = autodiff.linear_forward(x, w, b)
    g_x = autodiff.linear_backward(cache, coeff)
    err = max(
        max_rel_err(g_x, central_diff(loss, x)),
        max_rel_err(w.grad, central_diff(loss, w.value)),
        max_rel_err(b.grad, central_diff(loss, b.value)),
    )
    return CheckResult("linear", err, 1e-5)


def check_layernorm(seed=0):
    rng = np.random.default_rng([seed, 2])
    x = rng.uniform(-1.0, 1.0, size=(3, 8))
    gain = autodiff.ParamTensor(rng.uniform(0.5, 1.5, size=(1, 8)))
    shift = autodiff.ParamTensor(rng.uniform(-0.5, 0.5, size=(1, 8)))
    coeff = rng.uniform(-1.0, 1.0, size=(3, 8))

    def loss():
        out, _ = autodiff.layernorm_forward(x, gain, shift)
        return float(np.sum(coeff * out))

    out, cache = autodiff.layernorm_forward(x, gain, shift)
    g_x = autodiff.layernorm_backward(cache, coeff)
    err = max(
        max_rel_err(g_x, central_diff(loss, x)),
        max_rel_err(gain.grad, central_diff(loss, gain.value)),
        max_rel_err(shift.grad, central_diff(loss, shift.value)),
    )
    return CheckResult("layernorm", err, 1e-4)


def check_softmax(seed=0):
    rng = np.random.default_rng([seed, 3])
    x = rng.uniform(-1.0, 1.0, size=(3, 6))
    coeff = rng.uniform(-1.0, 1.0, size=(3, 6))

    def loss():
        return float(np.sum(coeff * autodiff.softmax_rows(x)))

    probs = autodiff.softmax_rows(x)
    g_x = autodiff.softmax_backward(probs, coeff)
    return CheckResult("softmax", max_rel_err(g_x, central_diff(loss, x)), 1e-4)


def check_cross_entropy(seed=0):
    rng = np.random.default_rng([seed, 4])
    logits = rng.uniform(-1.0, 1.0, size=(4, 5))
    labels = rng.integers(0, 5, size=4)

    def loss():
        value, _ = autodiff.cross_entropy(logits, labels)
        return value

    _, grad = autodiff.cross_entropy(logits, labels)
    return CheckResult("cross_entropy", max_rel_err(grad, central_diff(loss, logits)), 1e-5)


def check_attention_loss(seed=0):
    rng = np.random.default_rng([seed, 5])
    attn = autodiff.softmax_rows(rng.uniform(-1.0, 1.0, size=(3, 6)))
    sets = [np.array([0, 2]), np.array([5]), np.array([1, 3, 4])]

    def loss():
        value, _ = fusion.attention_loss(attn, sets)
        return value

    _, grad = fusion.attention_loss(attn, sets)
    return CheckResult("attention_loss", max_rel_err(grad, central_diff(loss, attn)), 1e-4)


def check_composite(seed=0, batch=2, n_concepts=5, dim=8, n_classes=3, alpha=0.8, lam=0.6):
    """End-to-end check of the full objective over every trainable scalar."""
    rng = np.random.default_rng([seed, 6])
    params = fusion.FusionParams.init(dim, seed)
    fusion.expand_classes(params, n_classes, rng)
    image_feats = rng.uniform(-1.0, 1.0, size=(batch, dim))
    concept_feats = rng.uniform(-1.0, 1.0, size=(n_concepts, dim))
    labels = rng.integers(0, n_classes, size=batch)
    sets = [np.sort(rng.choice(n_concepts, size=2, replace=False)) for _ in range(batch)]

    def loss():
        trace = fusion.forward(params, image_feats, concept_feats)
        ce, _ = autodiff.cross_entropy(trace.logits_img, labels)
        aux, _ = autodiff.cross_entropy(trace.logits_aux, labels)
        attn, _ = fusion.attention_loss(trace.attn, sets)
        return alpha * ce + (1.0 - alpha) * aux + lam * attn

    trace = fusion.forward(params, image_feats, concept_feats)
    fusion.composite_loss(params, trace, labels, sets, alpha, lam)
    err = 0.0
    for name, tensor in params.tensors():
        err = max(err, max_rel_err(tensor.grad, central_diff(loss, tensor.value)))
    return CheckResult("composite", err, 1e-4)


def run_all(seed=0):
    return [
        check_linear(seed),
        check_layernorm(seed),
        check_softmax(seed),
        check_cross_entropy(seed),
        check_attention_loss(seed),
        check_composite(seed),
    ]
