"""Training kernels with a compiled fast path and a NumPy fallback.

The compiled backend (`_ckernels`, built from Cython at install time) is
selected automatically when present; set ``CONCEPTCIL_KERNELS=python`` to
force the fallback, or call :func:`set_backend` at runtime (used by the
benchmark and the cross-backend tests).
"""

import os

from . import _pykernels

_BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:
    _ckernels = None
else:
    _BACKENDS["cython"] = _ckernels

_requested = os.environ.get("CONCEPTCIL_KERNELS")
if _requested:
    if _requested not in _BACKENDS:
        raise ImportError(
            f"CONCEPTCIL_KERNELS={_requested!r} is not available; "
            f"built backends: {sorted(_BACKENDS)}"
        )
    _active = _BACKENDS[_requested]
else:
    _active = _BACKENDS.get("cython", _pykernels)


def available_backends():
    return sorted(_BACKENDS)


def active_backend():
    return _active.NAME


def set_backend(name):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; built backends: {sorted(_BACKENDS)}")
    _active = _BACKENDS[name]


def layernorm_forward(x, gain, shift, eps):
    return _active.layernorm_forward(x, gain, shift, eps)


def layernorm_backward(g_out, xhat, inv_std, gain):
    return _active.layernorm_backward(g_out, xhat, inv_std, gain)


def softmax_rows(x):
    return _active.softmax_rows(x)


def softmax_backward(probs, g_probs):
    return _active.softmax_backward(probs, g_probs)


def cross_entropy(logits, labels):
    return _active.cross_entropy(logits, labels)


def adamw_update(value, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    return _active.adamw_update(value, grad, m, v, step, lr, beta1, beta2, eps, weight_decay)
