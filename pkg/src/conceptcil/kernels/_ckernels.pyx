# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels; semantics match _pykernels.

Fuses the row reductions and elementwise work that costs NumPy a Python
round-trip plus temporaries per call. Matmuls are not reimplemented here;
callers keep using BLAS through numpy.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, pow, sqrt

cnp.import_array()

NAME = "cython"


def layernorm_forward(double[:, ::1] x, double[::1] gain, double[::1] shift, double eps):
    cdef Py_ssize_t b = x.shape[0], d = x.shape[1], i, j
    out_arr = np.empty((b, d))
    xhat_arr = np.empty((b, d))
    inv_arr = np.empty((b, 1))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[:, ::1] inv_std = inv_arr
    cdef double mean, var, diff, inv
    for i in range(b):
        mean = 0.0
        for j in range(d):
            mean += x[i, j]
        mean /= d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mean
            var += diff * diff
        var /= d
        inv = 1.0 / sqrt(var + eps)
        inv_std[i, 0] = inv
        for j in range(d):
            xhat[i, j] = (x[i, j] - mean) * inv
            out[i, j] = xhat[i, j] * gain[j] + shift[j]
    return out_arr, xhat_arr, inv_arr


def layernorm_backward(double[:, ::1] g_out, double[:, ::1] xhat,
                       double[:, ::1] inv_std, double[::1] gain):
    cdef Py_ssize_t b = g_out.shape[0], d = g_out.shape[1], i, j
    gx_arr = np.empty((b, d))
    ggain_arr = np.zeros(d)
    gshift_arr = np.zeros(d)
    cdef double[:, ::1] g_x = gx_arr
    cdef double[::1] g_gain = ggain_arr
    cdef double[::1] g_shift = gshift_arr
    cdef double mean_g, mean_gx, gh
    for i in range(b):
        mean_g = 0.0
        mean_gx = 0.0
        for j in range(d):
            gh = g_out[i, j] * gain[j]
            mean_g += gh
            mean_gx += gh * xhat[i, j]
            g_shift[j] += g_out[i, j]
            g_gain[j] += g_out[i, j] * xhat[i, j]
        mean_g /= d
        mean_gx /= d
        for j in range(d):
            g_x[i, j] = inv_std[i, 0] * (g_out[i, j] * gain[j] - mean_g - xhat[i, j] * mean_gx)
    return gx_arr, ggain_arr, gshift_arr


def softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t b = x.shape[0], n = x.shape[1], i, j
    out_arr = np.empty((b, n))
    cdef double[:, ::1] out = out_arr
    cdef double hi, total
    for i in range(b):
        hi = x[i, 0]
        for j in range(1, n):
            if x[i, j] > hi:
                hi = x[i, j]
        total = 0.0
        for j in range(n):
            out[i, j] = exp(x[i, j] - hi)
            total += out[i, j]
        for j in range(n):
            out[i, j] /= total
    return out_arr


def softmax_backward(double[:, ::1] probs, double[:, ::1] g_probs):
    cdef Py_ssize_t b = probs.shape[0], n = probs.shape[1], i, j
    out_arr = np.empty((b, n))
    cdef double[:, ::1] out = out_arr
    cdef double inner
    for i in range(b):
        inner = 0.0
        for j in range(n):
            inner += g_probs[i, j] * probs[i, j]
        for j in range(n):
            out[i, j] = probs[i, j] * (g_probs[i, j] - inner)
    return out_arr


def cross_entropy(double[:, ::1] logits, long long[::1] labels):
    cdef Py_ssize_t b = logits.shape[0], c = logits.shape[1], i, j
    cdef Py_ssize_t lab
    grad_arr = np.empty((b, c))
    cdef double[:, ::1] grad = grad_arr
    cdef double hi, total, loss = 0.0
    for i in range(b):
        hi = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > hi:
                hi = logits[i, j]
        total = 0.0
        for j in range(c):
            grad[i, j] = exp(logits[i, j] - hi)
            total += grad[i, j]
        lab = labels[i]
        loss += log(total) - (logits[i, lab] - hi)
        for j in range(c):
            grad[i, j] /= total
        grad[i, lab] -= 1.0
        for j in range(c):
            grad[i, j] /= b
    return loss / b, grad_arr


def adamw_update(double[::1] value, double[::1] grad, double[::1] m, double[::1] v,
                 long long step, double lr, double beta1, double beta2,
                 double eps, double weight_decay):
    cdef Py_ssize_t n = value.shape[0], i
    cdef double bc1 = 1.0 - pow(beta1, step)
    cdef double bc2 = 1.0 - pow(beta2, step)
    cdef double decay = 1.0 - lr * weight_decay
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        if weight_decay != 0.0:
            value[i] *= decay
        value[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
