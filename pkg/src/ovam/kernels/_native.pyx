# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of ovam.kernels.reference.

Same four kernels, same float64 semantics; explicit loops instead of numpy
temporaries so the optimizer's inner loop avoids allocation churn.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

NAME = "native"


def attention_softmax(queries, keys, int head_dim):
    q = np.ascontiguousarray(queries, dtype=np.float64)
    k = np.ascontiguousarray(keys, dtype=np.float64)
    cdef const double[:, :, ::1] qv = q
    cdef const double[:, :, ::1] kv = k
    cdef Py_ssize_t n_pix = qv.shape[0], heads = qv.shape[1], dim = qv.shape[2]
    cdef Py_ssize_t n_tok = kv.shape[0]
    out = np.empty((n_pix, heads, n_tok), dtype=np.float64)
    cdef double[:, :, ::1] av = out
    cdef double scale = 1.0 / sqrt(<double> head_dim)
    scratch = np.empty(n_tok, dtype=np.float64)
    cdef double[::1] logits = scratch
    cdef Py_ssize_t p, h, n, d
    cdef double acc, hi, total
    for p in range(n_pix):
        for h in range(heads):
            hi = -1e300
            for n in range(n_tok):
                acc = 0.0
                for d in range(dim):
                    acc += qv[p, h, d] * kv[n, h, d]
                acc *= scale
                logits[n] = acc
                if acc > hi:
                    hi = acc
            total = 0.0
            for n in range(n_tok):
                acc = exp(logits[n] - hi)
                logits[n] = acc
                total += acc
            for n in range(n_tok):
                av[p, h, n] = logits[n] / total
    return out


def attention_grad_keys(queries, attn, grad_attn, int head_dim):
    q = np.ascontiguousarray(queries, dtype=np.float64)
    a = np.ascontiguousarray(attn, dtype=np.float64)
    g = np.ascontiguousarray(grad_attn, dtype=np.float64)
    cdef const double[:, :, ::1] qv = q
    cdef const double[:, :, ::1] av = a
    cdef const double[:, :, ::1] gv = g
    cdef Py_ssize_t n_pix = qv.shape[0], heads = qv.shape[1], dim = qv.shape[2]
    cdef Py_ssize_t n_tok = av.shape[2]
    out = np.zeros((n_tok, heads, dim), dtype=np.float64)
    cdef double[:, :, ::1] dk = out
    cdef double scale = 1.0 / sqrt(<double> head_dim)
    cdef Py_ssize_t p, h, n, d
    cdef double inner, dz
    for p in range(n_pix):
        for h in range(heads):
            inner = 0.0
            for n in range(n_tok):
                inner += gv[p, h, n] * av[p, h, n]
            for n in range(n_tok):
                dz = av[p, h, n] * (gv[p, h, n] - inner) * scale
                for d in range(dim):
                    dk[n, h, d] += dz * qv[p, h, d]
    return out


cdef void _axis_taps(Py_ssize_t src, Py_ssize_t out,
                     Py_ssize_t[::1] lo, Py_ssize_t[::1] hi,
                     double[::1] w):
    cdef Py_ssize_t i
    cdef double step, pos
    if out == 1:
        lo[0] = 0
        hi[0] = 0
        w[0] = 0.0
        return
    step = (<double> (src - 1)) / (<double> (out - 1))
    for i in range(out):
        pos = i * step
        lo[i] = <Py_ssize_t> pos
        if lo[i] > src - 1:
            lo[i] = src - 1
        hi[i] = lo[i] + 1
        if hi[i] > src - 1:
            hi[i] = src - 1
        w[i] = pos - lo[i]


def resize_bilinear(src, Py_ssize_t out_h, Py_ssize_t out_w):
    s = np.ascontiguousarray(src, dtype=np.float64)
    cdef const double[:, ::1] sv = s
    cdef Py_ssize_t src_h = sv.shape[0], src_w = sv.shape[1]
    ylo_a = np.empty(out_h, dtype=np.intp)
    yhi_a = np.empty(out_h, dtype=np.intp)
    wy_a = np.empty(out_h, dtype=np.float64)
    xlo_a = np.empty(out_w, dtype=np.intp)
    xhi_a = np.empty(out_w, dtype=np.intp)
    wx_a = np.empty(out_w, dtype=np.float64)
    cdef Py_ssize_t[::1] ylo = ylo_a, yhi = yhi_a, xlo = xlo_a, xhi = xhi_a
    cdef double[::1] wy = wy_a, wx = wx_a
    _axis_taps(src_h, out_h, ylo, yhi, wy)
    _axis_taps(src_w, out_w, xlo, xhi, wx)
    out = np.empty((out_h, out_w), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double top, bot
    for i in range(out_h):
        for j in range(out_w):
            top = sv[ylo[i], xlo[j]] * (1.0 - wx[j]) + sv[ylo[i], xhi[j]] * wx[j]
            bot = sv[yhi[i], xlo[j]] * (1.0 - wx[j]) + sv[yhi[i], xhi[j]] * wx[j]
            ov[i, j] = top * (1.0 - wy[i]) + bot * wy[i]
    return out


def resize_bilinear_adjoint(grad, Py_ssize_t src_h, Py_ssize_t src_w):
    g = np.ascontiguousarray(grad, dtype=np.float64)
    cdef const double[:, ::1] gv = g
    cdef Py_ssize_t out_h = gv.shape[0], out_w = gv.shape[1]
    ylo_a = np.empty(out_h, dtype=np.intp)
    yhi_a = np.empty(out_h, dtype=np.intp)
    wy_a = np.empty(out_h, dtype=np.float64)
    xlo_a = np.empty(out_w, dtype=np.intp)
    xhi_a = np.empty(out_w, dtype=np.intp)
    wx_a = np.empty(out_w, dtype=np.float64)
    cdef Py_ssize_t[::1] ylo = ylo_a, yhi = yhi_a, xlo = xlo_a, xhi = xhi_a
    cdef double[::1] wy = wy_a, wx = wx_a
    _axis_taps(src_h, out_h, ylo, yhi, wy)
    _axis_taps(src_w, out_w, xlo, xhi, wx)
    out = np.zeros((src_h, src_w), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double gy0, gy1, val
    for i in range(out_h):
        for j in range(out_w):
            val = gv[i, j]
            gy0 = val * (1.0 - wy[i])
            gy1 = val * wy[i]
            ov[ylo[i], xlo[j]] += gy0 * (1.0 - wx[j])
            ov[ylo[i], xhi[j]] += gy0 * wx[j]
            ov[yhi[i], xlo[j]] += gy1 * (1.0 - wx[j])
            ov[yhi[i], xhi[j]] += gy1 * wx[j]
    return out
