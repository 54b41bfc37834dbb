# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: valid 1-D convolution (forward/backward) and the
polyphase windowed-sinc resampler. Loops are arranged so the innermost
pass is always over a contiguous array, which the C compiler can
vectorize. Semantics match clad.kernels.numpy_backend."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sin, sqrt, ceil, M_PI

cnp.import_array()

ctypedef fused real:
    float
    double


cdef double _i0(double x) noexcept nogil:
    # Series I0(x) = sum_k ((x/2)^k / k!)^2; converges fast for x <= ~30.
    cdef double half = x / 2.0
    cdef double term = 1.0
    cdef double total = 1.0
    cdef int k = 1
    while k < 400:
        term *= (half / k) * (half / k)
        total += term
        if term < total * 1e-18:
            break
        k += 1
    return total


cdef double _sinc(double u) noexcept nogil:
    if u == 0.0:
        return 1.0
    return sin(M_PI * u) / (M_PI * u)


def conv1d_forward(real[:, :, ::1] x, real[:, :, ::1] w, real[::1] b, int stride):
    cdef Py_ssize_t n_batch = x.shape[0], c_in = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t l_out = (length - k) // stride + 1
    if real is float:
        y_arr = np.empty((n_batch, c_out, l_out), dtype=np.float32)
        tmp_arr = np.empty(l_out, dtype=np.float32)
    else:
        y_arr = np.empty((n_batch, c_out, l_out), dtype=np.float64)
        tmp_arr = np.empty(l_out, dtype=np.float64)
    cdef real[:, :, ::1] y = y_arr
    cdef real[::1] tmp = tmp_arr
    cdef Py_ssize_t n, c, j, o, l
    cdef real wv
    with nogil:
        for n in range(n_batch):
            for o in range(c_out):
                for l in range(l_out):
                    y[n, o, l] = b[o]
            for c in range(c_in):
                for j in range(k):
                    for l in range(l_out):
                        tmp[l] = x[n, c, l * stride + j]
                    for o in range(c_out):
                        wv = w[o, c, j]
                        for l in range(l_out):
                            y[n, o, l] += wv * tmp[l]
    return y_arr


def conv1d_backward_input(real[:, :, ::1] dy, real[:, :, ::1] w, int stride,
                          Py_ssize_t input_len):
    cdef Py_ssize_t n_batch = dy.shape[0], c_out = dy.shape[1], l_out = dy.shape[2]
    cdef Py_ssize_t c_in = w.shape[1], k = w.shape[2]
    if real is float:
        dx_arr = np.zeros((n_batch, c_in, input_len), dtype=np.float32)
        tmp_arr = np.empty(l_out, dtype=np.float32)
    else:
        dx_arr = np.zeros((n_batch, c_in, input_len), dtype=np.float64)
        tmp_arr = np.empty(l_out, dtype=np.float64)
    cdef real[:, :, ::1] dx = dx_arr
    cdef real[::1] tmp = tmp_arr
    cdef Py_ssize_t n, c, j, o, l
    cdef real wv
    with nogil:
        for n in range(n_batch):
            for c in range(c_in):
                for j in range(k):
                    for l in range(l_out):
                        tmp[l] = 0.0
                    for o in range(c_out):
                        wv = w[o, c, j]
                        for l in range(l_out):
                            tmp[l] += wv * dy[n, o, l]
                    for l in range(l_out):
                        dx[n, c, l * stride + j] += tmp[l]
    return dx_arr


def conv1d_backward_weight(real[:, :, ::1] dy, real[:, :, ::1] x, Py_ssize_t k,
                           int stride):
    cdef Py_ssize_t n_batch = dy.shape[0], c_out = dy.shape[1], l_out = dy.shape[2]
    cdef Py_ssize_t c_in = x.shape[1]
    if real is float:
        dw_arr = np.zeros((c_out, c_in, k), dtype=np.float32)
        tmp_arr = np.empty(l_out, dtype=np.float32)
    else:
        dw_arr = np.zeros((c_out, c_in, k), dtype=np.float64)
        tmp_arr = np.empty(l_out, dtype=np.float64)
    cdef real[:, :, ::1] dw = dw_arr
    cdef real[::1] tmp = tmp_arr
    cdef Py_ssize_t n, c, j, o, l
    cdef real acc
    with nogil:
        for n in range(n_batch):
            for c in range(c_in):
                for j in range(k):
                    for l in range(l_out):
                        tmp[l] = x[n, c, l * stride + j]
                    for o in range(c_out):
                        acc = 0.0
                        for l in range(l_out):
                            acc += dy[n, o, l] * tmp[l]
                        dw[o, c, j] += acc
    return dw_arr


def resample_polyphase(double[::1] x, Py_ssize_t up, Py_ssize_t down,
                       int num_zeros, double beta, Py_ssize_t out_len):
    """Windowed-sinc resampling by the rational factor up/down.

    Output m interpolates the input at position m*down/up with a Kaiser-
    windowed sinc of cutoff min(1, up/down) and num_zeros zero crossings
    per side. The kernel is evaluated once per polyphase branch.
    """
    cdef Py_ssize_t length = x.shape[0]
    cdef double fc = 1.0 if up >= down else (<double> up) / (<double> down)
    cdef double half_width = num_zeros / fc
    cdef Py_ssize_t j_max = <Py_ssize_t> ceil(half_width) + 1
    cdef Py_ssize_t taps = 2 * j_max + 1
    cdef double inv_i0beta = 1.0 / _i0(beta)

    table_arr = np.zeros((up, taps), dtype=np.float64)
    cdef double[:, ::1] table = table_arr
    cdef Py_ssize_t p, r, m, q, i
    cdef double frac, u, t, acc
    for p in range(up):
        frac = (<double> p) / (<double> up)
        for r in range(taps):
            u = frac - (r - j_max)
            t = u * fc / num_zeros
            if t > -1.0 and t < 1.0:
                table[p, r] = fc * _sinc(fc * u) * _i0(beta * sqrt(1.0 - t * t)) * inv_i0beta

    y_arr = np.empty(out_len, dtype=np.float64)
    cdef double[::1] y = y_arr
    with nogil:
        for m in range(out_len):
            q = (m * down) // up
            p = (m * down) % up
            acc = 0.0
            for r in range(taps):
                i = q + r - j_max
                if 0 <= i < length:
                    acc += x[i] * table[p, r]
            y[m] = acc
    return y_arr
