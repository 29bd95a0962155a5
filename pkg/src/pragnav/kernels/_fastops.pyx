# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled fused LSTM cell kernels.

Same contract as kernels.pure; gate layout (input, forget, output, candidate).
The whole step runs in C loops so small models are not dominated by Python
dispatch overhead.
"""

import numpy as np

cimport cython
from libc.math cimport exp, tanh

ctypedef fused real:
    float
    double


cdef inline real _sig(real x) noexcept nogil:
    cdef real e
    if x >= 0:
        return <real>(1.0 / (1.0 + exp(-x)))
    e = <real>exp(x)
    return <real>(e / (1.0 + e))


def lstm_forward(real[:, ::1] W, real[::1] b, real[::1] z, real[::1] c_prev):
    cdef Py_ssize_t H = c_prev.shape[0]
    cdef Py_ssize_t Z = z.shape[0]
    dtype = np.asarray(b).dtype
    gates_arr = np.empty(4 * H, dtype=dtype)
    hc_arr = np.empty(2 * H, dtype=dtype)
    tc_arr = np.empty(H, dtype=dtype)
    cdef real[::1] gates = gates_arr
    cdef real[::1] hc = hc_arr
    cdef real[::1] tc = tc_arr
    cdef Py_ssize_t r, k
    cdef real acc, i, f, o, g, c
    with nogil:
        for r in range(4 * H):
            acc = b[r]
            for k in range(Z):
                acc += W[r, k] * z[k]
            gates[r] = acc
        for r in range(H):
            i = _sig(gates[r])
            f = _sig(gates[H + r])
            o = _sig(gates[2 * H + r])
            g = <real>tanh(gates[3 * H + r])
            gates[r] = i
            gates[H + r] = f
            gates[2 * H + r] = o
            gates[3 * H + r] = g
            c = f * c_prev[r] + i * g
            tc[r] = <real>tanh(c)
            hc[r] = o * tc[r]
            hc[H + r] = c
    return hc_arr, (gates_arr, tc_arr, np.asarray(z), np.asarray(c_prev))


def lstm_infer(real[:, ::1] W, real[::1] b, real[::1] z, real[::1] c_prev):
    cdef Py_ssize_t H = c_prev.shape[0]
    cdef Py_ssize_t Z = z.shape[0]
    hc_arr = np.empty(2 * H, dtype=np.asarray(b).dtype)
    cdef real[::1] hc = hc_arr
    cdef Py_ssize_t r, k
    cdef real acc, i, f, o, g, c
    cdef real[::1] pre
    pre_arr = np.empty(4 * H, dtype=np.asarray(b).dtype)
    pre = pre_arr
    with nogil:
        for r in range(4 * H):
            acc = b[r]
            for k in range(Z):
                acc += W[r, k] * z[k]
            pre[r] = acc
        for r in range(H):
            i = _sig(pre[r])
            f = _sig(pre[H + r])
            o = _sig(pre[2 * H + r])
            g = <real>tanh(pre[3 * H + r])
            c = f * c_prev[r] + i * g
            hc[H + r] = c
            hc[r] = o * <real>tanh(c)
    return hc_arr


def lstm_backward(real[:, ::1] W, cache, real[::1] d_hc):
    gates_arr, tc_arr, z_arr, c_prev_arr = cache
    cdef real[::1] gates = gates_arr
    cdef real[::1] tc = tc_arr
    cdef real[::1] z = z_arr
    cdef real[::1] c_prev = c_prev_arr
    cdef Py_ssize_t H = c_prev.shape[0]
    cdef Py_ssize_t Z = z.shape[0]
    dtype = np.asarray(z_arr).dtype
    dW_arr = np.empty((4 * H, Z), dtype=dtype)
    dpre_arr = np.empty(4 * H, dtype=dtype)
    dz_arr = np.zeros(Z, dtype=dtype)
    dc_prev_arr = np.empty(H, dtype=dtype)
    cdef real[:, ::1] dW = dW_arr
    cdef real[::1] dpre = dpre_arr
    cdef real[::1] dz = dz_arr
    cdef real[::1] dc_prev = dc_prev_arr
    cdef Py_ssize_t r, k
    cdef real dh, dc, i, f, o, g, dv
    with nogil:
        for r in range(H):
            dh = d_hc[r]
            dc = d_hc[H + r] + dh * gates[2 * H + r] * (1.0 - tc[r] * tc[r])
            i = gates[r]
            f = gates[H + r]
            o = gates[2 * H + r]
            g = gates[3 * H + r]
            dpre[r] = dc * g * i * (1.0 - i)
            dpre[H + r] = dc * c_prev[r] * f * (1.0 - f)
            dpre[2 * H + r] = dh * tc[r] * o * (1.0 - o)
            dpre[3 * H + r] = dc * i * (1.0 - g * g)
            dc_prev[r] = dc * f
        for r in range(4 * H):
            dv = dpre[r]
            for k in range(Z):
                dW[r, k] = dv * z[k]
                dz[k] += dv * W[r, k]
    return dW_arr, dpre_arr, dz_arr, dc_prev_arr
