# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled float32 kernels.

Same arithmetic, in the same order, as `reference.py`: float32 rounding
after every multiply/add, reductions in ascending index order, and the
identical Cody-Waite exp. Compiled with -ffp-contract=off so no FMA fusion
can change the rounding; results are bit-identical to the reference
backend on any IEEE-754 platform.
"""

from libc.math cimport floorf

import numpy as np


cdef float EXP_HI = 88.3762626647949
cdef float EXP_LO = -87.3365478515625
cdef float LOG2E = 1.44269504088896341
cdef float LN2_HI = 0.693359375
cdef float LN2_LO = -2.12194440e-4
cdef float P0 = 1.9875691500e-4
cdef float P1 = 1.3981999507e-3
cdef float P2 = 8.3334519073e-3
cdef float P3 = 4.1665795894e-2
cdef float P4 = 1.6666665459e-1
cdef float P5 = 5.0000001201e-1


cdef union _f32_bits:
    float f
    int i


cdef inline float _exp_f32(float x) noexcept nogil:
    cdef float n, r, z, y
    cdef _f32_bits bits
    if x > EXP_HI:
        x = EXP_HI
    if x < EXP_LO:
        x = EXP_LO
    n = floorf(x * LOG2E + 0.5)
    r = x - n * LN2_HI
    r = r - n * LN2_LO
    z = r * r
    y = P0
    y = y * r + P1
    y = y * r + P2
    y = y * r + P3
    y = y * r + P4
    y = y * r + P5
    y = y * z + r
    y = y + 1.0
    bits.i = (<int> n + 127) << 23
    return y * bits.f


def exp_f32(x):
    """Elementwise exp on float32; same bits as the reference backend."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    out = np.empty_like(arr)
    cdef float[::1] src = arr.reshape(-1)
    cdef float[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i
    with nogil:
        for i in range(src.shape[0]):
            dst[i] = _exp_f32(src[i])
    return out


def matmul_nt(a, w):
    """out[i, j] = sum_k a[i, k] * w[j, k] with ascending-k accumulation."""
    cdef float[:, ::1] av = a
    cdef float[:, ::1] wv = w
    out = np.empty((av.shape[0], wv.shape[0]), dtype=np.float32)
    cdef float[:, ::1] ov = out
    cdef Py_ssize_t i, j, k
    cdef float acc
    with nogil:
        for i in range(av.shape[0]):
            for j in range(wv.shape[0]):
                acc = 0.0
                for k in range(av.shape[1]):
                    acc = acc + av[i, k] * wv[j, k]
                ov[i, j] = acc
    return out


def attention_batched(q, k, v, float sqrt_c):
    """Softmax attention over B independent triples; see reference backend."""
    cdef float[:, :, ::1] qv = q
    cdef float[:, :, ::1] kv = k
    cdef float[:, :, ::1] vv = v
    cdef Py_ssize_t bdim = qv.shape[0], m = qv.shape[1], c = qv.shape[2]
    cdef Py_ssize_t n = kv.shape[1]
    out = np.empty((bdim, m, c), dtype=np.float32)
    scratch = np.empty(n, dtype=np.float32)
    cdef float[:, :, ::1] ov = out
    cdef float[::1] row = scratch
    cdef Py_ssize_t b, i, j, cc
    cdef float acc, mx, denom, wgt
    with nogil:
        for b in range(bdim):
            for i in range(m):
                for j in range(n):
                    acc = 0.0
                    for cc in range(c):
                        acc = acc + qv[b, i, cc] * kv[b, j, cc]
                    row[j] = acc / sqrt_c
                mx = row[0]
                for j in range(1, n):
                    if row[j] > mx:
                        mx = row[j]
                denom = 0.0
                for j in range(n):
                    row[j] = _exp_f32(row[j] - mx)
                    denom = denom + row[j]
                for cc in range(c):
                    ov[b, i, cc] = 0.0
                for j in range(n):
                    wgt = row[j] / denom
                    for cc in range(c):
                        ov[b, i, cc] = ov[b, i, cc] + wgt * vv[b, j, cc]
    return out


def attention_weights_batched(q, k, float sqrt_c):
    """Softmax weight matrices [B, m, n] for the same logits as above."""
    cdef float[:, :, ::1] qv = q
    cdef float[:, :, ::1] kv = k
    cdef Py_ssize_t bdim = qv.shape[0], m = qv.shape[1], c = qv.shape[2]
    cdef Py_ssize_t n = kv.shape[1]
    out = np.empty((bdim, m, n), dtype=np.float32)
    cdef float[:, :, ::1] ov = out
    cdef Py_ssize_t b, i, j, cc
    cdef float acc, mx, denom
    with nogil:
        for b in range(bdim):
            for i in range(m):
                for j in range(n):
                    acc = 0.0
                    for cc in range(c):
                        acc = acc + qv[b, i, cc] * kv[b, j, cc]
                    ov[b, i, j] = acc / sqrt_c
                mx = ov[b, i, 0]
                for j in range(1, n):
                    if ov[b, i, j] > mx:
                        mx = ov[b, i, j]
                denom = 0.0
                for j in range(n):
                    ov[b, i, j] = _exp_f32(ov[b, i, j] - mx)
                    denom = denom + ov[b, i, j]
                for j in range(n):
                    ov[b, i, j] = ov[b, i, j] / denom
    return out
