"""Portable float32 kernels (pure NumPy backend).

These are the reference implementations of the hot numeric primitives:
projection matmuls and softmax attention. They are written so that every
reduction (dot products, softmax denominators, weighted value sums) runs
in ascending index order with float32 rounding after each step. The
compiled backend (`_fast.pyx`) performs the same operations in the same
order, so the two backends agree bit for bit and backend selection can
never change a result, only its speed.

Elementwise work is vectorized; IEEE-754 arithmetic is defined per
element, so vectorization does not affect the bits. The exponential is a
hand-rolled Cody-Waite reduction plus degree-5 polynomial (the classic
single-precision scheme) instead of libm/NumPy `exp`, because those two
can disagree in the last ulp and would break cross-backend equality.
"""

from __future__ import annotations

import numpy as np

F32 = np.float32

# exp() constants: argument clamp, Cody-Waite split of ln 2, polynomial.
_EXP_HI = F32(88.3762626647949)
_EXP_LO = F32(-87.3365478515625)
_LOG2E = F32(1.44269504088896341)
_LN2_HI = F32(0.693359375)
_LN2_LO = F32(-2.12194440e-4)
_EXP_POLY = (
    F32(1.9875691500e-4),
    F32(1.3981999507e-3),
    F32(8.3334519073e-3),
    F32(4.1665795894e-2),
    F32(1.6666665459e-1),
    F32(5.0000001201e-1),
)


def exp_f32(x: np.ndarray) -> np.ndarray:
    """Elementwise exp on float32 with a fixed, portable operation order."""
    x = np.clip(np.asarray(x, dtype=F32), _EXP_LO, _EXP_HI)
    n = np.floor(x * _LOG2E + F32(0.5))
    r = x - n * _LN2_HI
    r = r - n * _LN2_LO
    z = r * r
    y = np.full_like(r, _EXP_POLY[0])
    for coef in _EXP_POLY[1:]:
        y = y * r + coef
    y = y * z + r
    y = y + F32(1.0)
    # 2**n via exponent bits; n is integral in [-126, 127] after the clamp.
    pow2n = ((n.astype(np.int32) + np.int32(127)) << np.int32(23)).view(F32)
    return y * pow2n


def matmul_nt(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[i, j] = sum_k a[i, k] * w[j, k], accumulated over ascending k.

    `a` is [n, k] and `w` is [out, k] (a weight matrix applied as x @ w.T).
    """
    n, kdim = a.shape
    out = np.zeros((n, w.shape[0]), dtype=F32)
    for k in range(kdim):
        out += a[:, k, None] * w[None, :, k]
    return out


def attention_batched(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                      sqrt_c: np.float32) -> np.ndarray:
    """Softmax attention over B independent (Q, K, V) triples.

    Shapes: q [B, m, c], k [B, n, c], v [B, n, c] -> [B, m, c].
    Logits are (q . k) / sqrt_c; softmax subtracts the row max before
    exponentiating. Reductions run in ascending index order.
    """
    bdim, m, c = q.shape
    n = k.shape[1]
    logits = np.zeros((bdim, m, n), dtype=F32)
    for cc in range(c):
        logits += q[:, :, cc, None] * k[:, None, :, cc]
    logits = logits / sqrt_c
    e = exp_f32(logits - np.max(logits, axis=2, keepdims=True))
    denom = np.zeros((bdim, m), dtype=F32)
    for j in range(n):
        denom = denom + e[:, :, j]
    weights = e / denom[:, :, None]
    out = np.zeros((bdim, m, c), dtype=F32)
    for j in range(n):
        out += weights[:, :, j, None] * v[:, None, j, :]
    return out


def attention_weights_batched(q: np.ndarray, k: np.ndarray,
                              sqrt_c: np.float32) -> np.ndarray:
    """Softmax weight matrices [B, m, n] for the same logits as above."""
    bdim, m, c = q.shape
    n = k.shape[1]
    logits = np.zeros((bdim, m, n), dtype=F32)
    for cc in range(c):
        logits += q[:, :, cc, None] * k[:, None, :, cc]
    logits = logits / sqrt_c
    e = exp_f32(logits - np.max(logits, axis=2, keepdims=True))
    denom = np.zeros((bdim, m), dtype=F32)
    for j in range(n):
        denom = denom + e[:, :, j]
    return e / denom[:, :, None]
