"""Numeric kernel backends.

Two interchangeable implementations of the hot primitives live here: a
compiled Cython module (`_fast`) and a pure NumPy one (`reference`). They
execute the same float32 operations in the same order, so their outputs
are bit-identical; which one runs is chosen once at import time based on
whether the compiled extension built successfully. `set_backend` exists
for tests and benchmarks that want to pin one side explicitly.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import reference as _reference

try:
    from . import _fast as _compiled
except ImportError:
    _compiled = None

_active = _compiled if _compiled is not None else _reference

AVAILABLE_BACKENDS = ("reference",) if _compiled is None else ("compiled", "reference")


def backend_name() -> str:
    return "compiled" if _active is _compiled and _compiled is not None else "reference"


def set_backend(name: str) -> None:
    """Pin the kernel backend; `name` is "compiled" or "reference"."""
    global _active
    if name == "reference":
        _active = _reference
    elif name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel extension is not available")
        _active = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")


@contextmanager
def temporary_backend(name: str):
    previous = backend_name()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def _c_f32(x: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(x, dtype=np.float32)
    if not out.flags.writeable:
        # broadcast views and loaded buffers can be read-only; the compiled
        # backend takes writable memoryviews
        out = out.copy()
    return out


def exp_f32(x: np.ndarray) -> np.ndarray:
    """Elementwise exp on float32 with a platform-independent result."""
    return _active.exp_f32(_c_f32(x))


def matmul_nt(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[i, j] = sum_k a[i, k] * w[j, k]; a is [n, k], w is [out, k]."""
    return _active.matmul_nt(_c_f32(a), _c_f32(w))


def attention_batched(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Softmax attention over B independent triples.

    q [B, m, c], k [B, n, c], v [B, n, c] -> [B, m, c]. Logits are scaled
    by 1/sqrt(c) with c taken from the q shape.
    """
    q = _c_f32(q)
    sqrt_c = np.float32(np.sqrt(np.float32(q.shape[2])))
    return _active.attention_batched(q, _c_f32(k), _c_f32(v), sqrt_c)


def attention_weights_batched(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Softmax attention weight matrices [B, m, n] for the same logits."""
    q = _c_f32(q)
    sqrt_c = np.float32(np.sqrt(np.float32(q.shape[2])))
    return _active.attention_weights_batched(q, _c_f32(k), sqrt_c)
