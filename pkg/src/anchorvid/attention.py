"""Linear projections, position embeddings, and the two base attentions.

Temporal attention treats the f per-frame tokens at one spatial site as a
sequence: each token gets its frame's position embedding added, is
projected to q/k/v (no biases, single head), and attends to all frames
with logits scaled by 1/sqrt(c). Spatial attention runs over the hw
tokens of one frame with no position embeddings (token order carries the
layout) and can substitute externally supplied keys/values, which is how
frame-1 appearance is shared across frames.

Softmax uses max-subtraction; the brute-force oracles in the test suite
mirror that exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor_store import check_finite

F32 = np.float32

SINUSOID_BASE = 10000.0


@dataclass(frozen=True)
class LinearParams:
    """Bias-free linear map; weight is [out_ch, in_ch], applied per row."""

    weight: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ValueError("LinearParams.weight must be 2-D")
        check_finite(self.weight, "LinearParams.weight")

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Row-wise W @ x for x of shape [n, in_ch] (or [in_ch])."""
        if x.ndim == 1:
            return kernels.matmul_nt(x[None, :], self.weight)[0]
        return kernels.matmul_nt(x, self.weight)


@dataclass(frozen=True)
class PositionEmbeddings:
    """Embedding table [f_max, c]; row j-1 is the vector for frame j."""

    table: np.ndarray

    def __post_init__(self):
        check_finite(self.table, "PositionEmbeddings.table")

    @property
    def f_max(self) -> int:
        return self.table.shape[0]

    def row(self, frame: int) -> np.ndarray:
        """Embedding p_frame for a 1-based frame index."""
        if not 1 <= frame <= self.f_max:
            raise ValueError(f"frame {frame} outside table of {self.f_max}")
        return self.table[frame - 1]


@dataclass(frozen=True)
class TemporalAttentionParams:
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    pos: PositionEmbeddings

    def __post_init__(self):
        c = self.wq.in_ch
        for lin in (self.wq, self.wk, self.wv):
            if lin.in_ch != c or lin.out_ch != c:
                raise ValueError("temporal projections must be square and share c")
        if self.pos.table.shape[1] != c:
            raise ValueError("position table channel count mismatch")

    @property
    def channels(self) -> int:
        return self.wq.in_ch


@dataclass(frozen=True)
class SpatialAttentionParams:
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams

    def __post_init__(self):
        c = self.wq.in_ch
        for lin in (self.wq, self.wk, self.wv):
            if lin.in_ch != c or lin.out_ch != c:
                raise ValueError("spatial projections must be square and share c")


def sinusoidal_embedding(j: float, c: int) -> np.ndarray:
    """Sinusoidal vector for position j: pairs (sin, cos) of j * base^(-2k/c).

    Evaluated in float64, rounded once to float32. j=0 gives [0, 1, 0, 1, ...].
    """
    out = np.empty(c, dtype=np.float64)
    for k in range((c + 1) // 2):
        w = SINUSOID_BASE ** (-2.0 * k / c)
        out[2 * k] = math.sin(j * w)
        if 2 * k + 1 < c:
            out[2 * k + 1] = math.cos(j * w)
    return out.astype(F32)


def position_table(f_max: int, c: int) -> PositionEmbeddings:
    """Rows 0..f_max-1 are sinusoidal_embedding(j, c); row j-1 serves frame j."""
    table = np.stack([sinusoidal_embedding(j, c) for j in range(f_max)])
    return PositionEmbeddings(np.ascontiguousarray(table, dtype=F32))


def project_qkv(z: np.ndarray, params: TemporalAttentionParams):
    """Project frame tokens [f, c] to (Q, K, V), each [f, c].

    Row i is W(z_i + p_i): token i carries its own frame's embedding, so
    content index and position index coincide here.
    """
    f, c = z.shape
    if c != params.channels:
        raise ValueError(f"tokens have {c} channels, params expect {params.channels}")
    if f > params.pos.f_max:
        raise ValueError(f"{f} frames exceed position table of {params.pos.f_max}")
    x = z + params.pos.table[:f]
    return params.wq.apply(x), params.wk.apply(x), params.wv.apply(x)


def global_temporal_attention(z: np.ndarray, params: TemporalAttentionParams) -> np.ndarray:
    """Every frame attends to all f frames; output [f, c]."""
    q, k, v = project_qkv(z, params)
    return kernels.attention_batched(q[None], k[None], v[None])[0]


def spatial_kv(x: np.ndarray, params: SpatialAttentionParams):
    """Projected (K, V) for spatial tokens [hw, c]; what frame 1 shares."""
    return params.wk.apply(x), params.wv.apply(x)


def spatial_self_attention(x: np.ndarray, params: SpatialAttentionParams,
                           shared_kv=None) -> np.ndarray:
    """Attention over the hw tokens of one frame; output [hw, c].

    With shared_kv=(K, V), queries still come from x but keys/values are
    the supplied projected tensors (typically captured from frame 1), so
    outputs are convex combinations of the donor frame's value rows.
    """
    q = params.wq.apply(x)
    if shared_kv is None:
        k, v = spatial_kv(x, params)
    else:
        k, v = shared_kv
        if k.shape != x.shape or v.shape != x.shape:
            raise ValueError("shared K/V shape mismatch with query tokens")
    return kernels.attention_batched(q[None], k[None], v[None])[0]


def spatial_self_attention_frames(frames: np.ndarray, params: SpatialAttentionParams,
                                  shared_kv=None) -> np.ndarray:
    """Batched per-frame spatial attention for tokens [f, hw, c].

    Bitwise identical to looping spatial_self_attention over frames; with
    shared_kv, one (K, V) pair serves every frame.
    """
    f, hw, c = frames.shape
    q = params.wq.apply(frames.reshape(f * hw, c)).reshape(f, hw, c)
    if shared_kv is None:
        k = params.wk.apply(frames.reshape(f * hw, c)).reshape(f, hw, c)
        v = params.wv.apply(frames.reshape(f * hw, c)).reshape(f, hw, c)
    else:
        k0, v0 = shared_kv
        k = np.broadcast_to(k0, (f, hw, c))
        v = np.broadcast_to(v0, (f, hw, c))
    return kernels.attention_batched(q, k, v)
