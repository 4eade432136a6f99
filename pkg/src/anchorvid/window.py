"""Window temporal attention with duplicated anchor tokens.

Instead of attending to all f frames, frame i attends to a length-f list
built from the preceding frames: the first frame's tokens are duplicated
(f - i + 1) times, followed by frames 2..i. The list comes in two
flavors that differ only in position embeddings:

  uncorrected  every copy keeps its content frame's embedding, so the
               list carries position indices {1, 1, ..., 1, 2, ..., i};
  corrected    position indices are reassigned 1..f in list order, so
               each embedding appears exactly once despite the
               duplicated content.

Tokens are drawn from a pool of all f^2 (content i, position j) pairs,
where entry (i, j) is the projection of z_i + p_j. The query for frame i
uses the position index its own key carries at its last occurrence in
the list: i for the uncorrected flavor, f for the corrected one. At
i = f both flavors contain every frame once and reduce to global
attention.

A third flavor anchors both ends for frame interpolation: the list holds
frame 1, frames 2..i, and frame f, padding split as evenly as possible
between duplicates of the two anchors (excess copy to frame 1). The end
frames attend only to themselves and the opposite anchor. Position
indices are reassigned 1..f in list order, like the corrected flavor.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .attention import TemporalAttentionParams, global_temporal_attention


class AttentionMode(enum.Enum):
    GLOBAL = "global"
    WINDOW_UNCORRECTED = "window"
    WINDOW_CORRECTED = "window-pc"
    WINDOW_TWO_ANCHOR = "window-two-anchor"


_WINDOW_MODES = (
    AttentionMode.WINDOW_UNCORRECTED,
    AttentionMode.WINDOW_CORRECTED,
    AttentionMode.WINDOW_TWO_ANCHOR,
)


@dataclass(frozen=True)
class PositionCorrectedPool:
    """All f^2 projected (content, position) combinations at one site.

    q[i-1, j-1] is the query projection of z_i + p_j (1-based i, j);
    likewise k and v. Diagonal entries (i, i) match plain projection.
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    @property
    def f(self) -> int:
        return self.q.shape[0]

    @property
    def c(self) -> int:
        return self.q.shape[2]


def build_pool(z: np.ndarray, params: TemporalAttentionParams) -> PositionCorrectedPool:
    """Pool for frame tokens [f, c]: project z_i + p_j for every (i, j)."""
    q, k, v = _build_pool_batched(z[None], params)
    return PositionCorrectedPool(q[0], k[0], v[0])


def _build_pool_batched(zb: np.ndarray, params: TemporalAttentionParams):
    """Pools [B, f, f, c] for a batch of sites; one matmul per projection."""
    bdim, f, c = zb.shape
    if c != params.channels:
        raise ValueError(f"tokens have {c} channels, params expect {params.channels}")
    if f > params.pos.f_max:
        raise ValueError(f"{f} frames exceed position table of {params.pos.f_max}")
    x = (zb[:, :, None, :] + params.pos.table[None, None, :f, :]).reshape(-1, c)
    shape = (bdim, f, f, c)
    return (params.wq.apply(x).reshape(shape),
            params.wk.apply(x).reshape(shape),
            params.wv.apply(x).reshape(shape))


def window_list_indices(i: int, f: int, mode: AttentionMode):
    """1-based (contents, positions) of frame i's key/value list.

    Returns two tuples of length f. contents[n] is the frame whose token
    sits at slot n; positions[n] is the position embedding it carries.
    """
    if not 1 <= i <= f:
        raise ValueError(f"frame index {i} out of range 1..{f}")
    if mode is AttentionMode.WINDOW_UNCORRECTED:
        contents = (1,) * (f - i + 1) + tuple(range(2, i + 1))
        return contents, contents
    if mode is AttentionMode.WINDOW_CORRECTED:
        contents = (1,) * (f - i + 1) + tuple(range(2, i + 1))
        return contents, tuple(range(1, f + 1))
    if mode is AttentionMode.WINDOW_TWO_ANCHOR:
        return _two_anchor_indices(i, f)
    raise ValueError(f"no key/value list for mode {mode}")


def _two_anchor_indices(i: int, f: int):
    if f < 3:
        raise ValueError("two-anchor window needs f >= 3 (an interior frame)")
    if i == 1:
        contents = (1,) * (f - 1) + (f,)
    elif i == f:
        contents = (1,) + (f,) * (f - 1)
    else:
        pad = f - (i + 1)
        extra_first = (pad + 1) // 2
        contents = ((1,) * (1 + extra_first)
                    + tuple(range(2, i + 1))
                    + (f,) * (1 + pad - extra_first))
    return contents, tuple(range(1, f + 1))


def query_position(i: int, f: int, mode: AttentionMode) -> int:
    """Position index of frame i's query: where its own key last occurs."""
    contents, positions = window_list_indices(i, f, mode)
    last = max(n for n, content in enumerate(contents) if content == i)
    return positions[last]


def _gather(pool: PositionCorrectedPool, which: np.ndarray, contents, positions):
    idx_c = np.asarray(contents) - 1
    idx_p = np.asarray(positions) - 1
    return np.ascontiguousarray(which[idx_c, idx_p])


def window_keys_values_uncorrected(pool: PositionCorrectedPool, i: int, f: int):
    """(K, V) lists [f, c] with duplicated frame-1 tokens, positions as-is."""
    contents, positions = window_list_indices(i, f, AttentionMode.WINDOW_UNCORRECTED)
    return (_gather(pool, pool.k, contents, positions),
            _gather(pool, pool.v, contents, positions))


def window_keys_values_corrected(pool: PositionCorrectedPool, i: int, f: int):
    """(K, V) lists [f, c]; same contents, positions reassigned 1..f."""
    contents, positions = window_list_indices(i, f, AttentionMode.WINDOW_CORRECTED)
    return (_gather(pool, pool.k, contents, positions),
            _gather(pool, pool.v, contents, positions))


def two_anchor_keys_values(pool: PositionCorrectedPool, i: int, f: int):
    """(K, V) lists [f, c] anchored at both ends; needs f >= 3."""
    contents, positions = window_list_indices(i, f, AttentionMode.WINDOW_TWO_ANCHOR)
    return (_gather(pool, pool.k, contents, positions),
            _gather(pool, pool.v, contents, positions))


def window_attention_output(z: np.ndarray, params: TemporalAttentionParams,
                            mode: AttentionMode) -> np.ndarray:
    """Per-frame window attention over frame tokens [f, c]."""
    return temporal_attention_batched(z[None], params, mode)[0]


def temporal_attention(z: np.ndarray, params: TemporalAttentionParams,
                       mode: AttentionMode) -> np.ndarray:
    """Dispatch one site's frame tokens [f, c] through the chosen mode."""
    return temporal_attention_batched(z[None], params, mode)[0]


def temporal_attention_batched(zb: np.ndarray, params: TemporalAttentionParams,
                               mode: AttentionMode) -> np.ndarray:
    """Temporal attention for a batch of sites [B, f, c] -> [B, f, c].

    Bitwise identical to looping temporal_attention over the batch. A
    two-anchor request with f < 3 falls back to global attention (there
    is no interior frame to window over).
    """
    bdim, f, c = zb.shape
    if mode is AttentionMode.WINDOW_TWO_ANCHOR and f < 3:
        mode = AttentionMode.GLOBAL
    if mode is AttentionMode.GLOBAL:
        x = (zb + params.pos.table[None, :f, :]).reshape(-1, c)
        q = params.wq.apply(x).reshape(bdim, f, c)
        k = params.wk.apply(x).reshape(bdim, f, c)
        v = params.wv.apply(x).reshape(bdim, f, c)
        return kernels.attention_batched(q, k, v)
    if mode not in _WINDOW_MODES:
        raise ValueError(f"unknown attention mode {mode!r}")
    poolq, poolk, poolv = _build_pool_batched(zb, params)
    idx_c = np.empty((f, f), dtype=np.intp)
    idx_p = np.empty((f, f), dtype=np.intp)
    q_pos = np.empty(f, dtype=np.intp)
    for i in range(1, f + 1):
        contents, positions = window_list_indices(i, f, mode)
        idx_c[i - 1] = np.asarray(contents) - 1
        idx_p[i - 1] = np.asarray(positions) - 1
        q_pos[i - 1] = query_position(i, f, mode) - 1
    keys = poolk[:, idx_c, idx_p]
    values = poolv[:, idx_c, idx_p]
    queries = poolq[:, np.arange(f), q_pos]
    out = kernels.attention_batched(queries.reshape(bdim * f, 1, c),
                                    keys.reshape(bdim * f, f, c),
                                    values.reshape(bdim * f, f, c))
    return out.reshape(bdim, f, c)
