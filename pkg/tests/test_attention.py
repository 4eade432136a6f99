"""Position embeddings, projections, and the two base attentions."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anchorvid.attention import (LinearParams, PositionEmbeddings,
                                 SpatialAttentionParams, SINUSOID_BASE,
                                 TemporalAttentionParams,
                                 global_temporal_attention, position_table,
                                 project_qkv, sinusoidal_embedding,
                                 spatial_kv, spatial_self_attention,
                                 spatial_self_attention_frames)
from anchorvid.checks import (make_spatial_params, make_temporal_params,
                              oracle_spatial, oracle_temporal)
from anchorvid.tensor_store import SeededRng, randn
from anchorvid.window import AttentionMode


def _rand(seed, shape):
    return randn(SeededRng(seed), shape)


def _identity_temporal(c, f_max):
    eye = LinearParams(np.eye(c, dtype=np.float32))
    return TemporalAttentionParams(eye, eye, eye, position_table(f_max, c))


# --- sinusoidal embeddings ----------------------------------------------

def test_sinusoid_at_zero():
    e = sinusoidal_embedding(0.0, 8)
    assert e.tolist() == [0.0, 1.0] * 4


def test_sinusoid_closed_form():
    c = 10
    j = 3.75
    e = sinusoidal_embedding(j, c).astype(np.float64)
    for k in range(c // 2):
        w = SINUSOID_BASE ** (-2.0 * k / c)
        assert abs(e[2 * k] - math.sin(j * w)) < 1e-7
        assert abs(e[2 * k + 1] - math.cos(j * w)) < 1e-7


def test_sinusoid_odd_width():
    e = sinusoidal_embedding(1.0, 5)
    assert e.shape == (5,)
    assert abs(float(e[4]) - math.sin(1.0 * SINUSOID_BASE ** (-4.0 / 5.0))) < 1e-7


@given(st.floats(-100, 100), st.integers(2, 32))
def test_sinusoid_is_bounded(j, c):
    e = sinusoidal_embedding(j, c)
    assert np.all(np.abs(e) <= 1.0 + 1e-6)


def test_position_table_rows():
    pos = position_table(6, 8)
    assert pos.f_max == 6
    # frame j is served by sinusoidal_embedding(j - 1)
    for frame in range(1, 7):
        want = sinusoidal_embedding(float(frame - 1), 8)
        assert pos.row(frame).tobytes() == want.tobytes()
    with pytest.raises(ValueError):
        pos.row(0)
    with pytest.raises(ValueError):
        pos.row(7)


def test_position_rows_distinct():
    pos = position_table(64, 16)
    rows = {pos.table[i].tobytes() for i in range(64)}
    assert len(rows) == 64


# --- linear params -------------------------------------------------------

def test_linear_apply_matches_matmul():
    w = _rand(1, (5, 7))
    x = _rand(2, (4, 7))
    lin = LinearParams(w)
    want = x.astype(np.float64) @ w.astype(np.float64).T
    assert np.max(np.abs(lin.apply(x).astype(np.float64) - want)) < 1e-5
    # 1-D input maps to 1-D output
    y = lin.apply(x[0])
    assert y.shape == (5,)
    assert y.tobytes() == lin.apply(x)[0].tobytes()


def test_linear_rejects_bad_weight():
    with pytest.raises(ValueError):
        LinearParams(np.zeros(3, dtype=np.float32))
    with pytest.raises(ValueError):
        LinearParams(np.array([[np.nan]], dtype=np.float32))


def test_temporal_params_validation():
    eye = LinearParams(np.eye(4, dtype=np.float32))
    rect = LinearParams(np.zeros((4, 5), dtype=np.float32))
    pos = position_table(8, 4)
    with pytest.raises(ValueError):
        TemporalAttentionParams(rect, eye, eye, pos)
    with pytest.raises(ValueError):
        TemporalAttentionParams(eye, eye, eye, position_table(8, 6))


# --- temporal attention ---------------------------------------------------

def test_project_qkv_identity_projection():
    c, f = 6, 3
    params = _identity_temporal(c, 8)
    z = _rand(4, (f, c))
    q, k, v = project_qkv(z, params)
    want = z + params.pos.table[:f]
    for got in (q, k, v):
        assert np.max(np.abs(got - want)) < 1e-6


def test_single_frame_attention_returns_value():
    """One frame attends only to itself: output is exactly v_1^1."""
    c = 6
    params = _identity_temporal(c, 8)
    z = _rand(5, (1, c))
    out = global_temporal_attention(z, params)
    want = z[0] + params.pos.table[0]
    assert np.max(np.abs(out[0] - want)) < 1e-6


def test_project_qkv_rejects_shape_mismatch():
    params = make_temporal_params(0, c=8, f_max=4)
    with pytest.raises(ValueError):
        project_qkv(_rand(1, (2, 6)), params)      # wrong channel count
    with pytest.raises(ValueError):
        project_qkv(_rand(1, (5, 8)), params)      # more frames than table


def test_global_attention_matches_oracle():
    for seed in range(20):
        f, c = 1 + seed % 6, 8
        params = make_temporal_params(seed, c=c, f_max=16)
        z = _rand(seed + 50, (f, c))
        got = global_temporal_attention(z, params).astype(np.float64)
        want = oracle_temporal(z, params, AttentionMode.GLOBAL)
        assert np.max(np.abs(got - want)) < 1e-6


def test_position_embeddings_change_output():
    """Identical frame contents still yield distinct per-frame outputs."""
    c, f = 8, 4
    params = make_temporal_params(3, c=c, f_max=8)
    z = np.tile(_rand(4, (1, c)), (f, 1))
    out = global_temporal_attention(z, params)
    assert not np.array_equal(out[0], out[1])


def test_constant_position_table_collapses_identical_frames():
    """With a constant table, identical frames become indistinguishable."""
    c, f = 8, 4
    row = sinusoidal_embedding(2.0, c)
    const = PositionEmbeddings(np.tile(row, (8, 1)))
    params = make_temporal_params(3, c=c, f_max=8, table=const)
    z = np.tile(_rand(4, (1, c)), (f, 1))
    out = global_temporal_attention(z, params)
    for i in range(1, f):
        assert out[i].tobytes() == out[0].tobytes()


# --- spatial attention -----------------------------------------------------

def test_spatial_matches_oracle():
    for seed in range(20):
        hw, c = 1 + seed % 8, 8
        params = make_spatial_params(seed, c=c)
        x = _rand(seed + 99, (hw, c))
        got = spatial_self_attention(x, params).astype(np.float64)
        want = oracle_spatial(x, params)
        assert np.max(np.abs(got - want)) < 1e-6


def test_spatial_shared_kv_matches_oracle():
    params = make_spatial_params(4, c=8)
    x = _rand(1, (5, 8))
    donor = _rand(2, (5, 8))
    kv = spatial_kv(donor, params)
    got = spatial_self_attention(x, params, shared_kv=kv).astype(np.float64)
    want = oracle_spatial(x, params, shared_kv=kv)
    assert np.max(np.abs(got - want)) < 1e-6


def test_shared_kv_self_is_plain_attention():
    """Sharing a frame's own K/V reproduces plain self-attention bitwise."""
    params = make_spatial_params(6, c=8)
    x = _rand(7, (9, 8))
    plain = spatial_self_attention(x, params)
    shared = spatial_self_attention(x, params, shared_kv=spatial_kv(x, params))
    assert plain.tobytes() == shared.tobytes()


def test_shared_kv_shape_mismatch_rejected():
    params = make_spatial_params(6, c=8)
    x = _rand(7, (9, 8))
    k, v = spatial_kv(_rand(8, (4, 8)), params)
    with pytest.raises(ValueError):
        spatial_self_attention(x, params, shared_kv=(k, v))


def test_batched_frames_equal_per_frame_loop():
    params = make_spatial_params(9, c=8)
    frames = _rand(10, (5, 6, 8))
    batched = spatial_self_attention_frames(frames, params)
    for i in range(5):
        single = spatial_self_attention(frames[i], params)
        assert batched[i].tobytes() == single.tobytes()


def test_batched_frames_shared_kv_equal_loop():
    params = make_spatial_params(9, c=8)
    frames = _rand(11, (4, 6, 8))
    kv = spatial_kv(frames[0], params)
    batched = spatial_self_attention_frames(frames, params, shared_kv=kv)
    for i in range(4):
        single = spatial_self_attention(frames[i], params, shared_kv=kv)
        assert batched[i].tobytes() == single.tobytes()
