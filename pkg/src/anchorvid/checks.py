"""Fast self-check suite: production attention vs naive oracles.

Every check here recomputes the production result with a deliberately
dumb float64 implementation (explicit list construction, two-loop
softmax, per-row matvec) and compares. The suite is cheap enough to run
on every build and is what `anchorvid check` executes; the acceptance
tests reuse the same functions with the same seed counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import (LinearParams, PositionEmbeddings, SpatialAttentionParams,
                        TemporalAttentionParams, position_table,
                        global_temporal_attention, spatial_self_attention,
                        spatial_kv, sinusoidal_embedding)
from .tensor_store import SeededRng, randn, uniform_weights
from .window import (AttentionMode, build_pool, query_position,
                     window_attention_output, window_list_indices)


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def make_temporal_params(seed: int, c: int, f_max: int,
                         table: PositionEmbeddings = None) -> TemporalAttentionParams:
    rng = SeededRng(seed)
    if table is None:
        table = position_table(f_max, c)
    return TemporalAttentionParams(LinearParams(uniform_weights(rng, c, c)),
                                   LinearParams(uniform_weights(rng, c, c)),
                                   LinearParams(uniform_weights(rng, c, c)),
                                   table)


def make_spatial_params(seed: int, c: int) -> SpatialAttentionParams:
    rng = SeededRng(seed)
    return SpatialAttentionParams(LinearParams(uniform_weights(rng, c, c)),
                                  LinearParams(uniform_weights(rng, c, c)),
                                  LinearParams(uniform_weights(rng, c, c)))


def oracle_attention_rows(queries, keys, values, scale) -> np.ndarray:
    """Two-loop softmax attention in float64; one row per query."""
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        logits = []
        for j in range(k.shape[0]):
            logits.append(float(q[i] @ k[j]) / scale)
        peak = max(logits)
        weights = [math.exp(l - peak) for l in logits]
        denom = sum(weights)
        for j in range(k.shape[0]):
            out[i] += (weights[j] / denom) * v[j]
    return out


def oracle_temporal(z, params: TemporalAttentionParams,
                    mode: AttentionMode) -> np.ndarray:
    """Naive temporal attention: build each frame's list entry by entry."""
    f, c = z.shape
    wq = params.wq.weight.astype(np.float64)
    wk = params.wk.weight.astype(np.float64)
    wv = params.wv.weight.astype(np.float64)
    table = params.pos.table.astype(np.float64)
    z64 = z.astype(np.float64)

    def proj(w, content, position):
        return w @ (z64[content - 1] + table[position - 1])

    out = np.zeros((f, c))
    for i in range(1, f + 1):
        if mode is AttentionMode.GLOBAL:
            contents = tuple(range(1, f + 1))
            positions = contents
            q_pos = i
        else:
            contents, positions = window_list_indices(i, f, mode)
            q_pos = query_position(i, f, mode)
        q_row = proj(wq, i, q_pos)
        keys = np.stack([proj(wk, cn, pn) for cn, pn in zip(contents, positions)])
        values = np.stack([proj(wv, cn, pn) for cn, pn in zip(contents, positions)])
        out[i - 1] = oracle_attention_rows(q_row[None], keys, values,
                                           math.sqrt(c))[0]
    return out


def oracle_spatial(x, params: SpatialAttentionParams, shared_kv=None) -> np.ndarray:
    hw, c = x.shape
    x64 = x.astype(np.float64)
    q = x64 @ params.wq.weight.astype(np.float64).T
    if shared_kv is None:
        k = x64 @ params.wk.weight.astype(np.float64).T
        v = x64 @ params.wv.weight.astype(np.float64).T
    else:
        k = shared_kv[0].astype(np.float64)
        v = shared_kv[1].astype(np.float64)
    return oracle_attention_rows(q, k, v, math.sqrt(c))


def _rel_err(a, b) -> float:
    scale = max(float(np.abs(b).max()), 1e-30)
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).max()) / scale


def _abs_err(a, b) -> float:
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).max())


def check_window_equals_global(n_seeds: int = 100) -> CheckResult:
    """Both window flavors collapse to global attention at the last frame."""
    worst = 0.0
    c = 64
    for seed in range(n_seeds):
        for f in (2, 4, 8, 16):
            params = make_temporal_params(1000 + seed, c, 16)
            z = randn(SeededRng(2000 + seed * 31 + f), [f, c])
            ref = global_temporal_attention(z, params)[f - 1]
            for mode in (AttentionMode.WINDOW_UNCORRECTED,
                         AttentionMode.WINDOW_CORRECTED):
                got = window_attention_output(z, params, mode)[f - 1]
                worst = max(worst, _rel_err(got, ref))
    ok = worst <= 1e-5
    return CheckResult("window_equals_global_at_last_frame", ok,
                       f"max rel err {worst:.3e} (bound 1e-5)")


def check_uncorrected_frame1(n_seeds: int = 100) -> CheckResult:
    """Frame 1 of the uncorrected window attends only to itself: out = v_1^1."""
    worst = 0.0
    c = 16
    for seed in range(n_seeds):
        f = 2 + seed % 15
        params = make_temporal_params(3000 + seed, c, f)
        z = randn(SeededRng(4000 + seed), [f, c])
        out = window_attention_output(z, params,
                                      AttentionMode.WINDOW_UNCORRECTED)
        pool = build_pool(z, params)
        worst = max(worst, _abs_err(out[0], pool.v[0, 0]))
    ok = worst <= 1e-6
    return CheckResult("uncorrected_frame1_equals_v11", ok,
                       f"max abs err {worst:.3e} (bound 1e-6)")


def check_constant_table_degeneracy(n_seeds: int = 100) -> CheckResult:
    """With all position rows equal, corrected == uncorrected everywhere."""
    worst = 0.0
    c = 16
    for seed in range(n_seeds):
        f = 2 + seed % 15
        row = sinusoidal_embedding(seed % 7, c)
        table = PositionEmbeddings(np.tile(row, (f, 1)).astype(np.float32))
        params = make_temporal_params(5000 + seed, c, f, table)
        z = randn(SeededRng(6000 + seed), [f, c])
        a = window_attention_output(z, params, AttentionMode.WINDOW_UNCORRECTED)
        b = window_attention_output(z, params, AttentionMode.WINDOW_CORRECTED)
        worst = max(worst, _abs_err(a, b))
    ok = worst <= 1e-6
    return CheckResult("constant_table_degeneracy", ok,
                       f"max abs err {worst:.3e} (bound 1e-6)")


def check_oracle_equivalence(n_seeds: int = 200) -> CheckResult:
    """All production attention paths vs the naive float64 oracles."""
    worst = 0.0
    for seed in range(n_seeds):
        rs = SeededRng(7000 + seed)
        f = 1 + seed % 8
        hw = 1 + (seed // 3) % 8
        c = 2 + seed % 7
        tparams = make_temporal_params(8000 + seed, c, f)
        z = randn(rs, [f, c])
        for mode in (AttentionMode.GLOBAL, AttentionMode.WINDOW_UNCORRECTED,
                     AttentionMode.WINDOW_CORRECTED):
            if mode is AttentionMode.GLOBAL:
                got = global_temporal_attention(z, tparams)
            else:
                got = window_attention_output(z, tparams, mode)
            worst = max(worst, _abs_err(got, oracle_temporal(z, tparams, mode)))
        sparams = make_spatial_params(9000 + seed, c)
        x = randn(rs, [hw, c])
        donor = randn(rs, [hw, c])
        got = spatial_self_attention(x, sparams)
        worst = max(worst, _abs_err(got, oracle_spatial(x, sparams)))
        shared = spatial_kv(donor, sparams)
        got = spatial_self_attention(x, sparams, shared)
        worst = max(worst, _abs_err(got, oracle_spatial(x, sparams, shared)))
    ok = worst <= 1e-6
    return CheckResult("oracle_equivalence", ok,
                       f"max abs err {worst:.3e} (bound 1e-6)")


def check_corrected_multiset(max_f: int = 16) -> CheckResult:
    """Corrected lists: positions are exactly {1..f}, contents duplicate
    frame 1 (f-i+1) times then run 2..i."""
    for f in range(1, max_f + 1):
        for i in range(1, f + 1):
            contents, positions = window_list_indices(
                i, f, AttentionMode.WINDOW_CORRECTED)
            if sorted(positions) != list(range(1, f + 1)):
                return CheckResult(
                    "corrected_position_multiset", False,
                    f"positions at i={i}, f={f}: {positions}")
            expected = (1,) * (f - i + 1) + tuple(range(2, i + 1))
            if contents != expected:
                return CheckResult(
                    "corrected_position_multiset", False,
                    f"contents at i={i}, f={f}: {contents}")
    return CheckResult("corrected_position_multiset", True,
                       f"all lists structurally exact for f <= {max_f}")


def check_position_rows_distinct(corrupt: bool = False) -> CheckResult:
    """Table rows must differ pairwise (distinct frames, distinct embeddings)."""
    table = position_table(64, 16).table.copy()
    if corrupt:
        table[1] = table[0]
    for a in range(table.shape[0]):
        for b in range(a + 1, table.shape[0]):
            if np.array_equal(table[a], table[b]):
                return CheckResult("position_table_rows_distinct", False,
                                   f"rows {a} and {b} are identical")
    return CheckResult("position_table_rows_distinct", True,
                       "all 64 rows pairwise distinct")


def run_fast_checks(corrupt_position_table: bool = False) -> list:
    return [
        check_window_equals_global(),
        check_uncorrected_frame1(),
        check_constant_table_degeneracy(),
        check_oracle_equivalence(),
        check_corrected_multiset(),
        check_position_rows_distinct(corrupt_position_table),
    ]
