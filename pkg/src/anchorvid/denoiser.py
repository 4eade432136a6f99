"""Seeded toy denoiser: spatial blocks interleaved with motion modules.

The network is a stack of blocks, each one spatial module followed by one
motion module, split into an encoder half and a decoder half so the two
halves can run different temporal attention modes (the video pipeline
windows the encoder and keeps the decoder global). There is no
down/upsampling; latents stay [f, c, h, w] throughout and the final
activations are the noise prediction.

Per block, with residuals around each module:

    x   += cond_bias + time_bias                  (block entry)
    x   += mix(spatial_attention(tokens))          per frame, hw tokens
    x   += project_out(attn2(attn1(project_in())))  per site, f tokens

Spatial attention can source its keys/values from stored frame-1
activations (appearance sharing); motion modules run the configured
AttentionMode over the frame axis. All weights are drawn from one
splitmix64 stream in a fixed order, so a seed fully determines the
network.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import (LinearParams, SpatialAttentionParams, TemporalAttentionParams,
                        position_table, sinusoidal_embedding, spatial_kv,
                        spatial_self_attention_frames)
from .errors import ConfigError
from .tensor_store import SeededRng, check_finite, randn, uniform_weights
from .window import AttentionMode, temporal_attention_batched

F32 = np.float32


@dataclass(frozen=True)
class DenoiserArch:
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    channels: int = 8
    height: int = 8
    width: int = 8
    f_max: int = 64
    cond_dim: int = 8

    def validate(self) -> None:
        if self.encoder_blocks < 1 or self.decoder_blocks < 1:
            raise ConfigError("need at least one encoder and one decoder block")
        if self.channels < 2:
            raise ConfigError("channels must be >= 2")
        if min(self.height, self.width, self.f_max, self.cond_dim) < 1:
            raise ConfigError("height, width, f_max, cond_dim must be >= 1")


@dataclass(frozen=True)
class MotionModuleParams:
    project_in: LinearParams
    attn1: TemporalAttentionParams
    attn2: TemporalAttentionParams
    project_out: LinearParams

    def __post_init__(self):
        if self.attn1.pos is not self.attn2.pos:
            raise ValueError("attn1 and attn2 must share one position table")
        c = self.project_in.out_ch
        if not (self.project_in.in_ch == c == self.project_out.in_ch
                == self.project_out.out_ch == self.attn1.channels
                == self.attn2.channels):
            raise ValueError("motion module channel chain mismatch")


@dataclass(frozen=True)
class SpatialBlockParams:
    attn: SpatialAttentionParams
    mix: LinearParams

    def __post_init__(self):
        if self.mix.in_ch != self.mix.out_ch:
            raise ValueError("channel mix must be square")


@dataclass(frozen=True)
class DenoiserParams:
    encoder_blocks: tuple
    decoder_blocks: tuple
    cond_proj: LinearParams
    time_proj: LinearParams
    seed: int
    arch: DenoiserArch

    def all_blocks(self):
        """(stage, global block index, spatial, motion) in execution order."""
        out = []
        for blk in self.encoder_blocks:
            out.append(("encoder", len(out)) + blk)
        for blk in self.decoder_blocks:
            out.append(("decoder", len(out)) + blk)
        return out


@dataclass(frozen=True)
class PromptEmbedding:
    vec: np.ndarray


@dataclass
class ControlHooks:
    """Switches for the video-control mechanisms, all off by default.

    kv_source maps global block index to the projected (K, V) pair to use
    for spatial sharing at the current timestep; first_frame_tokens maps
    block index to raw frame-1 token activations [hw, c] from which K/V
    are recomputed. share_kv requires one of the two.
    """

    temporal_mode_encoder: AttentionMode = AttentionMode.GLOBAL
    temporal_mode_decoder: AttentionMode = AttentionMode.GLOBAL
    share_kv: bool = False
    kv_source: Optional[dict] = None
    first_frame_tokens: Optional[dict] = None
    bypass_motion: bool = False

    def __post_init__(self):
        if self.share_kv and self.kv_source is None and self.first_frame_tokens is None:
            raise ValueError("share_kv needs kv_source or first_frame_tokens")


@dataclass
class BlockRecord:
    stage: str
    block: int
    temporal_mode: str
    shared_kv: bool


def time_features(t: float) -> np.ndarray:
    """4-dim sinusoidal features of the scalar timestep (base 10000 pairs)."""
    return sinusoidal_embedding(float(t), 4)


def embed_prompt(text: str, dim: int) -> PromptEmbedding:
    """Deterministic pseudo text embedding: sha256 of the string seeds randn."""
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
    return PromptEmbedding(randn(SeededRng(seed), [dim]))


def _draw_linear(rng: SeededRng, out_ch: int, in_ch: int) -> LinearParams:
    return LinearParams(uniform_weights(rng, out_ch, in_ch))


def init_denoiser(seed: int, arch: DenoiserArch = DenoiserArch()) -> DenoiserParams:
    """Draw all weights from one splitmix64 stream seeded with `seed`.

    Draw order (fixed; reordering would change every network): for each
    block, encoder first then decoder: spatial wq, wk, wv, mix, then
    motion project_in, attn1 (wq, wk, wv), attn2 (wq, wk, wv),
    project_out. After all blocks: cond_proj, then time_proj. The
    position table is sinusoidal, not drawn, and shared model-wide.
    """
    arch.validate()
    rng = SeededRng(seed)
    c = arch.channels
    pos = position_table(arch.f_max, c)

    def draw_block():
        spatial = SpatialBlockParams(
            attn=SpatialAttentionParams(_draw_linear(rng, c, c),
                                        _draw_linear(rng, c, c),
                                        _draw_linear(rng, c, c)),
            mix=_draw_linear(rng, c, c))
        motion = MotionModuleParams(
            project_in=_draw_linear(rng, c, c),
            attn1=TemporalAttentionParams(_draw_linear(rng, c, c),
                                          _draw_linear(rng, c, c),
                                          _draw_linear(rng, c, c), pos),
            attn2=TemporalAttentionParams(_draw_linear(rng, c, c),
                                          _draw_linear(rng, c, c),
                                          _draw_linear(rng, c, c), pos),
            project_out=_draw_linear(rng, c, c))
        return spatial, motion

    enc = tuple(draw_block() for _ in range(arch.encoder_blocks))
    dec = tuple(draw_block() for _ in range(arch.decoder_blocks))
    cond_proj = _draw_linear(rng, c, arch.cond_dim)
    time_proj = _draw_linear(rng, c, 4)
    return DenoiserParams(enc, dec, cond_proj, time_proj, seed, arch)


def params_checksum(params: DenoiserParams) -> str:
    """sha256 over all weight bytes in draw order (golden-file anchor)."""
    h = hashlib.sha256()
    for _, _, spatial, motion in params.all_blocks():
        for lin in (spatial.attn.wq, spatial.attn.wk, spatial.attn.wv, spatial.mix,
                    motion.project_in,
                    motion.attn1.wq, motion.attn1.wk, motion.attn1.wv,
                    motion.attn2.wq, motion.attn2.wk, motion.attn2.wv,
                    motion.project_out):
            h.update(lin.weight.tobytes())
    h.update(params.cond_proj.weight.tobytes())
    h.update(params.time_proj.weight.tobytes())
    return h.hexdigest()


def denoise(z: np.ndarray, prompt: PromptEmbedding, t: float,
            params: DenoiserParams, hooks: Optional[ControlHooks] = None,
            record: Optional[list] = None,
            capture: Optional[dict] = None) -> np.ndarray:
    """Predict noise for latents [f, c, h, w]; pure function of its inputs.

    When `capture` is a dict, each spatial block's projected frame-1
    (K, V) pair is stored under its global block index (this is how
    single-image runs donate appearance to later video runs). `record`,
    if given, collects one BlockRecord per block executed.
    """
    hooks = hooks or ControlHooks()
    arch = params.arch
    if z.ndim != 4:
        raise ValueError("latents must be [frames, channels, height, width]")
    f, c, hgt, wid = z.shape
    if (c, hgt, wid) != (arch.channels, arch.height, arch.width):
        raise ValueError(f"latent shape {z.shape} does not match arch {arch}")
    check_finite(z, "denoise input")
    hw = hgt * wid

    cond_bias = params.cond_proj.apply(np.ascontiguousarray(prompt.vec, dtype=F32))
    time_bias = params.time_proj.apply(time_features(t))

    x = np.ascontiguousarray(z, dtype=F32)
    for stage, block_idx, spatial, motion in params.all_blocks():
        x = x + cond_bias[None, :, None, None]
        x = x + time_bias[None, :, None, None]

        tokens = np.ascontiguousarray(x.transpose(0, 2, 3, 1).reshape(f, hw, c))
        if capture is not None:
            capture[block_idx] = spatial_kv(tokens[0], spatial.attn)
        shared = None
        if hooks.share_kv:
            shared = _shared_kv_for_block(hooks, block_idx, spatial.attn)
        attn_out = spatial_self_attention_frames(tokens, spatial.attn, shared)
        mixed = spatial.mix.apply(attn_out.reshape(f * hw, c)).reshape(f, hw, c)
        tokens = tokens + mixed
        x = np.ascontiguousarray(
            tokens.reshape(f, hgt, wid, c).transpose(0, 3, 1, 2))

        mode = (hooks.temporal_mode_encoder if stage == "encoder"
                else hooks.temporal_mode_decoder)
        if hooks.bypass_motion:
            executed = "bypass"
        else:
            executed = mode.value
            sites = np.ascontiguousarray(x.transpose(2, 3, 0, 1).reshape(hw, f, c))
            h = motion.project_in.apply(sites.reshape(hw * f, c)).reshape(hw, f, c)
            h = temporal_attention_batched(h, motion.attn1, mode)
            h = temporal_attention_batched(h, motion.attn2, mode)
            h = motion.project_out.apply(h.reshape(hw * f, c)).reshape(hw, f, c)
            sites = sites + h
            x = np.ascontiguousarray(
                sites.reshape(hgt, wid, f, c).transpose(2, 3, 0, 1))
        if record is not None:
            record.append(BlockRecord(stage, block_idx, executed,
                                      hooks.share_kv))
    check_finite(x, "denoise output")
    return x


def _shared_kv_for_block(hooks: ControlHooks, block_idx: int,
                         attn: SpatialAttentionParams):
    if hooks.kv_source is not None:
        if block_idx not in hooks.kv_source:
            raise ValueError(f"kv_source missing block {block_idx}")
        return hooks.kv_source[block_idx]
    if block_idx not in hooks.first_frame_tokens:
        raise ValueError(f"first_frame_tokens missing block {block_idx}")
    return spatial_kv(hooks.first_frame_tokens[block_idx], attn)


def capture_frame1_kv(z1: np.ndarray, prompt: PromptEmbedding, t: float,
                      params: DenoiserParams) -> dict:
    """Run one frame through the denoiser, recording each spatial block's K/V.

    Keys are global block indices; the caller files the result under the
    timestep it was computed at. Feeding the captured caches back into a
    denoise of the same frame reproduces the uncached run bit for bit.
    """
    if z1.ndim != 4 or z1.shape[0] != 1:
        raise ValueError("capture expects a single-frame latent [1, c, h, w]")
    caches: dict = {}
    denoise(z1, prompt, t, params, capture=caches)
    return caches
