"""DDIM sampling loops and the anchored video pipeline.

The pipeline runs in two passes. Pass one samples a single frame with
deterministic DDIM and records everything: every intermediate latent and
every spatial block's K/V at every timestep (a GenerationTrace). Pass
two samples f frames jointly, and at every step overwrites frame 1's
latent with the stored one before the denoiser runs, shares the stored
spatial K/V with all frames, and windows the encoder's temporal
attention. The stored frame therefore participates in temporal attention
at every step, and after the final step frame 1 is forced to the stored
z_0, making the first output frame reproduce pass one exactly.

Time travel re-noises the step result back up with fresh noise and
denoises again (a fixed number of iterations on a fixed step range);
interpolation anchors both ends by inserting two traces. DDIM inversion
runs the reverse map backwards to fabricate a trace for a latent that
was never sampled.

RNG draw order is part of the file-format-level contract: animate draws
the frames 2..f init noise first, then per step any eta noise, then per
time-travel iteration the re-noise draw followed by its eta noise.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .denoiser import (ControlHooks, DenoiserParams, capture_frame1_kv, denoise,
                       embed_prompt)
from .errors import ConfigError, MissingLatentError, TraceMismatchError
from .tensor_store import SeededRng, randn
from .window import AttentionMode

F32 = np.float32


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule; all tables float32, 1-based timesteps."""

    betas: np.ndarray

    def __post_init__(self):
        b = self.betas
        if b.ndim != 1 or len(b) < 1:
            raise ConfigError("schedule needs a 1-D beta table")
        if not (np.all(b > 0) and np.all(b < 1)):
            raise ConfigError("betas must lie strictly inside (0, 1)")
        if len(b) > 1 and not np.all(np.diff(b) > 0):
            raise ConfigError("betas must be strictly increasing")

    @classmethod
    def linear(cls, steps: int = 50, beta_start: float = 1e-4,
               beta_end: float = 0.02) -> "NoiseSchedule":
        if steps < 1:
            raise ConfigError("schedule needs at least one step")
        betas = np.linspace(beta_start, beta_end, steps).astype(F32)
        return cls(betas)

    @property
    def steps(self) -> int:
        return len(self.betas)

    def alpha(self, t: int) -> np.float32:
        self._check_t(t)
        return F32(1.0) - self.betas[t - 1]

    def alpha_bar(self, t: int) -> np.float32:
        """Cumulative product of alphas through t; alpha_bar(0) is 1."""
        if t == 0:
            return F32(1.0)
        self._check_t(t)
        alphas = F32(1.0) - self.betas
        return np.cumprod(alphas, dtype=F32)[t - 1]

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.steps:
            raise ConfigError(f"timestep {t} outside schedule 1..{self.steps}")

    def digest(self) -> str:
        return hashlib.sha256(self.betas.astype("<f4").tobytes()).hexdigest()


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    frames: int = 16
    eta: float = 0.0
    insert_latents: bool = True
    share_kv: bool = True
    encoder_mode: AttentionMode = AttentionMode.WINDOW_CORRECTED
    decoder_mode: AttentionMode = AttentionMode.GLOBAL
    time_travel: bool = False
    tt_iters: int = 5
    tt_lo: int = 10
    tt_hi: int = 20
    seed: int = 0
    # diagnostic switch: skip every motion module (temporal identity)
    bypass_motion: bool = False

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if self.tt_iters < 0:
            raise ConfigError("tt_iters must be >= 0")
        # the range only matters when the loop actually runs, so a short
        # --steps run keeps working with the default 10:20 range
        if self.time_travel and not 0 <= self.tt_lo <= self.tt_hi <= self.steps:
            raise ConfigError("time-travel range must satisfy 0 <= lo <= hi <= steps")


@dataclass
class GenerationTrace:
    """Everything a single-frame run leaves behind for later video runs."""

    latents: dict            # t -> [1, c, h, w], complete over 0..steps
    kv_caches: dict          # (t, block) -> (K, V), t over 1..steps
    prompt: str
    seed: int
    schedule_hash: str
    steps: int

    def latent(self, t: int) -> np.ndarray:
        if t not in self.latents:
            raise MissingLatentError(f"trace has no latent for timestep {t}")
        return self.latents[t]

    def kv_at(self, t: int) -> Optional[dict]:
        """Per-block K/V dict at timestep t, or None if not stored."""
        out = {}
        for (tt, block), pair in self.kv_caches.items():
            if tt == t:
                out[block] = pair
        return out or None


@dataclass
class StepEvent:
    step_index: int          # 1-based position in the sampling loop
    t: int                   # timestep handed to the denoiser
    insertions: tuple
    tt_iterations: int
    encoder_mode: str
    decoder_mode: str
    frame1_matches_trace: Optional[bool] = None
    framef_matches_trace: Optional[bool] = None


@dataclass
class StepLog:
    events: list = field(default_factory=list)
    final_frame1_matches: Optional[bool] = None
    final_framef_matches: Optional[bool] = None

    def assert_frame1_pinned(self) -> None:
        for ev in self.events:
            if ev.frame1_matches_trace is False:
                raise AssertionError(f"frame 1 diverged from trace at t={ev.t}")
        if self.final_frame1_matches is False:
            raise AssertionError("final frame 1 does not equal trace z_0")

    def tt_counts(self) -> list:
        return [ev.tt_iterations for ev in self.events]

    def summary(self) -> dict:
        return {
            "steps": len(self.events),
            "insertions": sum(len(ev.insertions) for ev in self.events),
            "tt_iterations": sum(ev.tt_iterations for ev in self.events),
            "frame1_pinned": all(ev.frame1_matches_trace in (True, None)
                                 for ev in self.events)
                             and self.final_frame1_matches in (True, None),
        }


def ddim_reverse_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int,
                      schedule, eta: float = 0.0,
                      rng: Optional[SeededRng] = None) -> np.ndarray:
    """One deterministic DDIM step t -> t-1 (eta=0), or its eta-noised form.

    x0_hat = (z_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
    z_{t-1} = sqrt(abar_{t-1}) x0_hat + sqrt(1 - abar_{t-1} - sigma^2) eps
              + sigma * fresh noise
    with sigma = eta sqrt((1-abar_{t-1})/(1-abar_t)) sqrt(1 - abar_t/abar_{t-1}).
    """
    if t < 1:
        raise ConfigError(f"reverse step needs t >= 1, got {t}")
    ab_t = F32(schedule.alpha_bar(t))
    ab_prev = F32(schedule.alpha_bar(t - 1))
    s_t = np.sqrt(F32(1.0) - ab_t, dtype=F32)
    x0 = (z_t - s_t * eps_hat) / np.sqrt(ab_t, dtype=F32)
    if eta == 0.0:
        return np.sqrt(ab_prev, dtype=F32) * x0 + np.sqrt(F32(1.0) - ab_prev, dtype=F32) * eps_hat
    if rng is None:
        raise ConfigError("eta > 0 requires an rng for the step noise")
    sigma = (F32(eta)
             * np.sqrt((F32(1.0) - ab_prev) / (F32(1.0) - ab_t), dtype=F32)
             * np.sqrt(F32(1.0) - ab_t / ab_prev, dtype=F32))
    dir_coef = np.sqrt(F32(1.0) - ab_prev - sigma * sigma, dtype=F32)
    noise = randn(rng, z_t.shape)
    return (np.sqrt(ab_prev, dtype=F32) * x0 + dir_coef * eps_hat
            + sigma * noise)


def ddim_inversion_step(z_prev: np.ndarray, eps_hat: np.ndarray, t: int,
                        schedule) -> np.ndarray:
    """Algebraic inverse of the eta=0 reverse step: t-1 -> t.

    Uses eps_hat evaluated at the current (less noisy) latent, the
    standard first-order approximation to the unknown eps at z_t.
    """
    if t < 1:
        raise ConfigError(f"inversion step needs t >= 1, got {t}")
    ab_t = F32(schedule.alpha_bar(t))
    ab_prev = F32(schedule.alpha_bar(t - 1))
    s_prev = np.sqrt(F32(1.0) - ab_prev, dtype=F32)
    x0 = (z_prev - s_prev * eps_hat) / np.sqrt(ab_prev, dtype=F32)
    return np.sqrt(ab_t, dtype=F32) * x0 + np.sqrt(F32(1.0) - ab_t, dtype=F32) * eps_hat


def insert_first_frame(z: np.ndarray, trace: GenerationTrace, t: int) -> np.ndarray:
    """Copy of z with frame 1 replaced by the trace latent at t, bitwise."""
    return insert_frame(z, trace, t, 0)


def insert_frame(z: np.ndarray, trace: GenerationTrace, t: int,
                 frame_index: int) -> np.ndarray:
    latent = trace.latent(t)
    out = np.array(z, dtype=F32, copy=True)
    out[frame_index] = latent[0]
    return out


def generate_t2i_trace(prompt: str, seed: int, config: SamplerConfig,
                       params: DenoiserParams,
                       schedule: NoiseSchedule) -> GenerationTrace:
    """Sample one frame from pure noise, recording latents and K/V caches.

    Always runs deterministic DDIM (eta 0) so the trace can be replayed
    byte for byte. Latents are stored for every t from steps down to 0;
    K/V caches for every denoised t (steps down to 1) and block.
    """
    config.validate()
    _check_steps(config, schedule)
    arch = params.arch
    pe = embed_prompt(prompt, arch.cond_dim)
    rng = SeededRng(seed)
    z = randn(rng, [1, arch.channels, arch.height, arch.width])
    latents = {schedule.steps: z}
    kv_caches = {}
    for t in range(schedule.steps, 0, -1):
        capture: dict = {}
        eps = denoise(z, pe, t, params, capture=capture)
        for block, pair in capture.items():
            kv_caches[(t, block)] = pair
        z = ddim_reverse_step(z, eps, t, schedule, eta=0.0)
        latents[t - 1] = z
    return GenerationTrace(latents, kv_caches, prompt, seed,
                           schedule.digest(), schedule.steps)


def invert_to_trace(z0: np.ndarray, prompt: str, config: SamplerConfig,
                    params: DenoiserParams, schedule: NoiseSchedule,
                    refine_iters: int = 4) -> GenerationTrace:
    """Fabricate a pseudo-trace for z0 by running DDIM inversion upward.

    The first estimate of z_t evaluates the denoiser at the current (less
    noisy) latent; each refinement iteration re-evaluates at the latest
    estimate and re-inverts, converging on a z_t whose reverse step lands
    back on z_{t-1} exactly. The iteration count is fixed so inverted
    traces stay byte-reproducible. No K/V caches are stored; consumers
    recompute them from the stored latents (see animate).
    """
    config.validate()
    _check_steps(config, schedule)
    if refine_iters < 0:
        raise ConfigError("refine_iters must be >= 0")
    if z0.ndim != 4 or z0.shape[0] != 1:
        raise ConfigError("inversion expects a single-frame latent [1, c, h, w]")
    arch = params.arch
    pe = embed_prompt(prompt, arch.cond_dim)
    z = np.array(z0, dtype=F32, copy=True)
    latents = {0: z}
    for t in range(1, schedule.steps + 1):
        z_prev = z
        eps = denoise(z_prev, pe, t, params)
        z = ddim_inversion_step(z_prev, eps, t, schedule)
        for _ in range(refine_iters):
            eps = denoise(z, pe, t, params)
            z = ddim_inversion_step(z_prev, eps, t, schedule)
        latents[t] = z
    return GenerationTrace(latents, {}, prompt, config.seed,
                           schedule.digest(), schedule.steps)


def time_travel_loop(z_prev: np.ndarray, t: int, iters: int, schedule,
                     denoise_fn, rng: SeededRng, insert_fn=None,
                     eta: float = 0.0):
    """Re-noise z_{t-1} up to t and denoise again, `iters` times.

    Each iteration draws fresh noise N and re-diffuses one step:
    z_t = sqrt(alpha_t) z_{t-1} + sqrt(1 - alpha_t) N, then denoises and
    reverses back to t-1. insert_fn(z, t), when given, pins anchor frames
    before each denoise and again after each inner reverse step.
    Returns (z_prev, iterations performed).
    """
    a_t = F32(schedule.alpha(t))
    sa = np.sqrt(a_t, dtype=F32)
    sn = np.sqrt(F32(1.0) - a_t, dtype=F32)
    for _ in range(iters):
        noise = randn(rng, z_prev.shape)
        z_t = sa * z_prev + sn * noise
        if insert_fn is not None:
            z_t = insert_fn(z_t, t)
        eps = denoise_fn(z_t, t)
        z_prev = ddim_reverse_step(z_t, eps, t, schedule, eta, rng)
        if insert_fn is not None:
            z_prev = insert_fn(z_prev, t - 1)
    return z_prev, iters


def _check_steps(config: SamplerConfig, schedule: NoiseSchedule) -> None:
    if config.steps != schedule.steps:
        raise ConfigError(f"config.steps={config.steps} but schedule has "
                          f"{schedule.steps}")


def _check_trace(trace: GenerationTrace, schedule: NoiseSchedule) -> None:
    if trace.schedule_hash != schedule.digest():
        raise TraceMismatchError(
            f"trace schedule hash {trace.schedule_hash[:12]}... does not match "
            f"the configured schedule {schedule.digest()[:12]}...")


def _kv_source_at(trace: GenerationTrace, t: int, pe, params) -> dict:
    """Stored caches at t, or the documented fallback: recompute them from
    the trace latent at t (inverted traces store no caches)."""
    stored = trace.kv_at(t)
    if stored is not None:
        return stored
    return capture_frame1_kv(trace.latent(t), pe, t, params)


def animate(trace: GenerationTrace, config: SamplerConfig,
            params: DenoiserParams, schedule: NoiseSchedule):
    """Sample an f-frame video steered by a stored single-frame trace.

    Frame 1 initializes from the trace's z_T; frames 2..f from seeded
    noise. Per step: insert the trace latent into frame 1 (when enabled),
    denoise with the configured sharing/window hooks, take a DDIM step,
    then optionally run the time-travel loop. After the last step frame 1
    is forced to the trace's z_0. Returns (video latents, StepLog).
    """
    config.validate()
    _check_steps(config, schedule)
    _check_trace(trace, schedule)
    arch = params.arch
    f = config.frames
    pe = embed_prompt(trace.prompt, arch.cond_dim)
    rng = SeededRng(config.seed)

    z = np.empty((f, arch.channels, arch.height, arch.width), dtype=F32)
    z[0] = trace.latent(schedule.steps)[0]
    if f > 1:
        z[1:] = randn(rng, [f - 1, arch.channels, arch.height, arch.width])

    insert_fn = None
    if config.insert_latents:
        def insert_fn(zz, tt):
            return insert_first_frame(zz, trace, tt)

    log = StepLog()
    for step_index in range(1, config.steps + 1):
        t = config.steps - step_index + 1
        insertions = []
        frame1_ok = None
        if insert_fn is not None:
            z = insert_fn(z, t)
            insertions.append("first")
            # the per-step guarantee: the denoiser sees the trace latent
            frame1_ok = z[0].tobytes() == trace.latent(t)[0].tobytes()
        hooks = _build_hooks(trace, config, t, pe, params)
        eps = denoise(z, pe, t, params, hooks)
        z = ddim_reverse_step(z, eps, t, schedule, config.eta, rng)
        tt_count = 0
        if config.time_travel and config.tt_lo <= step_index <= config.tt_hi:
            def denoise_fn(zz, tt):
                return denoise(zz, pe, tt, params,
                               _build_hooks(trace, config, tt, pe, params))
            z, tt_count = time_travel_loop(z, t, config.tt_iters, schedule,
                                           denoise_fn, rng, insert_fn,
                                           config.eta)
            if insert_fn is not None:
                frame1_ok = (frame1_ok
                             and z[0].tobytes() == trace.latent(t - 1)[0].tobytes())
        log.events.append(StepEvent(step_index, t, tuple(insertions), tt_count,
                                    config.encoder_mode.value,
                                    config.decoder_mode.value,
                                    frame1_ok))
    if insert_fn is not None:
        z = insert_fn(z, 0)
        log.final_frame1_matches = z[0].tobytes() == trace.latent(0)[0].tobytes()
    return z, log


def _build_hooks(trace: GenerationTrace, config: SamplerConfig, t: int,
                 pe, params) -> ControlHooks:
    kv = _kv_source_at(trace, t, pe, params) if config.share_kv else None
    return ControlHooks(temporal_mode_encoder=config.encoder_mode,
                        temporal_mode_decoder=config.decoder_mode,
                        share_kv=config.share_kv,
                        kv_source=kv,
                        bypass_motion=config.bypass_motion)


def plain_joint_sample(trace: GenerationTrace, config: SamplerConfig,
                       params: DenoiserParams,
                       schedule: NoiseSchedule) -> np.ndarray:
    """Control-free reference: same init as animate, no hooks at all."""
    config.validate()
    _check_steps(config, schedule)
    _check_trace(trace, schedule)
    arch = params.arch
    f = config.frames
    pe = embed_prompt(trace.prompt, arch.cond_dim)
    rng = SeededRng(config.seed)
    z = np.empty((f, arch.channels, arch.height, arch.width), dtype=F32)
    z[0] = trace.latent(schedule.steps)[0]
    if f > 1:
        z[1:] = randn(rng, [f - 1, arch.channels, arch.height, arch.width])
    for step_index in range(1, config.steps + 1):
        t = config.steps - step_index + 1
        eps = denoise(z, pe, t, params)
        z = ddim_reverse_step(z, eps, t, schedule, config.eta, rng)
    return z


def interpolate(trace_a: GenerationTrace, trace_b: GenerationTrace,
                config: SamplerConfig, params: DenoiserParams,
                schedule: NoiseSchedule):
    """Sample a video anchored to trace_a at frame 1 and trace_b at frame f.

    Both anchors are inserted every step (insertion is not optional
    here), the encoder runs the two-anchor window mode, and spatial K/V
    come from trace_a only. Passing the same trace twice yields a loop:
    first and last frames byte-identical.
    """
    config.validate()
    _check_steps(config, schedule)
    _check_trace(trace_a, schedule)
    _check_trace(trace_b, schedule)
    if config.frames < 3:
        raise ConfigError("interpolation needs frames >= 3")
    arch = params.arch
    f = config.frames
    pe = embed_prompt(trace_a.prompt, arch.cond_dim)
    rng = SeededRng(config.seed)

    z = np.empty((f, arch.channels, arch.height, arch.width), dtype=F32)
    z[0] = trace_a.latent(schedule.steps)[0]
    z[f - 1] = trace_b.latent(schedule.steps)[0]
    if f > 2:
        z[1:f - 1] = randn(rng, [f - 2, arch.channels, arch.height, arch.width])

    def insert_fn(zz, tt):
        zz = insert_frame(zz, trace_a, tt, 0)
        return insert_frame(zz, trace_b, tt, f - 1)

    two_anchor = AttentionMode.WINDOW_TWO_ANCHOR
    log = StepLog()
    for step_index in range(1, config.steps + 1):
        t = config.steps - step_index + 1
        z = insert_fn(z, t)
        kv = _kv_source_at(trace_a, t, pe, params) if config.share_kv else None
        hooks = ControlHooks(temporal_mode_encoder=two_anchor,
                             temporal_mode_decoder=config.decoder_mode,
                             share_kv=config.share_kv, kv_source=kv)
        eps = denoise(z, pe, t, params, hooks)
        z = ddim_reverse_step(z, eps, t, schedule, config.eta, rng)
        tt_count = 0
        if config.time_travel and config.tt_lo <= step_index <= config.tt_hi:
            def denoise_fn(zz, tt):
                kv2 = (_kv_source_at(trace_a, tt, pe, params)
                       if config.share_kv else None)
                return denoise(zz, pe, tt, params,
                               ControlHooks(temporal_mode_encoder=two_anchor,
                                            temporal_mode_decoder=config.decoder_mode,
                                            share_kv=config.share_kv,
                                            kv_source=kv2))
            z, tt_count = time_travel_loop(z, t, config.tt_iters, schedule,
                                           denoise_fn, rng, insert_fn,
                                           config.eta)
        log.events.append(StepEvent(step_index, t, ("first", "last"), tt_count,
                                    two_anchor.value, config.decoder_mode.value))
    z = insert_fn(z, 0)
    log.final_frame1_matches = z[0].tobytes() == trace_a.latent(0)[0].tobytes()
    log.final_framef_matches = z[f - 1].tobytes() == trace_b.latent(0)[0].tobytes()
    return z, log


def run_temporal_control_study(trace: GenerationTrace, config: SamplerConfig,
                               params: DenoiserParams, schedule: NoiseSchedule,
                               n_seeds: int = 20) -> dict:
    """Mean frame smoothness with temporal attention on vs bypassed.

    Runs animate twice per seed, identical except that the second run
    skips every motion module, and reports the two smoothness means
    (mean squared difference of consecutive frames, lower is smoother).
    """
    smooth_default = []
    smooth_bypass = []
    for seed in range(n_seeds):
        for bypass, sink in ((False, smooth_default), (True, smooth_bypass)):
            cfg = replace(config, seed=seed, bypass_motion=bypass)
            video, _ = animate(trace, cfg, params, schedule)
            sink.append(compute_metrics(video, trace)["frame_smoothness"])
    return {
        "seeds": n_seeds,
        "frame_smoothness_mean_default": float(np.mean(smooth_default)),
        "frame_smoothness_mean_bypassed_motion": float(np.mean(smooth_bypass)),
        "frame_smoothness_default": [float(x) for x in smooth_default],
        "frame_smoothness_bypassed_motion": [float(x) for x in smooth_bypass],
    }


def compute_metrics(video: np.ndarray, trace: GenerationTrace) -> dict:
    """first_frame_mse against the trace's z_0, and mean consecutive-frame MSE."""
    ref = trace.latent(0)[0]
    if video.shape[1:] != ref.shape:
        raise ValueError("video and trace latent shapes differ")
    v64 = video.astype(np.float64)
    first = float(np.mean((v64[0] - ref.astype(np.float64)) ** 2))
    if video.shape[0] < 2:
        smooth = 0.0
    else:
        diffs = v64[1:] - v64[:-1]
        smooth = float(np.mean(diffs ** 2))
    return {"first_frame_mse": first, "frame_smoothness": smooth}
