"""Schedules, DDIM algebra, and the anchored sampling loops."""

import numpy as np
import pytest
from dataclasses import replace

from anchorvid.denoiser import embed_prompt
from anchorvid.errors import (ConfigError, MissingLatentError,
                              TraceMismatchError)
from anchorvid.sampler import (GenerationTrace, NoiseSchedule, SamplerConfig,
                               animate, compute_metrics, ddim_inversion_step,
                               ddim_reverse_step, generate_t2i_trace,
                               insert_first_frame, interpolate,
                               invert_to_trace, plain_joint_sample,
                               run_temporal_control_study)
from anchorvid.tensor_store import SeededRng, randn
from anchorvid.window import AttentionMode


def _rand(seed, shape):
    return randn(SeededRng(seed), shape)


# --- schedule ---------------------------------------------------------------

def test_linear_schedule_endpoints(schedule50):
    assert schedule50.steps == 50
    assert abs(float(schedule50.betas[0]) - 1e-4) < 1e-10
    assert abs(float(schedule50.betas[-1]) - 0.02) < 1e-9


def test_alpha_bar_is_decreasing_from_one(schedule50):
    bars = [float(schedule50.alpha_bar(t)) for t in range(51)]
    assert bars[0] == 1.0
    assert all(a > b for a, b in zip(bars, bars[1:]))
    assert all(0.0 < b <= 1.0 for b in bars)


def test_alpha_bar_matches_product(schedule50):
    prod = 1.0
    for t in range(1, 51):
        prod *= float(schedule50.alpha(t))
        assert abs(float(schedule50.alpha_bar(t)) - prod) < 1e-6


def test_schedule_validation():
    with pytest.raises(ConfigError):
        NoiseSchedule(np.array([0.5, 0.4], dtype=np.float32))  # not increasing
    with pytest.raises(ConfigError):
        NoiseSchedule(np.array([0.0, 0.1], dtype=np.float32))  # zero beta
    with pytest.raises(ConfigError):
        NoiseSchedule(np.array([[0.1]], dtype=np.float32))     # wrong rank
    with pytest.raises(ConfigError):
        NoiseSchedule.linear(0)
    with pytest.raises(ConfigError):
        NoiseSchedule.linear(3).alpha_bar(4)


def test_schedule_digest_distinguishes(schedule50):
    assert len(schedule50.digest()) == 64
    assert schedule50.digest() == NoiseSchedule.linear(50).digest()
    assert schedule50.digest() != NoiseSchedule.linear(49).digest()


def test_config_validation():
    for bad in (dict(steps=0), dict(frames=0), dict(eta=-0.1), dict(eta=1.5),
                dict(tt_iters=-1),
                dict(time_travel=True, tt_lo=30, tt_hi=20),
                dict(time_travel=True, tt_hi=51)):
        with pytest.raises(ConfigError):
            SamplerConfig(**bad).validate()
    SamplerConfig().validate()
    # an unused time-travel range never blocks a short run
    SamplerConfig(steps=5).validate()


# --- DDIM algebra --------------------------------------------------------------

def test_reverse_step_zero_eps_rescales(schedule50):
    z = _rand(1, (2, 3))
    t = 20
    got = ddim_reverse_step(z, np.zeros_like(z), t, schedule50)
    ratio = np.sqrt(float(schedule50.alpha_bar(t - 1))
                    / float(schedule50.alpha_bar(t)))
    assert np.max(np.abs(got - ratio * z)) < 1e-6


def test_reverse_step_recovers_clean_signal(schedule50):
    """If z_t was built exactly from (x0, eps), the step reproduces the
    textbook z_{t-1} built from the same pair."""
    x0 = _rand(2, (4, 4))
    eps = _rand(3, (4, 4))
    for t in (1, 17, 50):
        ab_t = float(schedule50.alpha_bar(t))
        ab_prev = float(schedule50.alpha_bar(t - 1))
        z_t = np.sqrt(ab_t) * x0 + np.sqrt(1 - ab_t) * eps
        want = np.sqrt(ab_prev) * x0 + np.sqrt(1 - ab_prev) * eps
        got = ddim_reverse_step(z_t.astype(np.float32), eps, t, schedule50)
        assert np.max(np.abs(got - want)) < 1e-5


def test_reverse_then_invert_round_trips(schedule50):
    """With one fixed eps the two maps are algebraic inverses."""
    z = _rand(4, (3, 5))
    eps = _rand(5, (3, 5))
    for t in (1, 25, 50):
        down = ddim_reverse_step(z, eps, t, schedule50)
        back = ddim_inversion_step(down, eps, t, schedule50)
        assert np.max(np.abs(back - z)) < 1e-5


def test_reverse_step_rejects_bad_t(schedule50):
    z = _rand(1, (2, 2))
    with pytest.raises(ConfigError):
        ddim_reverse_step(z, z, 0, schedule50)


def test_eta_noise_requires_rng_and_changes_output(schedule50):
    z = _rand(6, (2, 3))
    eps = _rand(7, (2, 3))
    with pytest.raises(ConfigError):
        ddim_reverse_step(z, eps, 10, schedule50, eta=0.5)
    a = ddim_reverse_step(z, eps, 10, schedule50, eta=0.5, rng=SeededRng(1))
    b = ddim_reverse_step(z, eps, 10, schedule50, eta=0.5, rng=SeededRng(1))
    c = ddim_reverse_step(z, eps, 10, schedule50, eta=0.5, rng=SeededRng(2))
    d = ddim_reverse_step(z, eps, 10, schedule50)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()
    assert a.tobytes() != d.tobytes()
    assert np.isfinite(a).all()


# --- traces ----------------------------------------------------------------------

def test_trace_counts(params0):
    sched = NoiseSchedule.linear(10)
    cfg = SamplerConfig(steps=10, frames=1)
    trace = generate_t2i_trace("count", 1, cfg, params0, sched)
    assert sorted(trace.latents) == list(range(11))
    assert sorted({t for t, _ in trace.kv_caches}) == list(range(1, 11))
    assert sorted({b for _, b in trace.kv_caches}) == [0, 1, 2, 3]
    assert trace.steps == 10
    assert trace.schedule_hash == sched.digest()
    for z in trace.latents.values():
        assert z.shape == (1, 8, 8, 8)
        assert np.isfinite(z).all()


def test_trace_is_deterministic(params0, schedule50, config1, trace_red):
    again = generate_t2i_trace("a red cube", 11, config1, params0, schedule50)
    for t in trace_red.latents:
        assert again.latents[t].tobytes() == trace_red.latents[t].tobytes()


def test_trace_accessors(trace_red):
    assert trace_red.latent(0).shape == (1, 8, 8, 8)
    with pytest.raises(MissingLatentError):
        trace_red.latent(99)
    kv = trace_red.kv_at(3)
    assert sorted(kv) == [0, 1, 2, 3]
    assert trace_red.kv_at(99) is None


def test_insert_first_frame_copies(trace_red):
    z = _rand(8, (4, 8, 8, 8))
    out = insert_first_frame(z, trace_red, 5)
    assert out is not z
    assert out[0].tobytes() == trace_red.latent(5)[0].tobytes()
    assert out[1:].tobytes() == z[1:].tobytes()
    assert z[0].tobytes() != out[0].tobytes()  # original untouched
    out[0, 0, 0, 0] += 1.0                     # and no aliasing of the trace
    assert trace_red.latent(5)[0, 0, 0, 0] != out[0, 0, 0, 0]


# --- animate -----------------------------------------------------------------------

def test_animate_pins_frame1_bitwise(params0, schedule50, trace_red):
    cfg = SamplerConfig(frames=4)
    video, log = animate(trace_red, cfg, params0, schedule50)
    assert video.shape == (4, 8, 8, 8)
    assert video[0].tobytes() == trace_red.latent(0)[0].tobytes()
    assert log.final_frame1_matches is True
    assert len(log.events) == 50
    assert all(ev.frame1_matches_trace is True for ev in log.events)
    assert all(ev.insertions == ("first",) for ev in log.events)
    log.assert_frame1_pinned()
    assert log.summary()["frame1_pinned"] is True


def test_animate_is_deterministic(params0, schedule50, trace_red):
    cfg = SamplerConfig(frames=3, seed=7)
    a, _ = animate(trace_red, cfg, params0, schedule50)
    b, _ = animate(trace_red, cfg, params0, schedule50)
    assert a.tobytes() == b.tobytes()
    c, _ = animate(trace_red, replace(cfg, seed=8), params0, schedule50)
    assert a.tobytes() != c.tobytes()


def test_animate_without_insertion_drifts(params0, schedule50, trace_red):
    cfg = SamplerConfig(frames=2, insert_latents=False)
    video, log = animate(trace_red, cfg, params0, schedule50)
    assert video[0].tobytes() != trace_red.latent(0)[0].tobytes()
    assert log.final_frame1_matches is None
    assert all(ev.insertions == () for ev in log.events)


def test_controls_off_equals_plain_baseline(params0, schedule50, trace_red):
    cfg = SamplerConfig(frames=3, insert_latents=False, share_kv=False,
                        encoder_mode=AttentionMode.GLOBAL,
                        decoder_mode=AttentionMode.GLOBAL, seed=5)
    steered, _ = animate(trace_red, cfg, params0, schedule50)
    baseline = plain_joint_sample(trace_red, cfg, params0, schedule50)
    assert steered.tobytes() == baseline.tobytes()


def test_animate_rejects_schedule_mismatch(params0, schedule50, trace_red):
    cfg = SamplerConfig(steps=49, frames=2)
    with pytest.raises(ConfigError):
        animate(trace_red, cfg, params0, schedule50)  # config vs schedule
    other = NoiseSchedule.linear(50, beta_end=0.019)
    with pytest.raises(TraceMismatchError):
        animate(trace_red, SamplerConfig(frames=2), params0, other)


def test_animate_modes_recorded_in_log(params0, schedule50, trace_red):
    cfg = SamplerConfig(frames=2)
    _, log = animate(trace_red, cfg, params0, schedule50)
    assert log.events[0].encoder_mode == "window-pc"
    assert log.events[0].decoder_mode == "global"
    assert log.events[0].step_index == 1
    assert log.events[0].t == 50
    assert log.events[-1].t == 1


def test_kv_fallback_equals_stored_caches(params0, schedule50, trace_red):
    """A trace stripped of its caches animates to the identical video."""
    cfg = SamplerConfig(frames=3)
    full, _ = animate(trace_red, cfg, params0, schedule50)
    stripped = GenerationTrace(trace_red.latents, {}, trace_red.prompt,
                               trace_red.seed, trace_red.schedule_hash,
                               trace_red.steps)
    recomputed, log = animate(stripped, cfg, params0, schedule50)
    assert recomputed.tobytes() == full.tobytes()
    assert log.final_frame1_matches is True


# --- time travel ----------------------------------------------------------------

def test_time_travel_counts_follow_step_range(params0, schedule50, trace_red):
    cfg = SamplerConfig(frames=2, time_travel=True)
    video, log = animate(trace_red, cfg, params0, schedule50)
    for ev in log.events:
        want = 5 if 10 <= ev.step_index <= 20 else 0
        assert ev.tt_iterations == want
    assert log.summary()["tt_iterations"] == 55
    assert video[0].tobytes() == trace_red.latent(0)[0].tobytes()
    assert log.summary()["frame1_pinned"] is True


def test_time_travel_changes_output_but_not_anchor(params0, schedule50,
                                                   trace_red):
    plain_cfg = SamplerConfig(frames=2, seed=3)
    tt_cfg = replace(plain_cfg, time_travel=True, tt_iters=2)
    a, _ = animate(trace_red, plain_cfg, params0, schedule50)
    b, _ = animate(trace_red, tt_cfg, params0, schedule50)
    assert a[1].tobytes() != b[1].tobytes()
    assert a[0].tobytes() == b[0].tobytes()


def test_time_travel_zero_iters_is_plain(params0, schedule50, trace_red):
    cfg = SamplerConfig(frames=2, seed=3)
    ttz = replace(cfg, time_travel=True, tt_iters=0)
    a, _ = animate(trace_red, cfg, params0, schedule50)
    b, log = animate(trace_red, ttz, params0, schedule50)
    assert a.tobytes() == b.tobytes()
    assert log.summary()["tt_iterations"] == 0


# --- interpolation ----------------------------------------------------------------

def test_interpolate_endpoints_bitwise(params0, schedule50, trace_red,
                                       trace_blue):
    cfg = SamplerConfig(frames=5)
    video, log = interpolate(trace_red, trace_blue, cfg, params0, schedule50)
    assert video[0].tobytes() == trace_red.latent(0)[0].tobytes()
    assert video[4].tobytes() == trace_blue.latent(0)[0].tobytes()
    assert log.final_frame1_matches is True
    assert log.final_framef_matches is True
    assert all(ev.insertions == ("first", "last") for ev in log.events)
    assert all(ev.encoder_mode == "window-two-anchor" for ev in log.events)


def test_interpolate_same_trace_is_a_loop(params0, schedule50, trace_red):
    cfg = SamplerConfig(frames=4)
    video, log = interpolate(trace_red, trace_red, cfg, params0, schedule50)
    assert video[0].tobytes() == video[3].tobytes()
    assert log.final_frame1_matches is True and log.final_framef_matches is True


def test_interpolate_minimal_three_frames(params0, schedule50, trace_red,
                                          trace_blue):
    video, _ = interpolate(trace_red, trace_blue, SamplerConfig(frames=3),
                           params0, schedule50)
    assert video.shape == (3, 8, 8, 8)
    assert np.isfinite(video).all()


def test_interpolate_rejects_short_videos(params0, schedule50, trace_red,
                                          trace_blue):
    with pytest.raises(ConfigError):
        interpolate(trace_red, trace_blue, SamplerConfig(frames=2), params0,
                    schedule50)


# --- inversion -------------------------------------------------------------------

def test_inversion_round_trip_tightens_with_refinement(params0, schedule50,
                                                       config1, trace_red):
    z0 = trace_red.latent(0)

    def round_trip_err(refine_iters):
        ptrace = invert_to_trace(z0, "a red cube", config1, params0,
                                 schedule50, refine_iters=refine_iters)
        z = ptrace.latent(50)
        pe = embed_prompt("a red cube", 8)
        from anchorvid.denoiser import denoise
        for t in range(50, 0, -1):
            z = ddim_reverse_step(z, denoise(z, pe, t, params0), t, schedule50)
        return (float(np.linalg.norm(z - z0)) /
                float(np.linalg.norm(z0)))

    coarse = round_trip_err(0)
    fine = round_trip_err(4)
    assert fine < 1e-3
    assert fine < coarse / 10.0


def test_inversion_counts_and_validation(params0, schedule50, config1):
    z0 = _rand(12, (1, 8, 8, 8))
    trace = invert_to_trace(z0, "p", config1, params0, schedule50)
    assert sorted(trace.latents) == list(range(51))
    assert trace.kv_caches == {}
    assert trace.latent(0).tobytes() == z0.tobytes()
    with pytest.raises(ConfigError):
        invert_to_trace(_rand(1, (2, 8, 8, 8)), "p", config1, params0,
                        schedule50)
    with pytest.raises(ConfigError):
        invert_to_trace(z0, "p", config1, params0, schedule50,
                        refine_iters=-1)


def test_inverted_trace_animates_with_fallback(params0, schedule50, config1):
    z0 = _rand(13, (1, 8, 8, 8))
    ptrace = invert_to_trace(z0, "p", config1, params0, schedule50)
    video, log = animate(ptrace, SamplerConfig(frames=2), params0, schedule50)
    assert video[0].tobytes() == z0[0].tobytes()
    assert log.final_frame1_matches is True


# --- metrics and the study ----------------------------------------------------------

def test_metrics_closed_forms(trace_red):
    ref = trace_red.latent(0)[0]
    video = np.stack([ref, ref + 1.0])
    m = compute_metrics(video, trace_red)
    assert m["first_frame_mse"] == 0.0
    # +1.0 rounds in float32, so the difference is 1 only to ~1e-8
    assert abs(m["frame_smoothness"] - 1.0) < 1e-7

    single = compute_metrics(ref[None], trace_red)
    assert single["frame_smoothness"] == 0.0

    shifted = compute_metrics(np.stack([ref + 2.0, ref + 2.0]), trace_red)
    assert abs(shifted["first_frame_mse"] - 4.0) < 1e-6
    assert shifted["frame_smoothness"] == 0.0

    with pytest.raises(ValueError):
        compute_metrics(np.zeros((2, 8, 4, 4), dtype=np.float32), trace_red)


def test_study_reports_both_means(params0, schedule50, trace_red):
    cfg = SamplerConfig(frames=2)
    out = run_temporal_control_study(trace_red, cfg, params0, schedule50,
                                     n_seeds=2)
    assert out["seeds"] == 2
    assert len(out["frame_smoothness_default"]) == 2
    assert len(out["frame_smoothness_bypassed_motion"]) == 2
    assert out["frame_smoothness_mean_default"] == pytest.approx(
        np.mean(out["frame_smoothness_default"]))
    assert (out["frame_smoothness_mean_default"]
            != out["frame_smoothness_mean_bypassed_motion"])
