"""Command-line front end.

Thin shell over the library: parses flags, loads/saves traces, and emits
a RunReport (stable-key JSON) next to every video it writes. Exit codes
are scriptable: 0 success, 2 bad configuration, 3 trace mismatch,
4 invariant failure, 5 I/O or file-format trouble.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .checks import run_fast_checks
from .denoiser import DenoiserArch, init_denoiser
from .errors import ConfigError, InvariantError, TraceMismatchError
from .sampler import (NoiseSchedule, SamplerConfig, StepLog, animate,
                      compute_metrics, generate_t2i_trace, interpolate,
                      invert_to_trace, run_temporal_control_study)
from .tensor_store import TensorFormatError, read_tensor, write_tensor
from .trace import ManifestError, load_trace, save_trace
from .window import AttentionMode

# latent channel 0 maps to gray as clamp(round(128 + 64 x), 0, 255)
PGM_OFFSET = 128.0
PGM_SCALE = 64.0

_MODE_CHOICES = {
    "global": AttentionMode.GLOBAL,
    "window": AttentionMode.WINDOW_UNCORRECTED,
    "window-pc": AttentionMode.WINDOW_CORRECTED,
}


@dataclass
class RunReport:
    config: dict
    metrics: dict = field(default_factory=dict)
    step_summary: dict = field(default_factory=dict)
    output_files: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def export_frame_pgm(path, frame: np.ndarray) -> None:
    """Write channel 0 of one latent frame [c, h, w] as a binary PGM."""
    ch0 = frame[0].astype(np.float64)
    gray = np.clip(np.rint(PGM_OFFSET + PGM_SCALE * ch0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_tt_range(text: str):
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError as exc:
        raise ConfigError(f"--tt-range must be LO:HI, got {text!r}") from exc


def _sampler_config(args, frames=None) -> SamplerConfig:
    tt_lo, tt_hi = _parse_tt_range(args.tt_range)
    return SamplerConfig(
        steps=args.steps,
        frames=getattr(args, "frames", 16) if frames is None else frames,
        eta=args.eta,
        insert_latents=getattr(args, "insert_latents", True),
        share_kv=getattr(args, "share_kv", True),
        encoder_mode=_MODE_CHOICES[getattr(args, "encoder_attn", "window-pc")],
        decoder_mode=_MODE_CHOICES[getattr(args, "decoder_attn", "global")],
        time_travel=args.time_travel,
        tt_iters=args.tt_iters,
        tt_lo=tt_lo,
        tt_hi=tt_hi,
        seed=args.seed,
    )


def _config_echo(args, config: SamplerConfig) -> dict:
    echo = {
        "command": args.command,
        "steps": config.steps,
        "frames": config.frames,
        "seed": config.seed,
        "eta": config.eta,
        "model_seed": args.model_seed,
        "insert_latents": config.insert_latents,
        "share_kv": config.share_kv,
        "encoder_attn": config.encoder_mode.value,
        "decoder_attn": config.decoder_mode.value,
        "time_travel": config.time_travel,
        "tt_iters": config.tt_iters,
        "tt_range": f"{config.tt_lo}:{config.tt_hi}",
        "kernel_backend": kernels.backend_name(),
    }
    for name in ("prompt", "trace", "trace_a", "trace_b", "out", "input",
                 "export_frames"):
        if hasattr(args, name):
            echo[name] = getattr(args, name)
    return echo


def _write_video_outputs(outdir, video: np.ndarray, report: RunReport,
                         export_frames: bool) -> None:
    os.makedirs(outdir, exist_ok=True)
    video_path = os.path.join(outdir, "video.azt")
    write_tensor(video_path, video)
    report.output_files["video.azt"] = _file_sha256(video_path)
    if export_frames:
        for i in range(video.shape[0]):
            name = f"frame_{i + 1:03d}.pgm"
            export_frame_pgm(os.path.join(outdir, name), video[i])
            report.output_files[name] = _file_sha256(os.path.join(outdir, name))
    report_path = os.path.join(outdir, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())


def _steplog_summary(log: StepLog) -> dict:
    out = log.summary()
    out["tt_per_step"] = log.tt_counts()
    return out


def cmd_t2i(args) -> int:
    config = _sampler_config(args, frames=1)
    schedule = NoiseSchedule.linear(args.steps)
    params = init_denoiser(args.model_seed, DenoiserArch())
    trace = generate_t2i_trace(args.prompt, args.seed, config, params, schedule)
    manifest = save_trace(trace, args.out)
    print(f"trace written to {args.out}")
    print(f"manifest sha256: {manifest['manifest_sha256']}")
    return 0


def cmd_animate(args) -> int:
    config = _sampler_config(args)
    schedule = NoiseSchedule.linear(args.steps)
    params = init_denoiser(args.model_seed, DenoiserArch())
    trace = load_trace(args.trace)
    video, log = animate(trace, config, params, schedule)
    report = RunReport(config=_config_echo(args, config),
                       metrics=compute_metrics(video, trace),
                       step_summary=_steplog_summary(log))
    _write_video_outputs(args.out, video, report, args.export_frames)
    print(report.to_json(), end="")
    return 0


def cmd_interpolate(args) -> int:
    config = _sampler_config(args)
    schedule = NoiseSchedule.linear(args.steps)
    params = init_denoiser(args.model_seed, DenoiserArch())
    trace_a = load_trace(args.trace_a)
    trace_b = load_trace(args.trace_b)
    video, log = interpolate(trace_a, trace_b, config, params, schedule)
    metrics = compute_metrics(video, trace_a)
    metrics["last_frame_matches_trace_b"] = bool(log.final_framef_matches)
    report = RunReport(config=_config_echo(args, config),
                       metrics=metrics,
                       step_summary=_steplog_summary(log))
    _write_video_outputs(args.out, video, report, args.export_frames)
    print(report.to_json(), end="")
    return 0


def cmd_invert(args) -> int:
    config = _sampler_config(args, frames=1)
    schedule = NoiseSchedule.linear(args.steps)
    params = init_denoiser(args.model_seed, DenoiserArch())
    z0 = read_tensor(args.input)
    if z0.ndim == 3:
        z0 = z0[None]
    trace = invert_to_trace(z0, args.prompt, config, params, schedule,
                            refine_iters=args.refine_iters)
    manifest = save_trace(trace, args.out)
    print(f"pseudo-trace written to {args.out}")
    print(f"manifest sha256: {manifest['manifest_sha256']}")
    return 0


def cmd_check(args) -> int:
    results = run_fast_checks(corrupt_position_table=args.corrupt_position_table)
    failed = [r for r in results if not r.ok]
    for r in results:
        status = "ok  " if r.ok else "FAIL"
        print(f"{status} {r.name}: {r.detail}")
    if failed:
        print(f"invariant failure: {failed[0].name}")
        return 4
    return 0


def cmd_study(args) -> int:
    config = _sampler_config(args)
    schedule = NoiseSchedule.linear(args.steps)
    params = init_denoiser(args.model_seed, DenoiserArch())
    trace = load_trace(args.trace)
    metrics = run_temporal_control_study(trace, config, params, schedule,
                                         n_seeds=args.study_seeds)
    report = RunReport(config=_config_echo(args, config), metrics=metrics)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    print(report.to_json(), end="")
    return 0


def _add_common(p, prompt=True):
    p.add_argument("--steps", type=int, default=50,
                   help="diffusion steps (default 50)")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--model-seed", type=int, default=0,
                   help="weight-init seed for the toy denoiser")
    p.add_argument("--eta", type=float, default=0.0,
                   help="DDIM eta; 0 is fully deterministic")
    p.add_argument("--tt-range", default="10:20", metavar="LO:HI",
                   help="step range for time travel (default 10:20)")
    p.add_argument("--tt-iters", type=int, default=5,
                   help="time-travel iterations per step (default 5)")
    p.add_argument("--time-travel", action="store_true",
                   help="enable time-travel re-noising")
    if prompt:
        p.add_argument("--prompt", default="", help="text prompt")


def _add_video_flags(p, encoder=True):
    p.add_argument("--frames", type=int, default=16,
                   help="video length in frames (default 16)")
    p.add_argument("--share-kv", action=argparse.BooleanOptionalAction,
                   default=True,
                   help="share frame-1 spatial K/V with all frames")
    if encoder:
        p.add_argument("--insert-latents", action=argparse.BooleanOptionalAction,
                       default=True,
                       help="insert stored frame-1 latents every step")
        p.add_argument("--encoder-attn", choices=sorted(_MODE_CHOICES),
                       default="window-pc",
                       help="temporal attention in encoder blocks")
    p.add_argument("--decoder-attn", choices=sorted(_MODE_CHOICES),
                   default="global",
                   help="temporal attention in decoder blocks")
    p.add_argument("--export-frames", action="store_true",
                   help="write one PGM image per frame")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anchorvid",
        description="Deterministic toy video diffusion with anchor-frame controls")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("t2i", help="sample one frame and record its trace")
    _add_common(p)
    p.add_argument("--out", required=True, help="trace directory to create")
    p.set_defaults(func=cmd_t2i)

    p = sub.add_parser("animate", help="sample a video steered by a trace")
    _add_common(p, prompt=False)
    _add_video_flags(p)
    p.add_argument("--trace", required=True, help="trace directory from t2i/invert")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("interpolate",
                       help="sample a video anchored to two traces")
    _add_common(p, prompt=False)
    _add_video_flags(p, encoder=False)
    p.add_argument("--trace-a", required=True, help="trace for frame 1")
    p.add_argument("--trace-b", required=True, help="trace for the last frame")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("invert",
                       help="build a pseudo-trace for an existing latent")
    _add_common(p)
    p.add_argument("--input", required=True, help="AZTN latent file ([1,c,h,w])")
    p.add_argument("--out", required=True, help="trace directory to create")
    p.add_argument("--refine-iters", type=int, default=4,
                   help="fixed-point refinements per inversion step")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("check", help="run the fast invariant suite")
    p.add_argument("--corrupt-position-table", action="store_true",
                   help=argparse.SUPPRESS)  # test hook: force a failure
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("study",
                       help="compare frame smoothness with and without motion modules")
    _add_common(p, prompt=False)
    _add_video_flags(p)
    p.add_argument("--trace", required=True, help="trace directory")
    p.add_argument("--study-seeds", type=int, default=20,
                   help="number of sampling seeds per configuration")
    p.add_argument("--out", default=None, help="optional report directory")
    p.set_defaults(func=cmd_study)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except TraceMismatchError as exc:
        print(f"trace mismatch: {exc}", file=sys.stderr)
        return 3
    except InvariantError as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return 4
    except (TensorFormatError, ManifestError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
