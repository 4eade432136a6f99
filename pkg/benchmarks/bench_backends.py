#!/usr/bin/env python3
"""Compare the compiled kernels against the pure-NumPy reference backend.

Times the three hot kernels and one full denoiser forward pass under each
available backend and prints the medians plus compiled-over-reference
speedups. Outputs are checked bitwise along the way: the two backends are
interchangeable, the only difference is speed.

Usage: python3 benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import statistics
import time

import numpy as np

from anchorvid import kernels
from anchorvid.denoiser import DenoiserArch, denoise, embed_prompt, init_denoiser
from anchorvid.tensor_store import SeededRng, randn
from anchorvid.window import AttentionMode


def _time(fn, repeats):
    fn()  # warm up
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def build_cases():
    rng = SeededRng(0)
    x = randn(rng, (200_000,)) * 20.0
    a = randn(rng, (512, 64))
    w = randn(rng, (64, 64))
    q = randn(rng, (256, 16, 64))
    k = randn(rng, (256, 16, 64))
    v = randn(rng, (256, 16, 64))

    params = init_denoiser(0, DenoiserArch())
    z = randn(rng, (16, 8, 8, 8))
    pe = embed_prompt("benchmark", 8)
    from anchorvid.denoiser import ControlHooks
    hooks = ControlHooks(temporal_mode_encoder=AttentionMode.WINDOW_CORRECTED)

    return [
        ("exp_f32            [200k]", lambda: kernels.exp_f32(x)),
        ("matmul_nt    [512x64x64]", lambda: kernels.matmul_nt(a, w)),
        ("attention [256,16,16,64]", lambda: kernels.attention_batched(q, k, v)),
        ("denoise  [f=16, 4 blocks]", lambda: denoise(z, pe, 25, params, hooks)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    if len(kernels.AVAILABLE_BACKENDS) < 2:
        print("compiled backend unavailable; nothing to compare")
        return

    cases = build_cases()
    results = {}
    for backend in ("reference", "compiled"):
        with kernels.temporary_backend(backend):
            results[backend] = [(_l, _time(fn, args.repeats))
                                for _l, fn in cases]

    # sanity: both backends produce identical bytes on every case
    for _label, fn in cases:
        with kernels.temporary_backend("reference"):
            ref = np.asarray(fn())
        with kernels.temporary_backend("compiled"):
            fast = np.asarray(fn())
        assert ref.tobytes() == fast.tobytes(), f"backend mismatch in {_label}"

    print(f"{'kernel':28s} {'reference':>12s} {'compiled':>12s} {'speedup':>9s}")
    for (label, t_ref), (_, t_fast) in zip(results["reference"],
                                           results["compiled"]):
        print(f"{label:28s} {t_ref * 1e3:10.3f}ms {t_fast * 1e3:10.3f}ms "
              f"{t_ref / t_fast:8.1f}x")
    print("\noutputs verified bitwise-identical across backends")


if __name__ == "__main__":
    main()
