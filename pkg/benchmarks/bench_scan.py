"""Benchmark the pixel-scan backends (compiled extension vs numpy fallback).

Run:  python benchmarks/bench_scan.py [--frames 200] [--size 640x360]
"""

import argparse
import time

import numpy as np

from stagelight import lightcodec


def bench(fn, frames, v_threshold, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for px in frames:
            fn(px, v_threshold)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--frames", type=int, default=200)
    ap.add_argument("--size", default="640x360")
    ap.add_argument("--v-threshold", type=int, default=60)
    args = ap.parse_args()
    w, h = (int(x) for x in args.size.split("x"))

    rng = np.random.default_rng(0)
    frames = [
        rng.integers(0, 256, size=(w * h, 3), dtype=np.uint8) for _ in range(args.frames)
    ]
    mpx = args.frames * w * h / 1e6

    backends = lightcodec.histogram_backends()
    print(f"{args.frames} frames of {w}x{h} ({mpx:.1f} Mpx), v' = {args.v_threshold}")
    results = {}
    for name, fn in backends.items():
        dt = bench(fn, frames, args.v_threshold)
        results[name] = dt
        print(f"  {name:>9}: {dt:7.3f} s  ({mpx / dt:6.1f} Mpx/s)")
    if "compiled" in results and "numpy" in results:
        print(f"  speedup (compiled over numpy): {results['numpy'] / results['compiled']:.2f}x")
    else:
        print("  compiled extension not available; only the fallback was timed")

    # both backends must agree bitwise
    for px in frames[:5]:
        outs = [fn(px, args.v_threshold) for fn in backends.values()]
        for other in outs[1:]:
            assert np.array_equal(outs[0][0], other[0]) and np.array_equal(outs[0][1], other[1])
    print("  agreement check passed")


if __name__ == "__main__":
    main()
