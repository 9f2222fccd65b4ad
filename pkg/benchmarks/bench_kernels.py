#!/usr/bin/env python3
"""Time the numba kernels against the numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeat 20 --output bench.json
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from sddr.kernels import NUMBA_AVAILABLE, get_backend


def _cases(rng):
    X = rng.normal(size=(256, 32))
    W = rng.normal(size=(32, 16))
    b = rng.normal(size=16)
    Z = X @ W + b
    dA = rng.normal(size=(256, 16))
    F = rng.normal(size=(256, 16))
    H = rng.normal(size=(100, 16))
    cos = rng.uniform(-1, 1, size=(256, 100))
    dcos = rng.normal(size=(256, 100))
    labels = rng.integers(0, 90, size=256)
    mask = rng.random(256) < 0.5
    herd = rng.normal(size=(500, 16))
    herd /= np.linalg.norm(herd, axis=1, keepdims=True)
    means = rng.normal(size=(100, 16))
    return {
        "dense_forward": ("dense_forward", (X, W, b, True)),
        "dense_backward": ("dense_backward", (X, W, Z, dA, True)),
        "cosine_forward": ("cosine_forward", (F, H, 1e-12)),
        "cosine_backward": ("cosine_backward", (F, H, cos, dcos, 1e-12)),
        "margin_ranking": ("margin_ranking", (cos, labels, mask, 90, 0.5, 2)),
        "herding_select (500 -> 20)": ("herding_select", (herd, 20)),
        "nearest_mean": ("nearest_mean", (F, means)),
    }


def _time(fn, args, repeat):
    fn(*args)  # warm-up, includes jit compilation
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="write timings as JSON")
    args = p.parse_args(argv)

    backends = ["numpy"] + (["numba"] if NUMBA_AVAILABLE else [])
    cases = _cases(np.random.default_rng(args.seed))
    rows = []
    print(f"{'kernel':<28} " + " ".join(f"{b + ' (us)':>14}" for b in backends) + f" {'speedup':>9}")
    for label, (name, fargs) in cases.items():
        t = {b: _time(getattr(get_backend(b), name), fargs, args.repeat) for b in backends}
        speed = t["numpy"] / t["numba"] if "numba" in t else float("nan")
        rows.append({"kernel": label, **{f"{b}_s": v for b, v in t.items()}, "speedup": speed})
        print(f"{label:<28} " + " ".join(f"{t[b] * 1e6:>14.1f}" for b in backends) + f" {speed:>8.2f}x")
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
