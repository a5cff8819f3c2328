#!/usr/bin/env python3
"""Benchmark the compiled aggregation kernel against the numpy fallback.

The aggregation accumulate loop is the one hot path the compiled extension
owns (live FedAvg, prefix aggregation while stepping, integrity
re-derivation, branch reaggregation); forward/training math runs on numpy
in both backends, and is timed here once for context. Run after building:

    python benchmarks/bench_backends.py [--repeats 7]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fedtrace import _pykernels

try:
    from fedtrace import _kernels
except ImportError:
    _kernels = None


def _make_net(arch, seed=0):
    rng = np.random.default_rng(seed)
    weights = [
        rng.standard_normal((arch[l + 1], arch[l]), dtype=np.float32)
        * np.float32((2.0 / arch[l]) ** 0.5)
        for l in range(len(arch) - 1)
    ]
    biases = [np.zeros(arch[l + 1], dtype=np.float32) for l in range(len(arch) - 1)]
    return weights, biases


def _best(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_weighted_sum(backend, arch, n_models, repeats):
    nets = [_make_net(arch, seed) for seed in range(n_models)]
    flat = [w + b for w, b in nets]

    def agg():
        acc = [np.zeros(a.shape, dtype=np.float64) for a in flat[0]]
        for arrays in flat:
            backend.weighted_sum_inplace(acc, arrays, 500.0)

    return _best(agg, repeats)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    backends = [("python", _pykernels)] + ([("compiled", _kernels)] if _kernels else [])
    if _kernels is None:
        print("compiled extension not built; fallback only\n")

    print("weighted accumulation (the backend-switched kernel)")
    cases = [
        ("mlp64x32x10     n=50", (64, 32, 10), 50),
        ("mlp256x128x10   n=30", (256, 128, 10), 30),
        ("mlp1024x1024x10 n=10", (1024, 1024, 10), 10),
        ("mlp1024x1024x10 n=50", (1024, 1024, 10), 50),
    ]
    name_w = max(len(n) for n, _, _ in cases)
    header = f"{'case'.ljust(name_w)}  " + "  ".join(f"{n:>12}" for n, _ in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, arch, n_models in cases:
        times = [bench_weighted_sum(mod, arch, n_models, args.repeats) for _, mod in backends]
        row = f"{name.ljust(name_w)}  " + "  ".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:7.2f}x"
        print(row)

    print("\nforward/train reference (numpy on every backend)")
    arch = (64, 32, 10)
    weights, biases = _make_net(arch)
    X1 = np.random.default_rng(1).standard_normal((1, arch[0]), dtype=np.float32)
    Xb = np.random.default_rng(1).standard_normal((32, arch[0]), dtype=np.float32)
    y = np.random.default_rng(2).integers(0, 10, 32).astype(np.int64)
    t_fwd = _best(lambda: [_pykernels.forward_batch(X1, weights, biases, True) for _ in range(100)], args.repeats)
    def train():
        w, b = _make_net(arch)
        for _ in range(20):
            _pykernels.train_step(w, b, Xb, y, 0.05, 0.0)
    t_train = _best(train, args.repeats)
    print(f"single-input forward mlp64x32x10: {t_fwd * 10:.3f}ms/call")
    print(f"train_step x20 mlp64x32x10 batch32: {t_train * 1e3:.2f}ms")


if __name__ == "__main__":
    main()
