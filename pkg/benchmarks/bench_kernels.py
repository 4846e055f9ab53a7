"""Time the compiled and pure-numpy kernel backends on the same inputs.

Usage: python benchmarks/bench_kernels.py [--repeat 3] [--n-gram 1024] [--n-mls 8000]
"""
import argparse
import math
import time

import numpy as np

from mslab import kernels
from mslab.manifold import RandomSource, fibonacci_sphere, sample_uniform, sphere
from mslab.recovery import MLSConfig, _mls_neighbourhoods, monomial_exponents
from scipy.spatial import cKDTree


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def mls_inputs(n, degree=2, seed=0):
    gen = np.random.default_rng(seed)
    pts = gen.uniform(-1.0, 1.0, (n, 2))
    evals = gen.uniform(-0.9, 0.9, (n // 2, 2))
    exps, counts = monomial_exponents(2, degree)
    k = math.ceil(MLSConfig().min_points_factor * counts[-1])
    indptr, indices, radius = _mls_neighbourhoods(cKDTree(pts), evals, k, 2.0)
    return pts, indptr, indices, evals, radius, exps, counts


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n-gram", type=int, default=1024)
    ap.add_argument("--n-mls", type=int, default=8000)
    args = ap.parse_args(argv)

    try:
        compiled = kernels.backend("compiled")
    except ImportError:
        print("compiled backend not built; only the python backend is timed")
        compiled = None
    python = kernels.backend("python")

    x = sample_uniform(sphere(2), args.n_gram, RandomSource(0)).points
    phi = np.linspace(0.0, math.pi, 20000)
    mls = mls_inputs(args.n_mls)
    cases = [
        (f"cap_gram n={args.n_gram}", lambda b: b.cap_gram(x, 2)),
        ("cap_kernel_angle 20000 angles", lambda b: b.cap_kernel_angle(2, phi)),
        (f"mls_coefficients {len(mls[3])} nodes deg 2", lambda b: b.mls_coefficients(*mls)[0]),
    ]
    print(f"{'kernel':36s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s} {'max diff':>9s}")
    for name, fn in cases:
        tp, ref = best_of(lambda: fn(python), args.repeat)
        if compiled is None:
            print(f"{name:36s} {tp:11.4f}")
            continue
        tc, got = best_of(lambda: fn(compiled), args.repeat)
        diff = float(np.max(np.abs(np.asarray(got) - np.asarray(ref))))
        print(f"{name:36s} {tp:11.4f} {tc:13.4f} {tp / tc:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
