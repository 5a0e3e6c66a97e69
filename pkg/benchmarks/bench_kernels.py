"""Time the compiled kernels against the plain numpy reference.

Usage: python3 benchmarks/bench_kernels.py [--repeats 5]

Reports best-of-N wall time per backend for the four hot kernels (fused
rollout, GAE scan, mixture component log densities, silhouette samples)
plus the speedup. The numba column is skipped when numba is not installed.
"""

import argparse
import time

import numpy as np

from cenie_lab.kernels import _numpy_impl
from cenie_lab.maze_env import generate_random_level, level_to_arrays
from cenie_lab.student import init_policy

try:
    from cenie_lab.kernels import _numba_impl
except ImportError:
    _numba_impl = None


def make_rollout_args(seed=0, t=256, w=8):
    rng = np.random.default_rng(seed)
    level = generate_random_level(9, (0, 20), rng)
    params = init_policy(seed)
    uniforms = rng.random((t, w))
    return level_to_arrays(level) + (
        100, t,
        params.w1, params.b1, params.w2, params.b2,
        params.wp, params.bp, params.wv, float(params.bv),
        uniforms, True, False,
    )


def make_gae_args(seed=0, t=512, w=8):
    rng = np.random.default_rng(seed)
    rewards = rng.normal(size=(t, w))
    values = rng.normal(size=(t + 1, w))
    dones = (rng.random((t, w)) < 0.1).astype(np.float64)
    return rewards, values, dones, 0.995, 0.95


def make_density_args(seed=0, n=8192, k=4, d=11):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    means = rng.normal(size=(k, d))
    raw = rng.normal(size=(k, d, d))
    covs = np.stack([r @ r.T + 0.5 * np.eye(d) for r in raw])
    prec = np.stack([np.linalg.inv(np.linalg.cholesky(c)) for c in covs])
    log_det = np.array([np.log(np.diag(p)).sum() for p in prec])
    return x, means, prec, log_det


def make_silhouette_args(seed=0, n=1000, k=4, d=11):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d)) + rng.integers(0, k, size=n)[:, None] * 4.0
    labels = rng.integers(0, k, size=n).astype(np.int64)
    return np.ascontiguousarray(x), labels, k


CASES = [
    ("rollout_batch 256x8", "rollout_batch", make_rollout_args),
    ("gae_scan 512x8", "gae_scan", make_gae_args),
    ("component_log_densities 8192x4x11", "component_log_densities", make_density_args),
    ("silhouette_samples 1000x11", "silhouette_samples", make_silhouette_args),
]


def best_of(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    opts = parser.parse_args()

    print(f"{'kernel':38s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for title, name, make_args in CASES:
        args = make_args()
        ref = best_of(getattr(_numpy_impl, name), args, opts.repeats)
        if _numba_impl is None:
            print(f"{title:38s} {ref * 1e3:8.2f}ms {'n/a':>10s} {'n/a':>8s}")
            continue
        fast_fn = getattr(_numba_impl, name)
        fast_fn(*args)  # compile outside the timed region
        fast = best_of(fast_fn, args, opts.repeats)
        print(f"{title:38s} {ref * 1e3:8.2f}ms {fast * 1e3:8.2f}ms {ref / fast:7.1f}x")


if __name__ == "__main__":
    main()
