"""Time the compiled kernels against the numpy/pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from openset_ssl import kernels
from openset_ssl.kernels import _fallback


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(scale):
    rng = np.random.default_rng(0)
    p = rng.exponential(size=20_000 * scale)
    p /= p.sum()
    prob, alias = kernels.alias_build(p)
    u, c = rng.random(200_000 * scale), rng.random(200_000 * scale)
    X = rng.standard_normal((5000 * scale, 16))
    mu = rng.standard_normal((12, 16))
    var = rng.uniform(0.5, 2.0, (12, 16))
    lw = np.log(np.full(12, 1 / 12))
    return {
        f"alias_build n={p.size}": lambda m: m.alias_build(p),
        f"alias_draw  n={u.size}": lambda m: m.alias_draw(prob, alias, u, c),
        f"diag_log_prob {X.shape[0]}x16, K=12": lambda m: m.diag_log_prob(X, mu, var, lw),
    }


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="small inputs, one repeat")
    args = ap.parse_args(argv)
    scale, repeat = (1, 1) if args.quick else (5, 5)
    compiled = kernels._impl if kernels.BACKEND == "cython" else None
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<34}{'compiled (ms)':>15}{'fallback (ms)':>15}{'speedup':>10}")
    rows = []
    for name, fn in cases(scale).items():
        t_fb = best_of(lambda: fn(_fallback), repeat)
        t_c = best_of(lambda: fn(compiled), repeat) if compiled else float("nan")
        rows.append((name, t_c, t_fb))
        print(f"{name:<34}{1e3 * t_c:>15.2f}{1e3 * t_fb:>15.2f}{t_fb / t_c:>9.1f}x")
    return rows


if __name__ == "__main__":
    main()
