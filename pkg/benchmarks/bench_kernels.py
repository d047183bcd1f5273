"""Compiled core vs pure-Python fallback on the hot kernels.

    python3 benchmarks/bench_kernels.py [--t 6] [--trees 200] [--repeat 3]

Times tree growth, the per-tree summary pass (level count, martingale,
maximum, V-minimum and first passage) and the argmin sampler in each
backend, checks that both backends return the same numbers, and prints
one table.
"""
import argparse
import math
import sys
import time

import numpy as np

from bbmld import _purepy, kernels
from bbmld import rng as R
from bbmld import simulator as S


def best_of(fn, repeat):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def grow_trees(grow, horizon, n, seed=1):
    orig = S.kernels.grow
    S.kernels.grow = grow
    try:
        return [S.simulate(S.SimConfig(horizon, seed, i)) for i in range(n)]
    finally:
        S.kernels.grow = orig


def summarize_all(summ, trees, theta=0.9):
    cc = theta * theta / 2 + 1
    res = []
    for tr in trees:
        mask = np.zeros(tr.n, np.uint8)
        res.append(summ(tr.key, tr.t_birth, tr.t_anchor, tr.x_anchor, tr.t_end, tr.x_end, mask,
                        tr.n, tr.horizon, tr.horizon, theta, theta, -0.4, cc / theta, 0.3 / theta,
                        True))
    return res


def argmin_draws(f, n):
    return [f(0.7, 0.2 + (i % 7) * 0.1, 1.3, R.root_key(5, i), R.TAG_ARGMIN) for i in range(n)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t", type=float, default=6.0, help="tree horizon")
    ap.add_argument("--trees", type=int, default=200)
    ap.add_argument("--draws", type=int, default=20000, help="argmin sampler calls")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if kernels.BACKEND != "cython":
        print("compiled core not available; build with `pip install -e . --no-build-isolation`")
        return 1
    from bbmld import _core

    trees = grow_trees(_core.grow, args.t, args.trees)
    ref = grow_trees(_purepy.grow, args.t, min(args.trees, 20))
    for a, b in zip(trees, ref):
        assert a.n == b.n and np.allclose(a.x_end[:a.n], b.x_end[:b.n], rtol=1e-12, atol=1e-12)
    ra = summarize_all(_core.summarize, trees[:20])
    rb = summarize_all(_purepy.summarize, trees[:20])
    for x, y in zip(ra, rb):
        assert x[0] == y[0] and math.isclose(x[2], y[2], rel_tol=1e-12)
    particles = sum(tr.n for tr in trees)

    rows = []
    for name, fc, fp in [
        ("grow", lambda: grow_trees(_core.grow, args.t, args.trees),
         lambda: grow_trees(_purepy.grow, args.t, args.trees)),
        ("summarize", lambda: summarize_all(_core.summarize, trees),
         lambda: summarize_all(_purepy.summarize, trees)),
        ("two_levy", lambda: argmin_draws(_core.two_levy, args.draws),
         lambda: argmin_draws(_purepy.two_levy, args.draws)),
    ]:
        tc = best_of(fc, args.repeat)
        tp = best_of(fp, args.repeat)
        rows.append((name, tc, tp))

    print(f"{args.trees} trees to t={args.t:g} ({particles} particle records), "
          f"{args.draws} argmin draws, best of {args.repeat}")
    print(f"{'kernel':<10} {'cython [s]':>11} {'python [s]':>11} {'speedup':>8}")
    for name, tc, tp in rows:
        print(f"{name:<10} {tc:>11.4f} {tp:>11.4f} {tp / tc:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
