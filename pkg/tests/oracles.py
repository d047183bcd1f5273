"""Independent brute-force references used by several test modules."""
import math

import numpy as np

# continuity correction for discretely monitored barriers
BG = 0.5826


def discrete_bridge_touch(d0, d1, T, n_paths, dt, rng):
    """Fraction of grid-sampled Brownian bridges from d0 to d1 that reach 0.

    The barrier is shifted by BG*sqrt(dt) so the discrete frequency
    approximates the continuous crossing probability.
    """
    m = int(round(T / dt))
    shift = BG * math.sqrt(dt)
    hit = 0
    for lo in range(0, n_paths, 2000):
        k = min(2000, n_paths - lo)
        inc = rng.standard_normal((k, m)) * math.sqrt(dt)
        w = np.cumsum(inc, axis=1)
        s = np.arange(1, m + 1) * dt
        br = d0 + w - (s / T) * (w[:, -1:]) + (s / T) * (d1 - d0)
        hit += int(np.count_nonzero(br.min(axis=1) <= shift))
    return hit / n_paths


def drifted_bm_hits(alpha, nu, sigma2, n, dt, T_max, rng):
    """First passage of nu*t + sigma*B_t to alpha on a grid (barrier-corrected)."""
    sd = math.sqrt(sigma2 * dt)
    level = alpha - BG * sd
    pos = np.zeros(n)
    out = np.full(n, np.inf)
    alive = np.arange(n)
    steps = int(T_max / dt)
    for j in range(1, steps + 1):
        pos[alive] += nu * dt + sd * rng.standard_normal(alive.size)
        h = pos[alive] >= level
        if h.any():
            out[alive[h]] = j * dt
            alive = alive[~h]
            if alive.size == 0:
                break
    return out


def argmin_cdf(a, b, T, grid=20000):
    """CDF of rho with density prop. to l_a(rho) l_b(T - rho), by quadrature.

    The grid is geometric towards both endpoints so that mass concentrated
    within a^2 or b^2 of an end is resolved.
    """
    half = np.geomspace(1e-14 * T, 0.5 * T, grid)
    r = np.unique(np.concatenate(([0.0], half, T - half[::-1], [T])))
    mid = 0.5 * (r[1:] + r[:-1])
    lf = (np.log(a) - 1.5 * np.log(mid) - a * a / (2 * mid)
          + np.log(b) - 1.5 * np.log(T - mid) - b * b / (2 * (T - mid)))
    w = np.exp(lf - lf.max()) * np.diff(r)
    c = np.concatenate(([0.0], np.cumsum(w)))
    c /= c[-1]
    return lambda x: np.interp(x, r, c)


def killed_bridge_cdf(d0, d1, T, s, grid=20000):
    """CDF at offset s of a bridge d0 -> d1 over T conditioned to stay above 0."""
    hi = d0 + d1 + 12 * math.sqrt(T)
    y = (np.arange(grid) + 0.5) * hi / grid

    def k(x, yy, t):
        return np.exp(-(yy - x) ** 2 / (2 * t)) - np.exp(-(yy + x) ** 2 / (2 * t))

    w = k(d0, y, s) * k(y, d1, T - s)
    c = np.cumsum(w)
    c /= c[-1]
    edges = np.arange(1, grid + 1) * hi / grid
    return lambda x: np.interp(x, np.concatenate(([0.0], edges)), np.concatenate(([0.0], c)))
