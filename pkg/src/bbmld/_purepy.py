"""numpy fallback for the compiled kernels (same signatures, same streams)."""
from __future__ import annotations

import math

import numpy as np

from . import bridge
from . import rng as R

_U = np.uint64

ndtri = bridge.ndtri


def two_levy(a, b, T, key, tag, start=0):
    return bridge.two_levy(a, b, T, bridge.stream_draw(key, tag, start))


def grow(key, parent, child, t_birth, x_birth, t_anchor, x_anchor, t_end, x_end,
         fixed, start, n, horizon):
    cap = key.shape[0]
    i = start
    while i < n:
        lo, hi = i, n
        idx = np.arange(lo, hi)
        idx = idx[fixed[lo:hi] == 0]
        if idx.size == 0:
            i = hi
            continue
        k = key[idx]
        L = -np.log(R.vuniform(k, R.TAG_LIFE, 0))
        end = t_anchor[idx] + L
        leaf = end >= horizon
        end = np.where(leaf, horizon, end)
        nb = int((~leaf).sum())
        if n + 2 * nb > cap:
            break
        z = R.vnormal(k, R.TAG_STEP, 0)
        xe = x_anchor[idx] + np.sqrt(end - t_anchor[idx]) * z
        t_end[idx] = end
        x_end[idx] = xe
        child[idx[leaf]] = -1
        br = idx[~leaf]
        if nb:
            first = n + 2 * np.arange(nb)
            child[br] = first
            for c in range(2):
                pos = first + c
                key[pos] = R.vchild_key(key[br], c)
                parent[pos] = br
                child[pos] = -1
                t_birth[pos] = t_end[br]
                x_birth[pos] = x_end[br]
                t_anchor[pos] = t_end[br]
                x_anchor[pos] = x_end[br]
                fixed[pos] = 0
            n += 2 * nb
        i = hi
    return i, n


def summarize(key, t_birth, t_anchor, x_anchor, t_end, x_end, skip, n, horizon,
              y, beta, theta, level, line_slope, line_icpt, do_min):
    te = t_end[:n]
    leaf = te >= horizon
    xl = x_end[:n][leaf]
    pop = int(leaf.sum())
    cnt = int((xl >= y).sum())
    W = float(np.exp(beta * xl - (0.5 * beta * beta + 1.0) * horizon).sum())
    M = float(xl.max()) if pop else -math.inf
    if not do_min:
        return pop, cnt, W, M, math.inf, -1, math.inf, -1, False
    idx = np.nonzero(skip[:n] == 0)[0]
    if idx.size == 0:
        return pop, cnt, W, M, math.inf, -1, math.inf, -1, False
    cc = 0.5 * theta * theta + 1.0
    t0 = t_anchor[idx]
    t1 = t_end[idx]
    x0 = x_anchor[idx]
    x1 = x_end[idx]
    dt = t1 - t0
    v0 = cc * t0 - theta * x0
    v1 = cc * t1 - theta * x1
    u = R.vuniform(key[idx], R.TAG_MIN, 0)
    d = v0 - v1
    m = 0.5 * (v0 + v1 - np.sqrt(d * d - 2.0 * theta * theta * dt * np.log(u)))
    j = int(np.argmin(m))
    vmin = float(m[j])
    imin = int(idx[j])
    e0 = line_slope * t0 + line_icpt - x0
    e1 = line_slope * t1 + line_icpt - x1
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        pcross = np.where(dt > 0, np.exp(-2.0 * e0 * e1 / np.where(dt > 0, dt, 1.0)), 0.0)
    line_hit = bool(np.any((e0 <= 0) | (e1 <= 0) | (u <= pcross)))
    tau, itau = math.inf, -1
    cand = np.nonzero(m <= level)[0]
    if cand.size:
        cand = cand[np.argsort(t0[cand], kind="stable")]
        for c in cand:
            if t0[c] >= tau:
                break
            if v0[c] <= level:
                rho = 0.0
            else:
                kk = int(key[idx[c]])
                rho_m = two_levy((v0[c] - m[c]) / theta, (v1[c] - m[c]) / theta, dt[c], kk, R.TAG_ARGMIN)
                rho = two_levy((v0[c] - level) / theta, (level - m[c]) / theta, rho_m, kk, R.TAG_HIT)
            if t0[c] + rho < tau:
                tau = float(t0[c] + rho)
                itau = int(idx[c])
    return pop, cnt, W, M, vmin, imin, tau, itau, line_hit
