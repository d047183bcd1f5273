"""Scalar Brownian bridge / first-passage samplers.

All draws take an explicit uniform source so the same routines serve the
keyed streams and the tests.  Units: ``c`` clearances are in standard
Brownian units (unit diffusion), times in BBM time.

The compiled core duplicates ``ndtri``, ``levy_trunc`` and ``two_levy``; keep
them in step.
"""
from __future__ import annotations

import math

import numpy as np

from . import rng as R

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
SQRT2 = math.sqrt(2.0)
MAX_REJECT = 1000
GRID_N = 2048

# Acklam's rational approximation coefficients
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_PLOW = 0.02425


def ndtri(p: float) -> float:
    """Inverse standard normal CDF (Acklam + one Halley step)."""
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    if p < _PLOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _PLOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if abs(x) < 38.0:
        # Phi(x) - p, written to avoid cancellation in the upper tail
        if x > 0.0:
            e = (1.0 - p) - 0.5 * math.erfc(x / SQRT2)
        else:
            e = 0.5 * math.erfc(-x / SQRT2) - p
        u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


def log_erfc(x: float) -> float:
    if x < 25.0:
        return math.log(math.erfc(x))
    x2 = x * x
    return -x2 - math.log(x * math.sqrt(math.pi)) + math.log1p(-0.5 / x2 + 0.75 / (x2 * x2))


def log_levy(c: float, u: float) -> float:
    """log of the first-passage density of level c (c > 0) at time u."""
    return math.log(c) - LOG_SQRT_2PI - 1.5 * math.log(u) - c * c / (2.0 * u)


def levy_trunc(c: float, T: float, draw) -> float:
    """Hitting time of level c > 0 by standard BM, conditioned to be <= T."""
    q = c / math.sqrt(T)
    if q <= 30.0:
        tail = 0.5 * math.erfc(q / SQRT2)
        z = -ndtri(draw() * tail)
        return min(c * c / (z * z), T)
    # far tail: y = z^2/2 has density prop. to exp(-y)/sqrt(y) on y > q^2/2
    y0 = 0.5 * q * q
    while True:
        y = y0 - math.log(draw())
        if draw() <= math.sqrt(y0 / y):
            return min(c * c / (2.0 * y), T)


def _two_levy_grid(a: float, b: float, T: float, u: float) -> float:
    h = T / GRID_N
    rho = (np.arange(GRID_N) + 0.5) * h
    lf = (np.log(a) - 1.5 * np.log(rho) - a * a / (2 * rho)
          + np.log(b) - 1.5 * np.log(T - rho) - b * b / (2 * (T - rho)))
    w = np.exp(lf - lf.max())
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    i = int(np.searchsorted(cdf, u))
    i = min(i, GRID_N - 1)
    lo = cdf[i - 1] if i > 0 else 0.0
    frac = (u - lo) / max(cdf[i] - lo, 1e-300)
    return (i + min(max(frac, 0.0), 1.0)) * h


def two_levy(a: float, b: float, T: float, draw) -> float:
    """Sample rho on (0, T) with density prop. to l_a(rho) l_b(T - rho).

    l_c is the first-passage density of level c.  This is the law of the
    argmin of a Brownian bridge over [0, T] whose endpoints sit a and b above
    its minimum (standard units), and of the first hitting time of an
    intermediate level given the time of a later first passage.
    """
    if T <= 0.0:
        return 0.0
    if a <= 0.0:
        return 0.0
    if b <= 0.0:
        return T
    half = 0.5 * T
    ra = min(max(a * a / 3.0, half), T)
    rb = min(max(b * b / 3.0, half), T)
    log_sa = log_levy(a, ra)
    log_sb = log_levy(b, rb)
    log_za = log_erfc(a / math.sqrt(2.0 * T))
    log_zb = log_erfc(b / math.sqrt(2.0 * T))
    wa = log_sb + log_za
    wb = log_sa + log_zb
    m = max(wa, wb)
    pa = math.exp(wa - m) / (math.exp(wa - m) + math.exp(wb - m))
    for _ in range(MAX_REJECT):
        # keep the offset from the nearer end exact; rho itself may round to 0 or T
        if draw() < pa:
            ua = levy_trunc(a, T, draw)
            ub = T - ua
        else:
            ub = levy_trunc(b, T, draw)
            ua = T - ub
        if ua <= 0.0 or ub <= 0.0:
            draw()
            continue
        rho = ua if ua < ub else T - ub
        la = log_levy(a, ua)
        lb = log_levy(b, ub)
        log_f = la + lb
        x1 = log_sb + la
        x2 = log_sa + lb
        log_h = max(x1, x2) + math.log1p(math.exp(-abs(x1 - x2)))
        if math.log(draw()) <= log_f - log_h:
            return rho
    return _two_levy_grid(a, b, T, draw())


def bridge_min(v0: float, v1: float, var: float, u: float) -> float:
    """Minimum of a bridge from v0 to v1 with total variance ``var``."""
    d = v0 - v1
    return 0.5 * (v0 + v1 - math.sqrt(d * d - 2.0 * var * math.log(u)))


def bridge_min_above(d0: float, d1: float, dt: float, u: float) -> float:
    """Minimum clearance of a standard bridge from d0 to d1 (>= 0) kept above 0."""
    if d0 <= 0.0 or d1 <= 0.0:
        return 0.0
    k = 2.0 * d0 * d1 / dt
    K = -0.5 * dt * math.log1p(-(1.0 - u) * (-math.expm1(-k)))
    d = d0 - d1
    return max(0.5 * (d0 + d1 - math.sqrt(d * d + 4.0 * K)), 0.0)


def crossing_prob(e0: float, e1: float, dt: float) -> float:
    """P(standard bridge with clearances e0, e1 touches the boundary)."""
    if e0 <= 0.0 or e1 <= 0.0:
        return 1.0
    if dt <= 0.0:
        return 0.0
    return math.exp(-2.0 * e0 * e1 / dt)


def bridge_point(x0: float, x1: float, dt: float, s: float, zn: float) -> float:
    """Brownian bridge value at offset s in [0, dt] from one normal draw."""
    if dt <= 0.0:
        return x0
    w = s / dt
    return x0 + w * (x1 - x0) + math.sqrt(max(s * (dt - s) / dt, 0.0)) * zn


def bes3_bridge_point(d0: float, d1: float, dt: float, s: float, draw, normal) -> float:
    """Value at offset s of a BES(3) bridge from d0 to d1 over dt.

    Uses the norm of a 3-d Brownian bridge from (d0,0,0) to d1*omega where
    omega is drawn from the exit-direction law (von Mises-Fisher with
    concentration d0*d1/dt).
    """
    if dt <= 0.0:
        return d0
    kap = d0 * d1 / dt
    u = draw()
    if kap < 1e-8:
        w = 2.0 * u - 1.0
    else:
        w = 1.0 + math.log1p(-(1.0 - u) * (-math.expm1(-2.0 * kap))) / kap
    w = min(max(w, -1.0), 1.0)
    phi = 2.0 * math.pi * draw()
    r = math.sqrt(max(1.0 - w * w, 0.0))
    end = (d1 * w, d1 * r * math.cos(phi), d1 * r * math.sin(phi))
    start = (d0, 0.0, 0.0)
    frac = s / dt
    sd = math.sqrt(max(s * (dt - s) / dt, 0.0))
    tot = 0.0
    for i in range(3):
        c = start[i] + frac * (end[i] - start[i]) + sd * normal()
        tot += c * c
    return math.sqrt(tot)


# ---------------------------------------------------------------- inverse Gaussian

def ig_sample(mu: float, lam: float, n1: float, u: float) -> float:
    """Michael-Schucany-Haas transform: n1 ~ N(0,1), u ~ U(0,1)."""
    y = n1 * n1
    x = mu + mu * mu * y / (2.0 * lam) - mu / (2.0 * lam) * math.sqrt(4.0 * mu * lam * y + mu * mu * y * y)
    if u <= mu / (mu + x):
        return x
    return mu * mu / x


def ig_pdf(mu: float, lam: float, x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(lam / (2 * np.pi * x**3)) * np.exp(-lam * (x - mu) ** 2 / (2 * mu * mu * x))
    return np.where(x > 0, out, 0.0)


def ig_cdf(mu: float, lam: float, x):
    from scipy.special import log_ndtr, ndtr

    x = np.asarray(x, dtype=float)
    xs = np.where(x > 0, x, 1.0)
    r = np.sqrt(lam / xs)
    out = ndtr(r * (xs / mu - 1.0)) + np.exp(2.0 * lam / mu + log_ndtr(-r * (xs / mu + 1.0)))
    return np.where(x > 0, np.clip(out, 0.0, 1.0), 0.0)


def stream_draw(key: int, tag: int, start: int = 0):
    """Closure returning successive uniforms of one keyed stream."""
    ks = R.KeyedStream(key, tag)
    ks.k = start
    return ks.uniform
