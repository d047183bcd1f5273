# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: tree growth and per-tree path summaries."""

from libc.math cimport log, sqrt, cos, exp, erfc, log1p, fabs, INFINITY, M_PI
from libc.stdint cimport uint64_t, int64_t, uint8_t

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t C1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t C2 = 0x94D049BB133111EBULL
cdef uint64_t C_TAG = 0xD6E8FEB86659FD93ULL
cdef uint64_t C_CHILD = 0xA0761D6478BD642FULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0
cdef double TWO_M54 = 0.5 / 9007199254740992.0
cdef double LOG_SQRT_2PI = 0.91893853320467274178
cdef double SQRT2 = 1.41421356237309504880

cdef uint64_t TAG_LIFE = 1
cdef uint64_t TAG_STEP = 2
cdef uint64_t TAG_MIN = 3
cdef uint64_t TAG_ARGMIN = 4
cdef uint64_t TAG_HIT = 5


cdef inline uint64_t mix(uint64_t z) nogil:
    z = z + GOLDEN
    z = (z ^ (z >> 30)) * C1
    z = (z ^ (z >> 27)) * C2
    return z ^ (z >> 31)


cdef inline uint64_t base_of(uint64_t key, uint64_t tag) nogil:
    return mix(key ^ (tag * C_TAG))


cdef inline double u01(uint64_t base, uint64_t k) nogil:
    return <double>(mix(base + k) >> 11) * TWO_M53 + TWO_M54


cdef struct Stream:
    uint64_t base
    uint64_t k


cdef inline double draw(Stream* s) nogil:
    cdef double u = u01(s.base, s.k)
    s.k += 1
    return u


# ---------------------------------------------------------------- special functions

cdef double* _A = [-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
                   1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00]
cdef double* _B = [-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
                   6.680131188771972e01, -1.328068155288572e01]
cdef double* _C = [-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
                   -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00]
cdef double* _D = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
                   3.754408661907416e00]


cdef double c_ndtri(double p) nogil:
    cdef double q, r, x, e, u
    if p <= 0.0:
        return -INFINITY
    if p >= 1.0:
        return INFINITY
    if p < 0.02425:
        q = sqrt(-2.0 * log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - 0.02425:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = sqrt(-2.0 * log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if fabs(x) < 38.0:
        # Phi(x) - p, written to avoid cancellation in the upper tail
        if x > 0.0:
            e = (1.0 - p) - 0.5 * erfc(x / SQRT2)
        else:
            e = 0.5 * erfc(-x / SQRT2) - p
        u = e * sqrt(2.0 * M_PI) * exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


def ndtri(double p):
    return c_ndtri(p)


cdef inline double c_log_erfc(double x) nogil:
    cdef double x2
    if x < 25.0:
        return log(erfc(x))
    x2 = x * x
    return -x2 - log(x * sqrt(M_PI)) + log1p(-0.5 / x2 + 0.75 / (x2 * x2))


cdef inline double log_levy(double c, double u) nogil:
    return log(c) - LOG_SQRT_2PI - 1.5 * log(u) - c * c / (2.0 * u)


cdef double levy_trunc(double c, double T, Stream* s) nogil:
    cdef double q = c / sqrt(T)
    cdef double tail, z, y0, y, r
    if q <= 30.0:
        tail = 0.5 * erfc(q / SQRT2)
        z = -c_ndtri(draw(s) * tail)
        r = c * c / (z * z)
        return r if r < T else T
    y0 = 0.5 * q * q
    while True:
        y = y0 - log(draw(s))
        if draw(s) <= sqrt(y0 / y):
            r = c * c / (2.0 * y)
            return r if r < T else T


cdef double two_levy_grid(double a, double b, double T, double u) nogil:
    # inverse-CDF on a midpoint grid (rarely used safety net)
    cdef int n = 2048, i
    cdef double h = T / n, rho, lf, mx = -INFINITY, tot = 0.0, acc = 0.0, w
    for i in range(n):
        rho = (i + 0.5) * h
        lf = log(a) - 1.5 * log(rho) - a * a / (2 * rho) + log(b) - 1.5 * log(T - rho) - b * b / (2 * (T - rho))
        if lf > mx:
            mx = lf
    for i in range(n):
        rho = (i + 0.5) * h
        lf = log(a) - 1.5 * log(rho) - a * a / (2 * rho) + log(b) - 1.5 * log(T - rho) - b * b / (2 * (T - rho))
        tot += exp(lf - mx)
    for i in range(n):
        rho = (i + 0.5) * h
        lf = log(a) - 1.5 * log(rho) - a * a / (2 * rho) + log(b) - 1.5 * log(T - rho) - b * b / (2 * (T - rho))
        w = exp(lf - mx) / tot
        if acc + w >= u:
            return (i + (u - acc) / w) * h
        acc += w
    return T - 0.5 * h


cdef double c_two_levy(double a, double b, double T, Stream* s) nogil:
    cdef double half, ra, rb, log_sa, log_sb, log_za, log_zb, wa, wb, m, pa
    cdef double rho, ua, ub, la, lb, x1, x2, log_h
    cdef int it
    if T <= 0.0 or a <= 0.0:
        return 0.0
    if b <= 0.0:
        return T
    half = 0.5 * T
    ra = a * a / 3.0
    if ra < half:
        ra = half
    if ra > T:
        ra = T
    rb = b * b / 3.0
    if rb < half:
        rb = half
    if rb > T:
        rb = T
    log_sa = log_levy(a, ra)
    log_sb = log_levy(b, rb)
    log_za = c_log_erfc(a / sqrt(2.0 * T))
    log_zb = c_log_erfc(b / sqrt(2.0 * T))
    wa = log_sb + log_za
    wb = log_sa + log_zb
    m = wa if wa > wb else wb
    pa = exp(wa - m) / (exp(wa - m) + exp(wb - m))
    for it in range(1000):
        if draw(s) < pa:
            ua = levy_trunc(a, T, s)
            ub = T - ua
        else:
            ub = levy_trunc(b, T, s)
            ua = T - ub
        if ua <= 0.0 or ub <= 0.0:
            draw(s)
            continue
        rho = ua if ua < ub else T - ub
        la = log_levy(a, ua)
        lb = log_levy(b, ub)
        x1 = log_sb + la
        x2 = log_sa + lb
        log_h = (x1 if x1 > x2 else x2) + log1p(exp(-fabs(x1 - x2)))
        if log(draw(s)) <= la + lb - log_h:
            return rho
    return two_levy_grid(a, b, T, draw(s))


def two_levy(double a, double b, double T, unsigned long long key, unsigned long long tag, unsigned long long start=0):
    cdef Stream s
    s.base = base_of(key, tag)
    s.k = start
    return c_two_levy(a, b, T, &s)


# ---------------------------------------------------------------- growth

def grow(uint64_t[::1] key, int64_t[::1] parent, int64_t[::1] child,
         double[::1] t_birth, double[::1] x_birth,
         double[::1] t_anchor, double[::1] x_anchor,
         double[::1] t_end, double[::1] x_end, uint8_t[::1] fixed,
         int64_t start, int64_t n, double horizon):
    """Grow open records breadth-first from ``start``.

    Returns (next_index, n).  Stops early when the arrays are full so the
    caller can enlarge them and resume.
    """
    cdef int64_t cap = key.shape[0]
    cdef int64_t i = start, c
    cdef uint64_t k, bl, bs
    cdef double L, end, dt, z
    with nogil:
        while i < n:
            if fixed[i]:
                i += 1
                continue
            if n + 2 > cap:
                break
            k = key[i]
            bl = base_of(k, TAG_LIFE)
            L = -log(u01(bl, 0))
            end = t_anchor[i] + L
            if end >= horizon:
                end = horizon
            dt = end - t_anchor[i]
            bs = base_of(k, TAG_STEP)
            z = sqrt(-2.0 * log(u01(bs, 0))) * cos(2.0 * M_PI * u01(bs, 1))
            t_end[i] = end
            x_end[i] = x_anchor[i] + sqrt(dt) * z
            if end < horizon:
                for c in range(2):
                    key[n] = mix(k ^ ((c + 1) * C_CHILD))
                    parent[n] = i
                    child[n] = -1
                    t_birth[n] = end
                    x_birth[n] = x_end[i]
                    t_anchor[n] = end
                    x_anchor[n] = x_end[i]
                    fixed[n] = 0
                    n += 1
                child[i] = n - 2
            else:
                child[i] = -1
            i += 1
    return i, n


# ---------------------------------------------------------------- summaries

def summarize(uint64_t[::1] key, double[::1] t_birth,
              double[::1] t_anchor, double[::1] x_anchor,
              double[::1] t_end, double[::1] x_end, uint8_t[::1] skip,
              int64_t n, double horizon, double y, double beta,
              double theta, double level, double line_slope, double line_icpt,
              bint do_min):
    """One pass over a tree.

    Leaves (t_end == horizon) give population, level count at ``y``, the
    additive martingale at ``beta`` and the maximum.  With ``do_min`` the
    V-process (V = c r - theta X, c = theta^2/2 + 1) is minimised piecewise
    over records not flagged in ``skip``, the earliest passage below
    ``level`` is located, and the line crossing is decided in X-space.
    """
    cdef int64_t i, pop = 0, cnt = 0, imin = -1, itau = -1
    cdef double W = 0.0, M = -INFINITY, vmin = INFINITY, tau = INFINITY
    cdef double cc = 0.5 * theta * theta + 1.0
    cdef double var_unit = theta * theta
    cdef double shift = (0.5 * beta * beta + 1.0) * horizon
    cdef double t0, t1, x0, x1, v0, v1, dt, u, d, m, rho_m, rho, e0, e1
    cdef bint line_hit = False
    cdef Stream s
    cdef uint64_t bm
    with nogil:
        for i in range(n):
            if t_end[i] >= horizon:
                pop += 1
                x1 = x_end[i]
                if x1 >= y:
                    cnt += 1
                W += exp(beta * x1 - shift)
                if x1 > M:
                    M = x1
            if not do_min or skip[i]:
                continue
            t0 = t_anchor[i]
            t1 = t_end[i]
            x0 = x_anchor[i]
            x1 = x_end[i]
            dt = t1 - t0
            v0 = cc * t0 - theta * x0
            v1 = cc * t1 - theta * x1
            bm = base_of(key[i], TAG_MIN)
            u = u01(bm, 0)
            d = v0 - v1
            m = 0.5 * (v0 + v1 - sqrt(d * d - 2.0 * var_unit * dt * log(u)))
            if m < vmin:
                vmin = m
                imin = i
            # line crossing in X-space with the same uniform
            e0 = line_slope * t0 + line_icpt - x0
            e1 = line_slope * t1 + line_icpt - x1
            if e0 <= 0.0 or e1 <= 0.0:
                line_hit = True
            elif dt > 0.0 and u <= exp(-2.0 * e0 * e1 / dt):
                line_hit = True
            # earliest passage below level
            if m <= level and t0 < tau:
                if v0 <= level:
                    rho = 0.0
                else:
                    s.base = base_of(key[i], TAG_ARGMIN)
                    s.k = 0
                    rho_m = c_two_levy((v0 - m) / theta, (v1 - m) / theta, dt, &s)
                    s.base = base_of(key[i], TAG_HIT)
                    s.k = 0
                    rho = c_two_levy((v0 - level) / theta, (level - m) / theta, rho_m, &s)
                if t0 + rho < tau:
                    tau = t0 + rho
                    itau = i
    return pop, cnt, W, M, vmin, imin, tau, itau, line_hit
