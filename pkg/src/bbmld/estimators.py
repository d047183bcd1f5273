"""Naive and importance-sampled estimators, tail fits and conditioned statistics."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import observables as O
from . import params as P
from . import rng as R
from .estimate import Estimate, batch_means_stderr, binomial_estimate, mean_estimate
from .parallel import map_replicas
from .simulator import DEFAULT_MAX_PARTICLES, SimConfig, simulate
from .spine import DegenerateLevel, passage_matches, sample_spine_fpt

__all__ = ["Estimate", "naive_ldp", "ldp_window_estimator", "spine_ldp", "martingale_tail",
           "conditioned_stats", "hill", "pareto_ks", "trend_e_it", "TailFit",
           "ConditionedSummary", "InsufficientTail", "EmptySample", "LowESSWarning"]


class InsufficientTail(RuntimeError):
    pass


class EmptySample(ValueError):
    pass


class LowESSWarning(UserWarning):
    pass


@dataclass
class TailFit:
    kappa_hat: float
    c_w_hat: float
    fit_window: tuple
    n: int
    mean_w: float = math.nan
    frac_positive: float = math.nan
    envelope_max: float = math.nan


@dataclass
class ConditionedSummary:
    pareto_index_hat: float
    overlap_mean: float
    overlap_var: float
    jump_pos_mean: float
    jump_pos_var: float
    max_mean: float
    max_var: float
    s_argmin_var: float
    effective_sample_size: float
    n: int = 0
    p_event: float = math.nan
    p_s_tau_far: float = math.nan
    pareto_ks_pvalue: float = math.nan
    n_pairs: int = 0
    p_argmin_near_horizon: float = math.nan
    warnings: list = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- replica workers

PLAIN_COLS = ("count", "pop", "W", "M", "I_min", "argmin", "tau", "R", "XR", "pair_ok", "single")
SPINE_COLS = ("reached", "tau_w", "glob", "count", "M", "I_min", "argmin", "R", "XR",
              "pair_ok", "single", "pop")


def _pair_cols(tree, t, pair_level):
    if pair_level is None:
        return (math.nan, math.nan, 0.0, 0.0)
    leaves = tree.leaves()
    members = leaves[tree.x_end[leaves] >= pair_level]
    if members.size == 0:
        return (math.nan, math.nan, 0.0, 0.0)
    u1 = R.uniform(tree.root_key, R.TAG_PAIR, 0)
    u2 = R.uniform(tree.root_key, R.TAG_PAIR, 1)
    lp = O.pair_from_level_set(tree, members, t, u1, u2)
    return (lp.mrca_time, lp.mrca_position, 1.0, float(lp.u1 == lp.u2))


def plain_chunk(lo, hi, *, seed, t, y_level=math.inf, beta=0.0, theta=None, level=-math.inf,
                pair_level=None, stream=0, max_particles=DEFAULT_MAX_PARTICLES):
    out = np.full((hi - lo, len(PLAIN_COLS)), math.nan)
    do_min = theta is not None
    tree = None
    for r in range(lo, hi):
        tree = simulate(SimConfig(t, seed, r, max_particles), stream, workspace=tree)
        s = O.summarize_tree(tree, theta if do_min else 1.0, y=y_level, beta=beta,
                             level=level, do_min=do_min)
        row = [s.level_count, s.population, s.W, s.M]
        if do_min:
            row += [s.I_min, s.argmin_time, math.nan if s.tau is None else s.tau]
        else:
            row += [math.nan, math.nan, math.nan]
        row += list(_pair_cols(tree, t, pair_level))
        out[r - lo] = row
    return out


def spine_chunk(lo, hi, *, seed, x, a, t, z, y_level, stream, pair_level=None,
                max_particles=DEFAULT_MAX_PARTICLES):
    pr = P.derive(x, a)
    out = np.zeros((hi - lo, len(SPINE_COLS)))
    for r in range(lo, hi):
        real = sample_spine_fpt(pr, t, z, SimConfig(t, seed, r, max_particles), stream=stream)
        row = out[r - lo]
        row[1] = real.stop_time
        if real.tree is None:
            row[4:9] = math.nan
            continue
        tree = real.tree
        s = O.summarize_tree(tree, pr.theta, y=y_level, level=real.level)
        glob = passage_matches(None if s.tau is None else (s.tau, s.tau_id), real.stop_time)
        row[0] = 1.0
        row[2] = float(glob)
        row[3] = s.level_count
        row[4] = s.M
        row[5] = s.I_min
        row[6] = s.argmin_time
        row[7:11] = _pair_cols(tree, t, pair_level)
        row[11] = s.population
    return out


def _cols(arr, names):
    return {k: arr[:, i] for i, k in enumerate(names)}


# ---------------------------------------------------------------- naive

def threshold(params: P.LdpParams, t: float, y: float) -> float:
    """Level-set size threshold y e^{a t} / sqrt(t)."""
    return y * math.exp(params.a * t) / math.sqrt(t)


def naive_counts(t, x, n, seed, workers=1, stream=0, max_particles=DEFAULT_MAX_PARTICLES):
    arr = map_replicas(plain_chunk, n, workers, seed=seed, t=t, y_level=x * t,
                       stream=stream, max_particles=max_particles)
    return arr[:, 0]


def naive_ldp(x, a, t, y, n, cfg: SimConfig | None = None, workers=1, counts=None) -> Estimate:
    """Empirical frequency of {L_t(xt) >= y e^{at}/sqrt(t)} with binomial stderr."""
    pr = P.derive(x, a)
    seed = cfg.seed if cfg is not None else 0
    if counts is None:
        mp = cfg.max_particles if cfg is not None else DEFAULT_MAX_PARTICLES
        counts = naive_counts(t, x, n, seed, workers, max_particles=mp)
    k = int(np.count_nonzero(counts >= threshold(pr, t, y)))
    return binomial_estimate(k, len(counts), "naive", seed)


# ---------------------------------------------------------------- spine windows

def window_stream(z: float) -> int:
    return 1 + int(math.floor(z * 16 + 0.5)) + (1 << 12)


@dataclass
class WindowSamples:
    z: float
    method: str
    contrib: np.ndarray  # per replica term of the window estimator
    records: dict
    tau_ref: np.ndarray
    n: int
    accept: float = math.nan


def _window_samples(pr, t, y, z, n, seed, workers, pair=False, pool=None,
                    max_particles=DEFAULT_MAX_PARTICLES) -> WindowSamples:
    psis = pr.dpsi_kappa * pr.p * t
    thr = threshold(pr, t, y)
    zp = z + 1.0
    level = -psis + zp
    pair_level = pr.x * t if pair else None
    if z > psis:
        # I + psi's <= psi's < z: the window is empty
        return WindowSamples(z, "empty", np.zeros(1), {}, np.zeros(0), 1)
    if level >= 0.0:
        if pool is None:
            pool = naive_pool(pr, t, n, seed, workers, pair, max_particles)
        c = pool
        g = c["I_min"] + psis
        ind = (c["count"] >= thr) & (g >= z) & (g < zp)
        return WindowSamples(z, "naive-window", ind.astype(float), c, np.zeros(len(ind)), len(ind))
    arr = map_replicas(spine_chunk, n, workers, seed=seed, x=pr.x, a=pr.a, t=t, z=zp,
                       y_level=pr.x * t, stream=window_stream(z), pair_level=pair_level,
                       max_particles=max_particles)
    c = _cols(arr, SPINE_COLS)
    g = c["I_min"] + psis
    with np.errstate(invalid="ignore"):
        ind = (c["reached"] > 0) & (c["glob"] > 0) & (c["count"] >= thr) & (g >= z) & (g < zp)
    w = math.exp(pr.kappa * level)
    return WindowSamples(z, "spine", np.where(ind, w, 0.0), c, c["tau_w"], n,
                         accept=float(c["glob"].mean()))


def naive_pool(pr, t, n, seed, workers=1, pair=False, max_particles=DEFAULT_MAX_PARTICLES):
    psis = pr.dpsi_kappa * pr.p * t
    arr = map_replicas(plain_chunk, n, workers, seed=seed, t=t, y_level=pr.x * t, beta=pr.theta,
                       theta=pr.theta, level=-psis, pair_level=pr.x * t if pair else None,
                       stream=1, max_particles=max_particles)
    return _cols(arr, PLAIN_COLS)


def ldp_window_estimator(params: P.LdpParams, t, y, z, n, cfg: SimConfig, workers=1) -> Estimate:
    """P(L_t(xt) >= y e^{at}/sqrt(t), I + psi'(kappa) p t in [z, z+1)).

    Spine replicas are stopped when their V-path reaches -psi'(kappa) p t + z + 1
    and weighted by e^{kappa * level} on {global first passage, window, event}.
    Windows whose stopping level is not below 0 fall back to plain sampling.
    """
    ws = _window_samples(params, t, y, z, n, cfg.seed, workers, max_particles=cfg.max_particles)
    return _window_estimate(ws, cfg.seed)


def _window_estimate(ws: WindowSamples, seed) -> Estimate:
    if ws.method == "empty":
        return Estimate(0.0, 0.0, 1, "empty", seed)
    x = ws.contrib
    if ws.method == "naive-window":
        return binomial_estimate(int(x.sum()), x.size, ws.method, seed)
    return mean_estimate(x, ws.method, seed)


@dataclass
class SpineLdpResult:
    windows: list  # (z, Estimate, acceptance)
    combined: Estimate
    tail_bound: float
    acceptance: float
    samples: list = field(default_factory=list)


def spine_ldp(params: P.LdpParams, t, y, z_min, z_max, n_per_window, cfg: SimConfig,
              workers=1, pair=False, keep_samples=False) -> SpineLdpResult:
    """Sum of unit-window estimates over z in [z_min, z_max)."""
    zs = list(np.arange(z_min, z_max, 1.0))
    pool = None
    psis = params.dpsi_kappa * params.p * t
    if any((-psis + z + 1.0 >= 0.0) and z <= psis for z in zs):
        pool = naive_pool(params, t, n_per_window, cfg.seed, workers, pair, cfg.max_particles)
    samples = [_window_samples(params, t, y, float(z), n_per_window, cfg.seed, workers, pair, pool,
                               cfg.max_particles) for z in zs]
    return _combine(params, t, z_min, samples, cfg.seed, keep_samples)


def _combine(params, t, z_min, samples, seed, keep_samples=True) -> SpineLdpResult:
    wins = []
    tot, var = 0.0, 0.0
    acc_num, acc_den = 0.0, 0
    for ws in samples:
        est = _window_estimate(ws, seed)
        wins.append((float(ws.z), est, ws.accept))
        tot += est.value
        var += est.stderr**2
        if ws.method == "spine":
            acc_num += ws.accept * ws.n
            acc_den += ws.n
    n_total = sum(w[1].n for w in wins)
    combined = Estimate(tot, math.sqrt(var), max(n_total, 1), "spine", seed)
    # P(I <= -psi's + z_min) <= e^{kappa(-psi's + z_min)} bounds the missing lower windows
    psis = params.dpsi_kappa * params.p * t
    tail = math.exp(params.kappa * min(-psis + z_min, 0.0))
    acc = acc_num / acc_den if acc_den else math.nan
    return SpineLdpResult(wins, combined, tail, acc, samples if keep_samples else [])


def truncate_result(res: SpineLdpResult, params: P.LdpParams, t, n: int) -> SpineLdpResult:
    """The result a run with ``n`` replicas per window would have produced.

    Replica keys depend only on (seed, replica, stream), so the first ``n``
    replicas of a larger run are exactly those of the smaller run.
    """
    if not res.samples:
        raise ValueError("result was computed without keep_samples")
    out = []
    for ws in res.samples:
        if ws.method == "empty":
            out.append(ws)
            continue
        if n > ws.n:
            raise ValueError(f"cannot truncate {ws.n} replicas to {n}")
        rec = {k: v[:n] for k, v in ws.records.items()}
        acc = float(rec["glob"].mean()) if ws.method == "spine" else math.nan
        out.append(WindowSamples(ws.z, ws.method, ws.contrib[:n], rec, ws.tau_ref[:n], n, acc))
    z_min = min(ws.z for ws in res.samples)
    return _combine(params, t, z_min, out, res.combined.seed)


# ---------------------------------------------------------------- tails

def weighted_mean_var(x, w):
    x = np.asarray(x, float)
    w = np.asarray(w, float)
    sw = w.sum()
    if sw <= 0:
        return math.nan, math.nan
    m = float(np.dot(w, x) / sw)
    return m, float(np.dot(w, (x - m) ** 2) / sw)


def ess(w) -> float:
    w = np.asarray(w, float)
    s2 = float(np.dot(w, w))
    return float(w.sum() ** 2 / s2) if s2 > 0 else 0.0


def hill(samples, weights=None, k=None) -> float:
    """Weighted Hill estimator of a Pareto index over the top-k order statistics."""
    x = np.asarray(samples, float)
    if x.size == 0:
        raise EmptySample("no samples")
    w = np.ones_like(x) if weights is None else np.asarray(weights, float)
    keep = w > 0
    x, w = x[keep], w[keep]
    if x.size < 2:
        raise EmptySample("need at least two positive-weight samples")
    order = np.argsort(-x, kind="stable")
    if k is None:
        # top 10% of the weight mass, i.e. threshold at the weighted 0.9 quantile
        frac = np.cumsum(w[order]) / w.sum()
        k = int(np.searchsorted(frac, 0.1 * (1 + 1e-12), side="right"))
        k = max(k, min(50, x.size - 1))
    k = int(min(max(k, 1), x.size - 1))
    top = order[:k]
    thr = x[order[k]]
    if thr <= 0:
        raise ValueError("Hill threshold must be positive")
    lg = np.log(x[top] / thr)
    den = float(np.dot(w[top], lg))
    return float(w[top].sum() / den) if den > 0 else math.inf


def pareto_ks(samples, weights=None, index=1.0):
    """Weighted KS distance to Pareto(index) on [1, inf) and its p-value at n_eff."""
    x = np.asarray(samples, float)
    if x.size == 0:
        raise EmptySample("no samples")
    w = np.ones_like(x) if weights is None else np.asarray(weights, float)
    keep = w > 0
    x, w = x[keep], w[keep]
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cw = np.cumsum(w) / w.sum()
    prev = np.concatenate(([0.0], cw[:-1]))
    F = np.where(x >= 1.0, 1.0 - np.power(np.maximum(x, 1.0), -float(index)), 0.0)
    D = float(max(np.max(cw - F), np.max(F - prev)))
    n_eff = ess(w)
    n_int = max(int(round(n_eff)), 1)
    return D, float(stats.kstwo.sf(D, n_int))


def martingale_tail(theta, T, n, cfg: SimConfig | None = None, workers=1, W=None,
                    lo_q=0.9, min_exceed=200, n_grid=24) -> TailFit:
    """Fit the power-law tail of W_T(theta).

    Window: from the ``lo_q`` quantile up to the largest y that still has
    ``min_exceed`` exceedances.
    """
    if not (0 < theta < math.sqrt(2)):
        raise ValueError("theta must lie in (0, sqrt(2))")
    seed = cfg.seed if cfg is not None else 0
    if W is None:
        mp = cfg.max_particles if cfg is not None else DEFAULT_MAX_PARTICLES
        arr = map_replicas(plain_chunk, n, workers, seed=seed, t=T, beta=theta, stream=2,
                           max_particles=mp)
        W = arr[:, 2]
    W = np.sort(np.asarray(W, float))
    nW = W.size
    if nW < min_exceed + 1:
        raise InsufficientTail(f"only {nW} samples, need more than {min_exceed}")
    y_hi = W[nW - min_exceed]
    y_lo = float(np.quantile(W, lo_q))
    if not y_lo < y_hi:
        raise InsufficientTail("fewer than %d exceedances above the lower fit bound" % min_exceed)
    ys = np.exp(np.linspace(math.log(y_lo), math.log(y_hi), n_grid))
    tail = (nW - np.searchsorted(W, ys, side="right")) / nW
    slope, _ = np.polyfit(np.log(ys), np.log(tail), 1)
    kap = 2.0 / theta**2
    env = ys**kap * tail
    return TailFit(float(-slope), float(np.median(env)), (float(y_lo), float(y_hi)), int(nW),
                   float(W.mean()), float(np.mean(W > 0)), float(env.max()))


# ---------------------------------------------------------------- conditioned

def conditioned_stats(params: P.LdpParams, t, y, z_grid, n_per_z, cfg: SimConfig, workers=1,
                      result: SpineLdpResult | None = None, hill_k=None) -> ConditionedSummary:
    """Self-normalised statistics of the tree given {L_t(xt) >= y e^{at}/sqrt(t)}."""
    if result is None:
        zs = list(z_grid)
        result = spine_ldp(params, t, y, min(zs), max(zs) + 1, n_per_z, cfg, workers,
                           pair=True, keep_samples=True)
    pt = params.p * t
    s = pt
    vt = params.v_speed * t
    cols = {k: [] for k in ("w", "count", "R", "XR", "ok", "single", "M", "argmin", "tau")}
    for ws in result.samples:
        if ws.method == "empty":
            continue
        c = ws.records
        keep = ws.contrib > 0
        cols["w"].append(ws.contrib[keep] / ws.n)
        for k, src in (("count", "count"), ("R", "R"), ("XR", "XR"), ("ok", "pair_ok"),
                       ("single", "single"), ("M", "M"), ("argmin", "argmin")):
            cols[k].append(c[src][keep])
        cols["tau"].append(ws.tau_ref[keep])
    d = {k: np.concatenate(v) if v else np.zeros(0) for k, v in cols.items()}
    w = d["w"]
    warn = []
    if w.size == 0:
        raise EmptySample("no replica realised the event")
    e = ess(w)
    if e < 100:
        msg = f"effective sample size {e:.1f} < 100"
        warnings.warn(msg, LowESSWarning)
        warn.append(msg)
    pareto = math.sqrt(t) * math.exp(-params.a * t) * d["count"] / y
    try:
        idx = hill(pareto, w, hill_k)
        ksp = pareto_ks(pareto, w, 2.0 / params.theta**2)[1]
    except (EmptySample, ValueError):
        idx, ksp = math.nan, math.nan
    pm = (d["ok"] > 0) & (d["single"] == 0)
    ov = (d["R"][pm] - pt) / math.sqrt(pt)
    jp = (d["XR"][pm] - params.b * pt) / math.sqrt(pt)
    om, ovar = weighted_mean_var(ov, w[pm])
    jm, jvar = weighted_mean_var(jp, w[pm])
    mm, mvar = weighted_mean_var((d["M"] - vt) / math.sqrt(t), w)
    _, svar = weighted_mean_var((d["argmin"] - s) / math.sqrt(s), w)
    far = np.abs(d["argmin"] - d["tau"]) > 5.0
    p_far = float(np.dot(w, far) / w.sum())
    # the argmin is taken over [0, t]; mass near t signals truncation
    near = float(np.dot(w, d["argmin"] > t - 1.0) / w.sum())
    if near > 0.01:
        msg = f"argmin within 1 of the horizon with weight {near:.3f}"
        warnings.warn(msg)
        warn.append(msg)
    return ConditionedSummary(idx, om, ovar, jm, jvar, mm, mvar, svar, e, int(w.size),
                              float(result.combined.value), p_far, ksp, int(pm.sum()), near, warn)


# ---------------------------------------------------------------- trend

def trend_e_it(params: P.LdpParams, t_list, y, method="naive", cfg: SimConfig | None = None,
               n=10000, workers=1, rate=None, counts_by_t=None, z_range=(-6, 6)):
    """Rows (t, estimate, stderr, scaled = e^{I t} P, lo, hi, ratio to previous)."""
    t_list = list(t_list)
    if any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise ValueError("t_list must be increasing")
    cfg = cfg or SimConfig(max(t_list))
    I = params.rate_I if rate is None else rate
    rows = []
    prev = None
    for t in t_list:
        if method == "naive":
            counts = None if counts_by_t is None else counts_by_t.get(t)
            est = naive_ldp(params.x, params.a, t, y, n, cfg, workers, counts=counts)
        else:
            est = spine_ldp(params, t, y, z_range[0], z_range[1], n, cfg, workers).combined
        f = math.exp(I * t)
        sc = est.value * f
        row = dict(t=t, estimate=est.value, stderr=est.stderr, scaled=sc,
                   lo=(est.value - 1.96 * est.stderr) * f, hi=(est.value + 1.96 * est.stderr) * f,
                   ratio=(sc / prev if prev else math.nan), n=est.n)
        rows.append(row)
        prev = sc
    return rows
