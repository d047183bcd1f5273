"""Path functionals of a simulated tree.

V_r(u) = (theta^2/2 + 1) r - theta X_r(u) is the linearly transformed path.
Its minimum over each stored piece is drawn from the exact bridge-minimum law
with one uniform per piece (stream MIN), so the minimum, the first passage
of any level and the line-crossing flag are mutually consistent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import bridge, kernels
from . import rng as R
from .params import LdpParams
from .simulator import ParticleTree, alive_at, position_at, positions_at


class EmptyLevelSet(ValueError):
    pass


@dataclass
class MinRecord:
    value_I: float
    argmin_time: float
    minimizer_id: int
    # argmin is sampled from its exact conditional law, so no grid error
    resolution: float = 0.0


@dataclass
class LevelPair:
    u1: int
    u2: int
    mrca_time: float
    mrca_position: float


@dataclass
class TreeSummary:
    population: int
    level_count: int
    W: float
    M: float
    I_min: float = math.inf
    minimizer: int = -1
    argmin_time: float = math.nan
    tau: Optional[float] = None
    tau_id: int = -1
    line_hit: bool = False


def _theta_of(params_or_theta) -> float:
    if isinstance(params_or_theta, LdpParams):
        return params_or_theta.theta
    return float(params_or_theta)


# ---------------------------------------------------------------- per piece (scalar)

class _Piece:
    __slots__ = ("pid", "j", "t0", "t1", "v0", "v1", "cond", "key", "theta", "lvl", "u", "m")

    def __init__(self, tree: ParticleTree, pid, j, t0, x0, t1, x1, cond, theta):
        cc = 0.5 * theta * theta + 1.0
        self.pid = pid
        self.j = j
        self.t0 = t0
        self.t1 = t1
        self.v0 = cc * t0 - theta * x0
        self.v1 = cc * t1 - theta * x1
        self.cond = cond
        self.key = int(tree.key[pid])
        self.theta = theta
        self.lvl = tree.cond_level
        self.u = R.uniform(self.key, R.subtag(R.TAG_MIN, j), 0)
        dt = t1 - t0
        if cond:
            d0 = max((self.v0 - self.lvl) / theta, 0.0)
            d1 = max((self.v1 - self.lvl) / theta, 0.0)
            self.m = self.lvl + theta * bridge.bridge_min_above(d0, d1, dt, self.u)
        else:
            self.m = bridge.bridge_min(self.v0, self.v1, theta * theta * dt, self.u)

    def argmin(self) -> float:
        th = self.theta
        rho = kernels.two_levy((self.v0 - self.m) / th, (self.v1 - self.m) / th,
                               self.t1 - self.t0, self.key, R.subtag(R.TAG_ARGMIN, self.j))
        return self.t0 + rho

    def hit(self, level: float) -> Optional[float]:
        if self.cond:
            # the conditioned path stays above lvl and can touch it only at t1
            tol = 1e-12 * max(1.0, abs(self.lvl))
            if level <= self.lvl + tol:
                return self.t1 if self.v1 <= self.lvl + tol else None
        if self.m > level:
            return None
        if self.v0 <= level:
            return self.t0
        th = self.theta
        rho_m = self.argmin() - self.t0
        rho = kernels.two_levy((self.v0 - level) / th, (level - self.m) / th, rho_m,
                               self.key, R.subtag(R.TAG_HIT, self.j))
        return self.t0 + rho


def _special_pieces(tree: ParticleTree, theta: float, mask: np.ndarray):
    if tree.cond_until and abs(theta - tree.cond_theta) > 1e-12:
        raise ValueError("conditioned spine pieces require theta equal to the spine tilt")
    out = []
    for pid in np.nonzero(mask)[0]:
        for (j, t0, x0, t1, x1, cond) in tree.pieces(int(pid)):
            out.append(_Piece(tree, int(pid), j, t0, x0, t1, x1, cond, theta))
    return out


def _ordinary_argmin(tree: ParticleTree, pid: int, theta: float, vmin: float) -> float:
    cc = 0.5 * theta * theta + 1.0
    t0 = float(tree.t_anchor[pid])
    t1 = float(tree.t_end[pid])
    v0 = cc * t0 - theta * float(tree.x_anchor[pid])
    v1 = cc * t1 - theta * float(tree.x_end[pid])
    rho = kernels.two_levy((v0 - vmin) / theta, (v1 - vmin) / theta, t1 - t0,
                           int(tree.key[pid]), R.TAG_ARGMIN)
    return t0 + rho


def summarize_tree(tree: ParticleTree, theta: float = 1.0, y: float = math.inf,
                   beta: float = 0.0, level: float = -math.inf,
                   line_level: float = -math.inf, do_min: bool = True,
                   want_argmin: bool = True) -> TreeSummary:
    """All horizon-time and path functionals of one tree in one pass.

    ``level`` is the V-level whose first passage is located; ``line_level``
    is the V-level of the straight line tested in X-space.
    """
    mask = tree.special_mask() if do_min else np.zeros(tree.n, np.uint8)
    cc = 0.5 * theta * theta + 1.0
    res = kernels.summarize(tree.key, tree.t_birth, tree.t_anchor, tree.x_anchor,
                            tree.t_end, tree.x_end, mask, tree.n, tree.horizon,
                            y, beta, theta, level, cc / theta, -line_level / theta,
                            bool(do_min))
    pop, cnt, W, M, vmin, imin, tau, itau, line_hit = res
    out = TreeSummary(int(pop), int(cnt), float(W), float(M))
    if not do_min:
        return out
    winner_piece = None
    for pc in _special_pieces(tree, theta, mask):
        if pc.m < vmin:
            vmin, imin, winner_piece = pc.m, pc.pid, pc
        h = pc.hit(level)
        if h is not None and h < tau:
            tau, itau = h, pc.pid
        if pc.m <= line_level:
            line_hit = True
    out.I_min = float(vmin)
    out.minimizer = int(imin)
    if want_argmin and imin >= 0:
        if winner_piece is not None:
            out.argmin_time = winner_piece.argmin()
        else:
            out.argmin_time = _ordinary_argmin(tree, imin, theta, vmin)
    if math.isfinite(tau):
        out.tau = float(tau)
        out.tau_id = int(itau)
    out.line_hit = bool(line_hit)
    return out


# ---------------------------------------------------------------- public functionals

def level_set_count(tree: ParticleTree, t: float, y: float) -> int:
    _, xs = positions_at(tree, t)
    return int(np.count_nonzero(xs >= y))


def additive_martingale(tree: ParticleTree, t: float, beta: float) -> float:
    _, xs = positions_at(tree, t)
    return float(np.exp(beta * xs - (0.5 * beta * beta + 1.0) * t).sum())


def max_position(tree: ParticleTree, t: float) -> float:
    _, xs = positions_at(tree, t)
    return float(xs.max())


def population(tree: ParticleTree, t: float) -> int:
    return int(alive_at(tree, t).size)


def _knot_all_at(tree: ParticleTree, s: float):
    for pid in alive_at(tree, s):
        if tree.t_birth[pid] < s < tree.t_end[pid]:
            position_at(tree, int(pid), s)


def v_process_min(tree: ParticleTree, params, rng=None, upto: Optional[float] = None) -> MinRecord:
    """Global minimum of V over [0, horizon] (or over [0, upto])."""
    theta = _theta_of(params)
    if tree.horizon == 0.0 or tree.n == 0:
        return MinRecord(0.0, 0.0, 0)
    if upto is None or upto >= tree.horizon:
        s = summarize_tree(tree, theta)
        return MinRecord(s.I_min, s.argmin_time, s.minimizer)
    _knot_all_at(tree, upto)
    best = (math.inf, None)
    for pid in np.nonzero(tree.t_birth[: tree.n] < upto)[0]:
        for (j, t0, x0, t1, x1, cond) in tree.pieces(int(pid)):
            if t1 <= upto + 1e-15:
                pc = _Piece(tree, int(pid), j, t0, x0, t1, x1, cond, theta)
                if pc.m < best[0]:
                    best = (pc.m, pc)
    pc = best[1]
    return MinRecord(pc.m, pc.argmin(), pc.pid)


def first_passage_level(tree: ParticleTree, theta: float, level: float):
    """Earliest (time, particle) at which some V-path reaches ``level``."""
    if level >= 0.0:
        return (0.0, 0)
    s = summarize_tree(tree, theta, level=level, want_argmin=False)
    if s.tau is None:
        return None
    return (s.tau, s.tau_id)


def first_passage_tau(tree: ParticleTree, params: LdpParams, t: float, z: float, rng=None):
    level = params.v_level(t, z)
    return first_passage_level(tree, params.theta, level)


def hits_line(tree: ParticleTree, params: LdpParams, t: float) -> bool:
    line_level = -params.dpsi_kappa * params.p * t
    if line_level >= 0.0:
        return True
    s = summarize_tree(tree, params.theta, line_level=line_level, want_argmin=False)
    return s.line_hit


# ---------------------------------------------------------------- genealogy

def ancestor_at(tree: ParticleTree, ids, r: float) -> np.ndarray:
    """Ancestor alive at time r of each particle in ``ids``."""
    a = np.array(ids, dtype=np.int64, copy=True)
    tb = tree.t_birth
    par = tree.parent
    while True:
        m = tb[a] > r
        if not m.any():
            return a
        a[m] = par[a[m]]


def mrca(tree: ParticleTree, u: int, v: int) -> int:
    anc = set()
    a = int(u)
    while a >= 0:
        anc.add(a)
        a = int(tree.parent[a])
    b = int(v)
    while b not in anc:
        b = int(tree.parent[b])
    return b


def level_set(tree: ParticleTree, t: float, y: float) -> np.ndarray:
    ids, xs = positions_at(tree, t)
    return ids[xs >= y]


def pair_from_level_set(tree: ParticleTree, members: np.ndarray, t: float, u1: float, u2: float) -> LevelPair:
    k = members.size
    a = int(members[min(int(u1 * k), k - 1)])
    b = int(members[min(int(u2 * k), k - 1)])
    if a == b:
        # degenerate pair: convention R = t
        return LevelPair(a, b, float(t), float(position_at(tree, a, t)))
    c = mrca(tree, a, b)
    return LevelPair(a, b, float(tree.t_end[c]), float(tree.x_end[c]))


def sample_level_pair(tree: ParticleTree, t: float, y: float, rng=None) -> LevelPair:
    """Two particles drawn uniformly with replacement from the y-level set at t.

    ``rng`` may be an integer counter offset; draws come from the tree's PAIR
    stream.
    """
    members = level_set(tree, t, y)
    if members.size == 0:
        raise EmptyLevelSet(f"no particle above {y!r} at time {t!r}")
    k = 0 if rng is None else int(rng)
    u1 = R.uniform(tree.root_key, R.TAG_PAIR, 2 * k)
    u2 = R.uniform(tree.root_key, R.TAG_PAIR, 2 * k + 1)
    return pair_from_level_set(tree, members, t, u1, u2)


def overlap_share_square(tree: ParticleTree, r: float, beta: float) -> float:
    """sum_v (W-share of the subtree of v alive at r)^2 with W taken at the horizon."""
    leaves = tree.leaves()
    if r <= 0.0:
        return 1.0
    xs = tree.x_end[leaves]
    w = np.exp(beta * (xs - xs.max()))
    anc = ancestor_at(tree, leaves, r)
    _, inv = np.unique(anc, return_inverse=True)
    sh = np.bincount(inv, weights=w)
    sh /= sh.sum()
    return float(np.dot(sh, sh))


def w_decomposition(tree: ParticleTree, r: float, beta: float):
    """Both sides of W_T = sum_{v alive at r} e^{beta X_r(v) - (beta^2/2+1) r} W^{(v)}_{T-r}."""
    T = tree.horizon
    leaves = tree.leaves()
    xs = tree.x_end[leaves]
    lhs = float(np.exp(beta * xs - (0.5 * beta * beta + 1.0) * T).sum())
    anc = ancestor_at(tree, leaves, r)
    rhs = 0.0
    for v in np.unique(anc):
        xr = position_at(tree, int(v), r) if tree.t_birth[v] < r < tree.t_end[v] else (
            float(tree.x_birth[v]) if tree.t_birth[v] == r else float(tree.x_end[v]))
        sub = xs[anc == v]
        wv = np.exp(beta * (sub - xr) - (0.5 * beta * beta + 1.0) * (T - r)).sum()
        rhs += math.exp(beta * xr - (0.5 * beta * beta + 1.0) * r) * wv
    return lhs, rhs


# ---------------------------------------------------------------- overlap law

OVERLAP_STREAM = 4
PAIR_STREAM = 5


def _overlap_chunk(lo, hi, *, seed, T, rs, beta, max_particles):
    from .simulator import SimConfig, simulate

    out = np.empty((hi - lo, len(rs)))
    tree = None
    for i in range(lo, hi):
        tree = simulate(SimConfig(T, seed, i, max_particles), OVERLAP_STREAM, workspace=tree)
        out[i - lo] = [overlap_share_square(tree, r, beta) for r in rs]
    return out


def _pair_chunk(lo, hi, *, seed, t, y, max_particles):
    from .simulator import SimConfig, simulate

    out = np.full((hi - lo, 1), np.nan)
    tree = None
    for i in range(lo, hi):
        tree = simulate(SimConfig(t, seed, i, max_particles), PAIR_STREAM, workspace=tree)
        leaves = tree.leaves()
        members = leaves[tree.x_end[leaves] >= y]
        if members.size == 0:
            continue
        u1 = R.uniform(tree.root_key, R.TAG_PAIR, 0)
        u2 = R.uniform(tree.root_key, R.TAG_PAIR, 1)
        out[i - lo, 0] = pair_from_level_set(tree, members, t, u1, u2).mrca_time
    return out


def overlap_limit(params_or_theta, r: float, beta: float, T: float = 10.0, n: int = 2000,
                  seed: int = 0, workers: int = 1, max_particles: int | None = None,
                  diagnostic: bool = False):
    """Monte Carlo estimate of E[sum_v (share of v's subtree in W_infty(beta))^2].

    W_infty is replaced by W_T.  With ``diagnostic`` the same estimate at
    T - 2 is also computed and a warning is issued when the relative drift
    exceeds 2%.  ``params_or_theta`` is accepted for interface symmetry;
    only ``beta`` enters the formula.
    """
    return overlap_limit_curve(beta, [r], T, n, seed, workers, max_particles, diagnostic)[0]


def overlap_limit_curve(beta: float, rs, T: float = 10.0, n: int = 2000, seed: int = 0,
                        workers: int = 1, max_particles: int | None = None,
                        diagnostic: bool = False) -> list:
    """overlap_limit at several r, all evaluated on the same trees."""
    import warnings

    from .estimate import Estimate, mean_estimate
    from .parallel import map_replicas
    from .simulator import DEFAULT_MAX_PARTICLES

    rs = [float(r) for r in rs]
    if not (0.0 <= beta < math.sqrt(2.0)):
        raise ValueError(f"beta={beta!r} must lie in [0, sqrt(2))")
    for r in rs:
        if not (0.0 <= r < T):
            raise ValueError(f"r={r!r} must lie in [0, T={T!r})")
    pos = [r for r in rs if r > 0.0]
    mp = max_particles or DEFAULT_MAX_PARTICLES
    vals = {}
    if pos:
        arr = map_replicas(_overlap_chunk, n, workers, seed=seed, T=T, rs=pos, beta=beta,
                           max_particles=mp)
        vals = {r: arr[:, j] for j, r in enumerate(pos)}
        if diagnostic:
            late = [r for r in pos if r < T - 2.0]
            if late:
                arr2 = map_replicas(_overlap_chunk, n, workers, seed=seed, T=T - 2.0, rs=late,
                                    beta=beta, max_particles=mp)
                for j, r in enumerate(late):
                    m = vals[r].mean()
                    drift = abs(m - arr2[:, j].mean()) / max(m, 1e-300)
                    if drift > 0.02:
                        warnings.warn(f"OL({r:g}) proxy drift {drift:.3f} between T={T:g} and "
                                      f"T-2 exceeds 2%")
    out = []
    for r in rs:
        if r == 0.0:
            # a single root summand whose share is 1
            out.append(Estimate(1.0, 0.0, n, "exact", seed))
        else:
            out.append(mean_estimate(vals[r], "overlap-mc", seed))
    return out


def overlap_pairs(beta: float, t: float, n: int = 2000, seed: int = 0, workers: int = 1,
                  max_particles: int | None = None) -> np.ndarray:
    """R(u1, u2) per replica for a uniform pair from {X_t >= beta t}; NaN if the set is empty."""
    from .parallel import map_replicas
    from .simulator import DEFAULT_MAX_PARTICLES

    return map_replicas(_pair_chunk, n, workers, seed=seed, t=t, y=beta * t,
                        max_particles=max_particles or DEFAULT_MAX_PARTICLES)[:, 0]


def overlap_empirical(beta: float, r: float, t: float, n: int = 2000, seed: int = 0,
                      workers: int = 1, max_particles: int | None = None, pairs=None):
    """P(R(u1, u2) >= r), empty level sets skipped; binomial stderr."""
    from .estimate import binomial_estimate

    if pairs is None:
        pairs = overlap_pairs(beta, t, n, seed, workers, max_particles)
    ok = ~np.isnan(pairs)
    return binomial_estimate(int(np.count_nonzero(pairs[ok] >= r)), int(ok.sum()), "level-pair", seed)
