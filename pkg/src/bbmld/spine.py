"""Spinal change of measure: tilted spine plus independent BBM side trees.

Under the tilted law the spine has drift ``beta`` and branches at rate 2
until the stopping time; at each spine branch one child (chosen uniformly)
carries the spine on, the other roots an ordinary BBM.  After the stopping
time the spine particle behaves like any other particle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import bridge
from . import rng as R
from .params import LdpParams
from .simulator import ParticleTree, SimConfig, empty_tree, grow_tree

FIXED_TIME = "fixed_time"
FIRST_PASSAGE = "first_passage"


class DegenerateLevel(ValueError):
    pass


@dataclass(frozen=True)
class IgParams:
    alpha: float
    nu: float
    sigma2: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.nu > 0 and self.sigma2 > 0):
            raise ValueError("inverse Gaussian parameters must be positive")

    @property
    def mean(self) -> float:
        return self.alpha / self.nu

    @property
    def shape(self) -> float:
        return self.alpha**2 / self.sigma2


def ig_pdf(igp: IgParams, T):
    """alpha/(sigma sqrt(2 pi T^3)) exp(-(alpha - nu T)^2 / (2 sigma^2 T))."""
    T = np.asarray(T, dtype=float)
    s2 = igp.sigma2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = igp.alpha / np.sqrt(2 * np.pi * s2 * T**3) * np.exp(-(igp.alpha - igp.nu * T) ** 2 / (2 * s2 * T))
    return np.where(T > 0, out, 0.0)


def ig_cdf(igp: IgParams, T):
    return bridge.ig_cdf(igp.mean, igp.shape, T)


def ig_sample(igp: IgParams, key: int, k: int = 0) -> float:
    """First passage of a drifted BM, from the keyed IG stream (counter block k)."""
    n1 = R.normal(key, R.TAG_IG, 2 * k)
    u = R.uniform(key, R.TAG_IG, (1 << 40) + k)
    return bridge.ig_sample(igp.mean, igp.shape, n1, u)


def ig_sample_many(igp: IgParams, keys: np.ndarray) -> np.ndarray:
    n1 = R.vnormal(keys, R.TAG_IG, 0)
    u = R.vuniform(keys, R.TAG_IG, 1 << 40)
    mu, lam = igp.mean, igp.shape
    y = n1 * n1
    x = mu + mu * mu * y / (2 * lam) - mu / (2 * lam) * np.sqrt(4 * mu * lam * y + mu * mu * y * y)
    return np.where(u <= mu / (mu + x), x, mu * mu / x)


@dataclass
class SpineRealization:
    tree: Optional[ParticleTree]
    spine_ids: list
    spine_path: list  # (time, position) at each stored spine point
    spine_branch_times: list
    stop_time: float
    tilt_beta: float
    stop_kind: str
    z_offset: float = 0.0
    level: float = 0.0
    weight_log: float = 0.0  # log of the deterministic RN factor
    extras: dict = field(default_factory=dict)

    @property
    def tip(self) -> int:
        return self.spine_ids[-1]

    @property
    def reached(self) -> bool:
        return self.tree is not None


def spine_root_key(cfg: SimConfig, domain: int, stream: int = 0) -> int:
    return R.root_key(cfg.seed, cfg.replica_index, domain + 16 * stream)


def _spine_times(key0: int, rate: float, stop: float):
    out = []
    s = 0.0
    j = 0
    while True:
        s += -math.log(R.uniform(key0, R.TAG_SPINE, j)) / rate
        j += 1
        if s >= stop:
            return out
        out.append(s)


def _capacity(horizon: float, nspine: int, cfg: SimConfig) -> int:
    return int(min(2.5 * math.exp(min(horizon, 30.0)) * (1 + nspine) + 16 + 4 * nspine,
                   2 * cfg.max_particles + 2))


def _assemble_spine(tr: ParticleTree, key0: int, times, xs):
    """Lay down the spine records; returns spine ids (root first)."""
    ids = [0]
    cur = 0
    for j, s in enumerate(times):
        tr.t_end[cur] = s
        tr.x_end[cur] = xs[j]
        tr.fixed[cur] = 1
        first = tr.n
        tr.child[cur] = first
        for c in range(2):
            pos = first + c
            tr.key[pos] = np.uint64(R.child_key(int(tr.key[cur]), c))
            tr.parent[pos] = cur
            tr.child[pos] = -1
            tr.t_birth[pos] = s
            tr.x_birth[pos] = xs[j]
            tr.t_anchor[pos] = s
            tr.x_anchor[pos] = xs[j]
            tr.fixed[pos] = 0
        tr.n += 2
        pick = 0 if R.uniform(key0, R.TAG_PICK, j) < 0.5 else 1
        cur = first + pick
        ids.append(cur)
    return ids


def sample_spine_fixed(beta: float, t: float, cfg: SimConfig, rng=None, stream: int = 0) -> SpineRealization:
    """Spine with drift ``beta`` on [0, t]; the rest ordinary BBM up to t."""
    if not (0.0 < beta < math.sqrt(2.0)):
        raise ValueError(f"beta={beta!r} must lie in (0, sqrt(2))")
    if not t > 0:
        raise ValueError("t must be > 0")
    key0 = spine_root_key(cfg, R.DOMAIN_SPINE_FIXED, stream)
    times = _spine_times(key0, 2.0, t)
    tr = empty_tree(_capacity(t, len(times), cfg), t, key0, cfg.seed, cfg.replica_index)
    # spine positions: drifted increments from the spine record's own STEP stream
    xs = []
    x = 0.0
    prev = 0.0
    kcur = key0
    pts = [(0.0, 0.0)]
    allt = list(times) + [t]
    for j, s in enumerate(allt):
        dt = s - prev
        x = x + beta * dt + math.sqrt(dt) * R.normal(int(kcur), R.TAG_STEP, 0)
        xs.append(x)
        pts.append((s, x))
        prev = s
        if j < len(times):
            pick = 0 if R.uniform(key0, R.TAG_PICK, j) < 0.5 else 1
            kcur = R.child_key(int(kcur), pick)
    ids = _assemble_spine(tr, key0, times, xs)
    tip = ids[-1]
    tr.t_end[tip] = t
    tr.x_end[tip] = xs[-1]
    tr.fixed[tip] = 1
    tr.child[tip] = -1
    grow_tree(tr, cfg.max_particles)
    return SpineRealization(tr, ids, pts, list(times), t, beta, FIXED_TIME)


def sample_bes3_reversed(A: float, tau: float, times, key0: int):
    """Clearance Y at given times in [0, tau] of BM from A first hitting 0 at tau.

    Y(s) = |B(tau - s)| with B a 3-d Brownian bridge from 0 to (A,0,0) over
    [0, tau], sampled in increasing bridge time.
    """
    us = sorted((tau - s for s in times))
    vals = {}
    b = np.zeros(3)
    up = 0.0
    end = np.array([A, 0.0, 0.0])
    k = 0
    for u in us:
        if u <= 0.0:
            vals[u] = 0.0
            continue
        rem = tau - up
        w = (u - up) / rem
        sd = math.sqrt(max((u - up) * (tau - u) / rem, 0.0))
        z = np.array([R.normal(key0, R.TAG_BES, k + i) for i in range(3)])
        k += 3
        b = b + w * (end - b) + sd * z
        up = u
        vals[u] = float(np.sqrt(b @ b))
    return [vals[tau - s] for s in times]


def sample_spine_fpt(params: LdpParams, t: float, z: float, cfg: SimConfig, rng=None,
                     stream: int = 0, build: bool = True) -> SpineRealization:
    """Spine tilted with beta = b until its V-path first reaches -psi'(kappa) p t + z.

    The passage time is drawn from its inverse Gaussian law and the pre-passage
    V-path is the corresponding first-passage bridge.  The full tree is only
    assembled when the passage happens before the horizon ``t`` (otherwise
    the realization carries ``tree=None``: such replicas have no weight in
    the change-of-measure identity).
    """
    th = params.theta
    beta = params.b
    cc = 0.5 * th * th + 1.0
    # V-drift of the tilted spine: c - theta*b = -psi'(kappa)
    assert abs((cc - th * beta) + params.dpsi_kappa) < 1e-12
    level = params.v_level(t, z)
    if level >= 0.0:
        raise DegenerateLevel(f"level {level!r} >= 0: passage is immediate")
    alpha = -level
    igp = IgParams(alpha, params.dpsi_kappa, params.ddpsi_kappa)
    key0 = spine_root_key(cfg, R.DOMAIN_SPINE_FPT, stream)
    tau = ig_sample(igp, key0)
    wlog = params.kappa * level
    if tau >= t or not build:
        return SpineRealization(None, [], [], [], tau, beta, FIRST_PASSAGE, z, level, wlog)
    times = _spine_times(key0, 2.0, tau)
    A = alpha / th
    ys = sample_bes3_reversed(A, tau, times, key0)
    xs = [(cc * s - (level + th * yv)) / th for s, yv in zip(times, ys)]
    x_tau = (cc * tau - level) / th
    tr = empty_tree(_capacity(t, len(times), cfg), t, key0, cfg.seed, cfg.replica_index)
    ids = _assemble_spine(tr, key0, times, xs)
    J = ids[-1]
    for pid in ids[:-1]:
        tr.cond_until[pid] = float(tr.t_end[pid])
    tr.cond_until[J] = tau
    tr.t_anchor[J] = tau
    tr.x_anchor[J] = x_tau
    tr.fixed[J] = 0
    tr.cond_level = level
    tr.cond_theta = th
    tr.add_knot(J, tau, x_tau)
    grow_tree(tr, cfg.max_particles)
    pts = [(0.0, 0.0)] + list(zip(times, xs)) + [(tau, x_tau)]
    return SpineRealization(tr, ids, pts, list(times), tau, beta, FIRST_PASSAGE, z, level, wlog)


def is_global_first_passage(real: SpineRealization, params: LdpParams = None, t=None, z=None, rng=None) -> bool:
    """True iff no particle other than the spine reaches the level before the stop time."""
    from .observables import first_passage_level

    if real.tree is None:
        return False
    fp = first_passage_level(real.tree, real.tree.cond_theta, real.level)
    return passage_matches(fp, real.stop_time)


def passage_matches(fp, stop_time: float) -> bool:
    if fp is None:
        return False
    return fp[0] >= stop_time - 1e-9 * max(1.0, stop_time)
