"""Event-driven exact simulation of binary branching Brownian motion.

A tree stores one record per particle (breadth-first order, children of a
record are consecutive).  Positions between stored points are Brownian
bridges, sampled on demand and cached as knots.
"""
from __future__ import annotations

import csv
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import bridge, kernels
from . import rng as R

DEFAULT_MAX_PARTICLES = 1 << 22
SEGMENT_EXACT = "segment_exact"
GRID_ONLY = "grid_only"


class PopulationCapExceeded(RuntimeError):
    pass


class UnknownParticle(KeyError):
    pass


class TimeOutsideSegment(ValueError):
    pass


@dataclass
class SimConfig:
    horizon: float
    seed: int = 0
    replica_index: int = 0
    max_particles: int = DEFAULT_MAX_PARTICLES
    bridge_grid_dt: float = 1e-3
    crossing_mode: str = SEGMENT_EXACT

    def __post_init__(self):
        if not (self.horizon >= 0 and math.isfinite(self.horizon)):
            raise ValueError(f"horizon must be >= 0, got {self.horizon!r}")
        if self.max_particles < 1:
            raise ValueError("max_particles must be >= 1")
        if not self.bridge_grid_dt > 0:
            raise ValueError("bridge_grid_dt must be > 0")
        if self.crossing_mode not in (SEGMENT_EXACT, GRID_ONLY):
            raise ValueError(f"unknown crossing_mode {self.crossing_mode!r}")

    def replica(self, i: int) -> "SimConfig":
        return SimConfig(self.horizon, self.seed, i, self.max_particles,
                         self.bridge_grid_dt, self.crossing_mode)


@dataclass
class Segment:
    particle_id: int
    parent_id: Optional[int]
    t_birth: float
    x_birth: float
    t_end: float
    x_end: float
    is_leaf_at_horizon: bool


@dataclass
class ParticleTree:
    key: np.ndarray
    parent: np.ndarray
    child: np.ndarray
    t_birth: np.ndarray
    x_birth: np.ndarray
    t_anchor: np.ndarray
    x_anchor: np.ndarray
    t_end: np.ndarray
    x_end: np.ndarray
    fixed: np.ndarray
    n: int
    horizon: float
    seed: int = 0
    replica_index: int = 0
    root_key: int = 0
    # pid -> sorted interior knot times / positions
    knots: dict = field(default_factory=dict)
    # pid -> time up to which the piece is conditioned to keep V above cond_level
    cond_until: dict = field(default_factory=dict)
    cond_level: float = 0.0
    cond_theta: float = 1.0

    @property
    def rng_state_digest(self) -> str:
        return f"{self.root_key:016x}"

    def __len__(self):
        return self.n

    def trim(self):
        for name in ("key", "parent", "child", "t_birth", "x_birth", "t_anchor",
                     "x_anchor", "t_end", "x_end", "fixed"):
            setattr(self, name, getattr(self, name)[: self.n].copy())
        return self

    def leaves(self) -> np.ndarray:
        return np.nonzero(self.t_end[: self.n] >= self.horizon)[0]

    def population(self) -> int:
        return int(np.count_nonzero(self.t_end[: self.n] >= self.horizon))

    def segment(self, pid: int) -> Segment:
        self._check(pid)
        par = int(self.parent[pid])
        return Segment(pid, None if par < 0 else par, float(self.t_birth[pid]),
                       float(self.x_birth[pid]), float(self.t_end[pid]),
                       float(self.x_end[pid]), bool(self.t_end[pid] >= self.horizon))

    def segments(self):
        for i in range(self.n):
            yield self.segment(i)

    def _check(self, pid):
        if not (0 <= pid < self.n):
            raise UnknownParticle(pid)

    def children(self, pid: int):
        c = int(self.child[pid])
        return () if c < 0 else (c, c + 1)

    def special_mask(self) -> np.ndarray:
        """Records whose path functionals need the scalar path (knots / conditioning)."""
        m = np.zeros(self.n, dtype=np.uint8)
        for pid in self.knots:
            m[pid] = 1
        for pid in self.cond_until:
            m[pid] = 1
        for pid in np.nonzero(self.t_anchor[: self.n] != self.t_birth[: self.n])[0]:
            m[pid] = 1
        return m

    # ------------------------------------------------------------ path pieces

    def stored_points(self, pid: int):
        """All stored (time, position) pairs along the particle's own segment."""
        tb = float(self.t_birth[pid])
        ts = [tb]
        xs = [float(self.x_birth[pid])]
        if pid in self.knots:
            kt, kx = self.knots[pid]
            for a, b in zip(kt, kx):
                if a > tb and a < self.t_end[pid]:
                    ts.append(a)
                    xs.append(b)
        te = float(self.t_end[pid])
        if te > tb or len(ts) == 1:
            ts.append(te)
            xs.append(float(self.x_end[pid]))
        return ts, xs

    def pieces(self, pid: int):
        """(piece_index, t0, x0, t1, x1, conditioned) between stored points."""
        ts, xs = self.stored_points(pid)
        cu = self.cond_until.get(pid, -math.inf)
        out = []
        for j in range(len(ts) - 1):
            out.append((j, ts[j], xs[j], ts[j + 1], xs[j + 1], ts[j + 1] <= cu + 1e-15))
        return out

    def add_knot(self, pid: int, t: float, x: float):
        kt, kx = self.knots.setdefault(pid, ([], []))
        j = bisect_left(kt, t)
        kt.insert(j, t)
        kx.insert(j, x)

    def dump_csv(self, path_or_file):
        """One row per particle record; accepts a path or a text file object."""
        if hasattr(path_or_file, "write"):
            self._write_csv(path_or_file)
        else:
            with open(path_or_file, "w", newline="") as fh:
                self._write_csv(fh)

    def _write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["particle_id", "parent_id", "t_birth", "x_birth", "t_end", "x_end"])
        for i in range(self.n):
            par = int(self.parent[i])
            w.writerow([i, "" if par < 0 else par, repr(float(self.t_birth[i])),
                        repr(float(self.x_birth[i])), repr(float(self.t_end[i])),
                        repr(float(self.x_end[i]))])


# ---------------------------------------------------------------- construction

def empty_tree(capacity: int, horizon: float, key0: int, seed=0, replica=0) -> ParticleTree:
    cap = max(int(capacity), 4)
    tr = ParticleTree(
        key=np.empty(cap, np.uint64), parent=np.empty(cap, np.int64),
        child=np.empty(cap, np.int64), t_birth=np.empty(cap), x_birth=np.empty(cap),
        t_anchor=np.empty(cap), x_anchor=np.empty(cap), t_end=np.empty(cap),
        x_end=np.empty(cap), fixed=np.empty(cap, np.uint8), n=1, horizon=float(horizon))
    return reset_tree(tr, horizon, key0, seed, replica)


def reset_tree(tr: ParticleTree, horizon: float, key0: int, seed=0, replica=0) -> ParticleTree:
    """Re-initialise ``tr`` to a lone root (arrays are reused, not cleared)."""
    tr.n = 1
    tr.horizon = float(horizon)
    tr.seed = seed
    tr.replica_index = replica
    tr.root_key = key0
    tr.knots = {}
    tr.cond_until = {}
    tr.cond_level = 0.0
    tr.cond_theta = 1.0
    tr.key[0] = np.uint64(key0)
    tr.parent[0] = -1
    tr.child[0] = -1
    tr.t_birth[0] = tr.x_birth[0] = tr.t_anchor[0] = tr.x_anchor[0] = 0.0
    tr.t_end[0] = tr.x_end[0] = 0.0
    tr.fixed[0] = 0
    return tr


def _enlarge(tr: ParticleTree, cap: int):
    for name in ("key", "parent", "child", "t_birth", "x_birth", "t_anchor",
                 "x_anchor", "t_end", "x_end", "fixed"):
        old = getattr(tr, name)
        new = np.empty(cap, dtype=old.dtype)
        new[: tr.n] = old[: tr.n]
        setattr(tr, name, new)


def grow_tree(tr: ParticleTree, max_particles: int = DEFAULT_MAX_PARTICLES, start: int = 0):
    """Run the growth kernel until every open record is resolved."""
    # monotone population: leaves at the horizon = peak live count
    limit = 2 * int(max_particles) - 1
    i = start
    while True:
        i, n = kernels.grow(tr.key, tr.parent, tr.child, tr.t_birth, tr.x_birth,
                            tr.t_anchor, tr.x_anchor, tr.t_end, tr.x_end, tr.fixed,
                            i, tr.n, tr.horizon)
        tr.n = int(n)
        if tr.n > limit:
            raise PopulationCapExceeded(
                f"more than {max_particles} live particles (records={tr.n})")
        if i >= tr.n:
            return tr
        cap = min(2 * tr.key.shape[0], limit + 3)
        if cap <= tr.key.shape[0]:
            raise PopulationCapExceeded(f"more than {max_particles} live particles")
        _enlarge(tr, cap)


def simulate(cfg: SimConfig, stream: int = 0, workspace: Optional[ParticleTree] = None) -> ParticleTree:
    """One BBM realization up to ``cfg.horizon``; ``stream`` selects an independent family.

    Passing the previous tree as ``workspace`` reuses its arrays (the old
    realization is overwritten).
    """
    key0 = R.root_key(cfg.seed, cfg.replica_index, R.DOMAIN_BBM + 16 * stream)
    if workspace is not None:
        tr = reset_tree(workspace, cfg.horizon, key0, cfg.seed, cfg.replica_index)
    else:
        cap = int(min(2.5 * math.exp(min(cfg.horizon, 30.0)) + 16, 2 * cfg.max_particles + 2))
        tr = empty_tree(cap, cfg.horizon, key0, cfg.seed, cfg.replica_index)
    return grow_tree(tr, cfg.max_particles)


# ---------------------------------------------------------------- bridges

def _locate(tr: ParticleTree, pid: int, t: float):
    tr._check(pid)
    if not (tr.t_birth[pid] <= t <= tr.t_end[pid]):
        raise TimeOutsideSegment(
            f"t={t!r} outside [{tr.t_birth[pid]!r}, {tr.t_end[pid]!r}] of particle {pid}")
    for pc in tr.pieces(pid):
        if pc[1] <= t <= pc[3]:
            return pc
    raise TimeOutsideSegment(t)


def position_at(tree: ParticleTree, particle_id: int, t_query: float, rng=None) -> float:
    """Position of a particle at ``t_query``, bridge-sampled and cached.

    Interior samples are drawn from the stream of the particle key; each new
    knot uses a fresh counter so repeated refinement stays reproducible for a
    fixed query order.  ``rng`` is accepted for interface symmetry and unused.
    """
    pid = int(particle_id)
    j, t0, x0, t1, x1, cond = _locate(tree, pid, t_query)
    if t_query == t0:
        return x0
    if t_query == t1:
        return x1
    nk = len(tree.knots.get(pid, ((), ()))[0])
    tag = R.subtag(R.TAG_BRIDGE, nk)
    draw = bridge.stream_draw(int(tree.key[pid]), tag)
    if cond:
        th = tree.cond_theta
        cc = 0.5 * th * th + 1.0
        lv = tree.cond_level
        d0 = max((cc * t0 - th * x0 - lv) / th, 0.0)
        d1 = max((cc * t1 - th * x1 - lv) / th, 0.0)
        ks = R.KeyedStream(int(tree.key[pid]), R.subtag(R.TAG_BES, nk))
        d = bridge.bes3_bridge_point(d0, d1, t1 - t0, t_query - t0, ks.uniform, ks.normal)
        x = (cc * t_query - (lv + th * d)) / th
    else:
        u1, u2 = draw(), draw()
        zn = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        x = bridge.bridge_point(x0, x1, t1 - t0, t_query - t0, zn)
    tree.add_knot(pid, float(t_query), float(x))
    return x


def alive_at(tree: ParticleTree, t: float) -> np.ndarray:
    """Ids of particles alive at t (at the horizon: the leaves)."""
    tb = tree.t_birth[: tree.n]
    te = tree.t_end[: tree.n]
    if t >= tree.horizon:
        return np.nonzero(te >= tree.horizon)[0]
    return np.nonzero((tb <= t) & (te > t))[0]


def positions_at(tree: ParticleTree, t: float):
    ids = alive_at(tree, t)
    if t >= tree.horizon:
        return ids, tree.x_end[ids].copy()
    return ids, np.array([position_at(tree, int(i), t) for i in ids])


# ---------------------------------------------------------------- crossings

@dataclass
class CrossingResult:
    crossed: bool
    t_hit: Optional[float] = None


def segment_crosses_line(seg: Segment, slope: float, intercept: float, key: int,
                         mode: str = SEGMENT_EXACT, grid_dt: float = 1e-3,
                         piece: int = 0) -> CrossingResult:
    """Does the Brownian path of ``seg`` reach the line ``slope*r + intercept``?

    In ``segment_exact`` mode the decision uses the closed-form bridge
    crossing probability and ``t_hit`` is the exact first hitting time
    (sampled from the conditional law given the crossing).  ``grid_only``
    checks the sign on a ``grid_dt`` grid of bridge samples and can miss
    excursions between grid points.
    """
    t0, t1 = seg.t_birth, seg.t_end
    dt = t1 - t0
    e0 = slope * t0 + intercept - seg.x_birth
    e1 = slope * t1 + intercept - seg.x_end
    if mode == GRID_ONLY:
        return _grid_cross(seg, slope, intercept, key, grid_dt, piece)
    if e0 <= 0.0:
        return CrossingResult(True, t0)
    u = R.uniform(key, R.subtag(R.TAG_MIN, piece), 0)
    if e1 > 0.0 and u > bridge.crossing_prob(e0, e1, dt):
        return CrossingResult(False, None)
    # lowest clearance m <= 0 from the same uniform, then the hit time
    d = e0 - e1
    m = 0.5 * (e0 + e1 - math.sqrt(d * d - 2.0 * dt * math.log(u)))
    m = min(m, 0.0)
    rho_m = kernels.two_levy(e0 - m, e1 - m, dt, key, R.subtag(R.TAG_ARGMIN, piece))
    rho = kernels.two_levy(e0, -m, rho_m, key, R.subtag(R.TAG_HIT, piece))
    return CrossingResult(True, t0 + rho)


def _grid_cross(seg, slope, intercept, key, grid_dt, piece):
    t0, t1 = seg.t_birth, seg.t_end
    dt = t1 - t0
    n = max(int(math.ceil(dt / grid_dt)), 1)
    h = dt / n
    tag = R.subtag(R.TAG_GRID, piece)
    z = np.sqrt(-2.0 * np.log(_grid_u(key, tag, n, 0))) * np.cos(2.0 * math.pi * _grid_u(key, tag, n, n))
    # random walk then pin the end (bridge construction)
    w = np.concatenate(([0.0], np.cumsum(z * math.sqrt(h))))
    r = np.linspace(0.0, 1.0, n + 1)
    path = seg.x_birth + w - r * w[-1] + r * (seg.x_end - seg.x_birth)
    times = t0 + r * dt
    e = slope * times + intercept - path
    hit = np.nonzero(e <= 0.0)[0]
    if hit.size == 0:
        return CrossingResult(False, None)
    return CrossingResult(True, float(times[hit[0]]))


def _grid_u(key, tag, n, off):
    base = R.mix(key ^ ((tag * R.C_TAG) & R.MASK))
    ctr = np.arange(off, off + n, dtype=np.uint64) + np.uint64(base)
    return (R.vmix(ctr) >> np.uint64(11)).astype(np.float64) * R.TWO_M53 + R.TWO_M54
