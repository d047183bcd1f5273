import io
import math

import numpy as np
import pytest
from scipy import stats

from bbmld import simulator as S


def test_config_validation():
    with pytest.raises(ValueError):
        S.SimConfig(-1.0)
    with pytest.raises(ValueError):
        S.SimConfig(1.0, max_particles=0)
    with pytest.raises(ValueError):
        S.SimConfig(1.0, bridge_grid_dt=0.0)
    with pytest.raises(ValueError):
        S.SimConfig(1.0, crossing_mode="bogus")
    assert S.SimConfig(2.0, 5).replica(3).replica_index == 3


def test_zero_horizon():
    tr = S.simulate(S.SimConfig(0.0))
    assert tr.n == 1 and tr.population() == 1
    seg = tr.segment(0)
    assert seg.t_birth == seg.t_end == 0.0 and seg.is_leaf_at_horizon


def test_determinism_and_workspace_reuse():
    a = S.simulate(S.SimConfig(5.0, 9, 4))
    b = S.simulate(S.SimConfig(5.0, 9, 4))
    ws = S.simulate(S.SimConfig(7.0, 1, 1))
    c = S.simulate(S.SimConfig(5.0, 9, 4), workspace=ws)
    for t in (b, c):
        assert t.n == a.n
        for f in ("parent", "t_birth", "x_birth", "t_end", "x_end"):
            assert np.array_equal(getattr(a, f)[: a.n], getattr(t, f)[: t.n])
    assert a.rng_state_digest == b.rng_state_digest
    d = S.simulate(S.SimConfig(5.0, 9, 5))
    assert d.rng_state_digest != a.rng_state_digest


def test_tree_invariants():
    tr = S.simulate(S.SimConfig(6.0, 0, 2))
    n = tr.n
    assert (tr.parent[:n] < 0).sum() == 1
    for pid in range(n):
        seg = tr.segment(pid)
        assert seg.t_birth <= seg.t_end <= tr.horizon
        ch = tr.children(pid)
        assert len(ch) in (0, 2)
        for c in ch:
            assert tr.t_birth[c] == tr.t_end[pid] and tr.x_birth[c] == tr.x_end[pid]
            assert tr.parent[c] == pid
        assert (len(ch) == 0) == seg.is_leaf_at_horizon
    for r in np.linspace(0, 6, 13):
        assert S.alive_at(tr, r).size >= 1


def test_population_cap():
    with pytest.raises(S.PopulationCapExceeded):
        S.simulate(S.SimConfig(12.0, 0, 0, max_particles=100))


def test_laws_lifetimes_increments():
    # a branched particle's lifetime is Exp(1) truncated at horizon - t_birth,
    # so F(L) / F(horizon - t_birth) is uniform
    pit, inc = [], []
    i = 0
    while len(pit) < 10000 or len(inc) < 10000:
        tr = S.simulate(S.SimConfig(3.0, 4, i))
        n = tr.n
        life = tr.t_end[:n] - tr.t_birth[:n]
        br = tr.t_end[:n] < tr.horizon
        c = tr.horizon - tr.t_birth[:n][br]
        pit.extend(-np.expm1(-life[br]) / -np.expm1(-c))
        ok = life > 0
        inc.extend((tr.x_end[:n] - tr.x_birth[:n])[ok] / np.sqrt(life[ok]))
        i += 1
    assert stats.kstest(pit[:10000], "uniform").pvalue > 0.01
    assert stats.kstest(inc[:10000], "norm").pvalue > 0.01


def test_mean_population_small_t():
    pops = np.array([S.simulate(S.SimConfig(2.0, 8, i)).population() for i in range(4000)])
    se = pops.std(ddof=1) / math.sqrt(pops.size)
    assert abs(pops.mean() - math.exp(2.0)) < 3 * se


def test_position_at_endpoints_and_cache():
    tr = S.simulate(S.SimConfig(4.0, 1, 3))
    pid = int(S.alive_at(tr, 2.0)[0])
    assert S.position_at(tr, pid, float(tr.t_birth[pid])) == tr.x_birth[pid]
    assert S.position_at(tr, pid, float(tr.t_end[pid])) == tr.x_end[pid]
    v = S.position_at(tr, pid, 2.0)
    assert S.position_at(tr, pid, 2.0) == v
    with pytest.raises(S.TimeOutsideSegment):
        S.position_at(tr, 0, 99.0)
    with pytest.raises(S.UnknownParticle):
        S.position_at(tr, tr.n + 5, 1.0)


def _unit_segment(i):
    tr = S.simulate(S.SimConfig(1.0, 77, i))
    tr.n = 1
    tr.child[0] = -1
    tr.t_end[0] = 1.0
    tr.x_end[0] = 0.0
    return tr


def test_bridge_midpoint_law():
    xs = np.array([S.position_at(_unit_segment(i), 0, 0.5) for i in range(20000)])
    assert abs(xs.mean()) < 3 * 0.5 / math.sqrt(xs.size)
    assert xs.var() == pytest.approx(0.25, rel=0.05)


def test_cached_bridge_three_point_covariance():
    # query order 0.5, 0.25, 0.75: the refined path must still be one bridge
    pts = (0.25, 0.5, 0.75)
    out = np.empty((8000, 3))
    for i in range(out.shape[0]):
        tr = _unit_segment(i)
        S.position_at(tr, 0, 0.5)
        S.position_at(tr, 0, 0.25)
        S.position_at(tr, 0, 0.75)
        out[i] = [S.position_at(tr, 0, s) for s in pts]
    cov = np.cov(out.T)
    ref = np.array([[min(s, u) - s * u for u in pts] for s in pts])
    assert np.allclose(cov, ref, atol=0.012)


def test_segment_crosses_line_exact_and_grid():
    seg = S.Segment(0, None, 0.0, 0.0, 1.0, 0.0, True)
    # line 0.5 above both endpoints: crossing probability e^{-0.5}
    keys = [S.R.root_key(5, i) for i in range(20000)]
    hits = [S.segment_crosses_line(seg, 0.0, 0.5, k) for k in keys]
    f = np.mean([h.crossed for h in hits])
    p = math.exp(-0.5)
    assert abs(f - p) < 3 * math.sqrt(p * (1 - p) / len(keys))
    assert all(0.0 <= h.t_hit <= 1.0 for h in hits if h.crossed)
    # an endpoint on the far side always crosses
    assert S.segment_crosses_line(S.Segment(0, None, 0.0, 0.0, 1.0, 2.0, True), 0.0, 1.0, 1).crossed
    g = np.mean([S.segment_crosses_line(seg, 0.0, 0.5, k, mode=S.GRID_ONLY, grid_dt=0.05).crossed
                 for k in keys[:4000]])
    # coarse monitoring misses excursions between grid points
    assert g < f


def test_dump_csv_roundtrip(tmp_path):
    tr = S.simulate(S.SimConfig(3.0, 0, 1))
    p = tmp_path / "tree.csv"
    tr.dump_csv(p)
    buf = io.StringIO()
    tr.dump_csv(buf)
    text = p.read_text()
    assert text == buf.getvalue()
    lines = text.splitlines()
    assert lines[0] == "particle_id,parent_id,t_birth,x_birth,t_end,x_end"
    assert len(lines) == tr.n + 1
    assert lines[1].split(",")[1] == ""
