import math

import numpy as np
import pytest
from scipy import stats

from bbmld import observables as O
from bbmld import params as P
from bbmld import simulator as S
from bbmld import spine as SP

PR = P.derive(1.0, 0.55)


def fixed(n, beta=0.9, t=5.0, seed=1):
    return [SP.sample_spine_fixed(beta, t, S.SimConfig(t, seed, i)) for i in range(n)]


@pytest.fixture(scope="module")
def fixed_runs():
    return fixed(4000)


def test_fixed_spine_displacement_and_branching(fixed_runs):
    tips = np.array([r.tree.x_end[r.tip] for r in fixed_runs])
    nb = np.array([len(r.spine_branch_times) for r in fixed_runs])
    n = len(fixed_runs)
    assert abs(tips.mean() - 4.5) < 3 * math.sqrt(5 / n)
    assert tips.var(ddof=1) == pytest.approx(5.0, rel=0.08)
    assert abs(nb.mean() - 10.0) < 3 * math.sqrt(10 / n)
    assert nb.var(ddof=1) == pytest.approx(10.0, rel=0.1)
    # Poisson(2) event times are uniform on [0, t] given their number
    u = np.concatenate([np.asarray(r.spine_branch_times) / 5.0 for r in fixed_runs])
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_fixed_spine_tree_structure(fixed_runs):
    r = fixed_runs[0]
    tr = r.tree
    assert r.stop_kind == SP.FIXED_TIME and r.stop_time == 5.0
    for a, b in zip(r.spine_ids, r.spine_ids[1:]):
        assert tr.parent[b] == a
        assert tr.t_end[a] == tr.t_birth[b]
    assert tr.t_end[r.tip] == 5.0
    # spine points are the stored path
    for (s, x), pid in zip(r.spine_path[1:], r.spine_ids):
        assert tr.t_end[pid] == s and tr.x_end[pid] == x


def test_drift_contract_three_times(fixed_runs):
    for rr in (1.0, 2.5, 4.0):
        xs = []
        for r in fixed_runs[:2000]:
            tr = r.tree
            pid = next(p for p in r.spine_ids if tr.t_birth[p] <= rr < tr.t_end[p])
            xs.append(S.position_at(tr, pid, rr))
        xs = np.array(xs) - 0.9 * rr
        assert abs(xs.mean()) < 3 * math.sqrt(rr / xs.size)
        assert xs.var(ddof=1) == pytest.approx(rr, rel=0.1)


def test_spine_selection_identity(fixed_runs):
    # E_Q[1{Xi_t >= c}] = E_P[sum_u e^{beta X_t(u) - (beta^2/2+1) t} 1{X_t(u) >= c}]
    beta, t, c = 0.9, 5.0, 5.0
    q = np.array([r.tree.x_end[r.tip] >= c for r in fixed_runs], float)
    vals = []
    for i in range(4000):
        tr = S.simulate(S.SimConfig(t, 9, i))
        xl = tr.x_end[tr.leaves()]
        vals.append(np.sum(np.exp(beta * xl - (beta**2 / 2 + 1) * t) * (xl >= c)))
    vals = np.array(vals)
    se = math.hypot(q.std() / math.sqrt(q.size), vals.std() / math.sqrt(vals.size))
    assert abs(q.mean() - vals.mean()) < 3 * se
    exact = stats.norm.sf((c - beta * t) / math.sqrt(t))
    assert abs(q.mean() - exact) < 3 * q.std() / math.sqrt(q.size)


def test_fixed_validation():
    with pytest.raises(ValueError):
        SP.sample_spine_fixed(1.5, 2.0, S.SimConfig(2.0))
    with pytest.raises(ValueError):
        SP.sample_spine_fixed(0.5, 0.0, S.SimConfig(0.0))


def test_fpt_degenerate_level():
    t = 6.0
    with pytest.raises(SP.DegenerateLevel):
        SP.sample_spine_fpt(PR, t, PR.dpsi_kappa * PR.p * t + 0.1, S.SimConfig(t))


def test_fpt_realisations():
    t, z = 6.0, -1.0
    level = PR.v_level(t, z)
    cc = PR.theta**2 / 2 + 1
    n_glob = n_tree = 0
    for i in range(150):
        r = SP.sample_spine_fpt(PR, t, z, S.SimConfig(t, 5, i))
        assert r.weight_log == pytest.approx(-PR.rate_I * t + PR.kappa * z, rel=1e-12)
        if r.tree is None:
            assert r.stop_time >= t
            continue
        n_tree += 1
        tr = r.tree
        tau = r.stop_time
        # the spine V-value sits exactly on the level at the stop time
        s_last, x_last = r.spine_path[-1]
        assert s_last == tau
        assert cc * tau - PR.theta * x_last == pytest.approx(level, abs=1e-12)
        # the spine stays above the level before tau
        for s, x in r.spine_path[1:-1]:
            assert cc * s - PR.theta * x > level
        summ = O.summarize_tree(tr, PR.theta, level=level)
        assert summ.I_min <= level + 1e-9
        g = SP.is_global_first_passage(r)
        if g:
            n_glob += 1
            fp = O.first_passage_level(tr, PR.theta, level)
            assert fp[0] == pytest.approx(tau, abs=1e-9 * max(1, tau))
            assert fp[1] in r.spine_ids
    assert n_tree > 0 and 0 < n_glob <= n_tree


def test_fpt_spine_without_side_trees_is_global():
    # replicas whose spine does not branch before tau: no competitor exists
    t = 6.0
    seen = 0
    for i in range(400):
        r = SP.sample_spine_fpt(PR, t, 0.0, S.SimConfig(t, 6, i))
        if r.tree is not None and not r.spine_branch_times:
            # side subtrees only appear after tau, where V >= level is not required
            fp = O.first_passage_level(r.tree, PR.theta, r.level)
            assert fp is not None and fp[0] <= r.stop_time + 1e-9
            assert SP.is_global_first_passage(r)
            seen += 1
    assert seen > 0


def test_bes3_reversed_endpoints():
    ys = SP.sample_bes3_reversed(2.0, 1.5, [0.0, 0.5, 1.5], 77)
    assert ys[-1] == 0.0
    assert ys[0] == pytest.approx(2.0, abs=1e-12)
    assert ys[1] > 0
