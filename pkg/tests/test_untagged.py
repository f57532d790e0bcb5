import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from simi import untagged_engine as ue
from simi.laws import Deterministic, Empirical, Environment, Geometric
from simi.trace import FAILED, INFECTION

from conftest import walk_hitting_cdf


class FixedClocks:
    """Clock stub: listed keys fire at the given times, every other clock never fires."""

    def __init__(self, points):
        self.points = {k: sorted(v) for k, v in points.items()}

    def next_after(self, key, t):
        for s in self.points.get(key, []):
            if s > t:
                return s
        return math.inf


def test_clock_field_basics():
    cf = ue.sample_clocks(range(3), 2, (0.0, 0.0), seed=1)
    assert cf.points((0, 1, ue.RIGHT, ue.LIVING)) == []
    a = ue.ClockField(7, horizon=5.0)
    b = ue.ClockField(7, horizon=5.0)
    key = (3, 2, ue.LEFT, ue.GHOST)
    assert a.points(key) == b.points(key)
    longer = a.points(key, 0.0, 10.0)
    assert longer[:len(a.points(key))] == a.points(key)
    assert all(0 < s <= 10 for s in longer)
    assert ue.ClockField(8, horizon=5.0).points(key) != a.points(key)
    rows = list(a.dump([0], 1, 0.0, 3.0))
    assert all(r[2] in "LR" and r[3] in "PG" for r in rows)


def test_rank_extension_preserves_points():
    a = ue.ClockField(3, horizon=20.0, max_rank=1)
    before = a.points((0, 1, ue.RIGHT, ue.LIVING))
    a.points((0, 5, ue.RIGHT, ue.LIVING))
    assert a.max_rank == 5
    assert a.points((0, 1, ue.RIGHT, ue.LIVING)) == before


def test_rank_overflow_without_extension():
    env = Environment(Deterministic(2), Deterministic(1), 0)
    cf = ue.ClockField(1, max_rank=1, extendable=False)
    with pytest.raises(ue.RankOverflowError):
        ue.run(ue.make_state({0: 2}, 0, env), cf, env, ue.Stop(time=5))


def test_superposed_counts_and_gaps():
    n, reps, length = 3, 2000, 10.0
    totals = []
    gaps = []
    for s in range(reps):
        cf = ue.ClockField(s, horizon=length)
        c = 0
        for rank in range(1, n + 1):
            for d in (ue.LEFT, ue.RIGHT):
                c += len(cf.points((0, rank, d, ue.LIVING)))
        if s < 500:
            # first 20 points of one clock, not cut off by a window
            key, t = (1, 1, ue.RIGHT, ue.LIVING), 0.0
            for _ in range(20):
                nxt = cf.next_after(key, t)
                gaps.append(nxt - t)
                t = nxt
        totals.append(c)
    totals = np.array(totals)
    expect = 2 * n * length
    assert abs(totals.mean() - expect) < 4 * math.sqrt(expect / reps)
    assert abs(totals.var(ddof=1) / expect - 1) < 0.15
    assert stats.kstest(gaps, "expon").pvalue > 1e-3


def test_single_forced_event():
    env = Environment.from_values(A={1: 2}, I={1: 1, 2: 3})
    clocks = FixedClocks({(0, 1, ue.RIGHT, ue.LIVING): [0.3]})
    st0 = ue.make_state({0: 1}, 0, env)
    tr, st1 = ue.run(st0, clocks, env, ue.Stop(time=1.0))
    assert tr.rho == [0.3]
    assert (st1.r, st1.eta, st1.eta_bar, st1.iota) == (1, {1: 2}, {1: 1}, 3)


def test_empty_configuration_never_moves():
    env = Environment(Deterministic(2), Geometric(0.5), 0)
    tr, st1 = ue.run(ue.make_state({}, 0, env), ue.ClockField(0), env, ue.Stop(time=100))
    assert tr.events == [] and tr.outcome == "extinct" and st1.r == 0


def test_first_infection_time_matches_walk_oracle():
    # one parasite, host immunity 1: rho_1 is the first hitting time of +1
    env = Environment(Deterministic(0), Deterministic(1), 0)
    n = 5000
    times = []
    for s in range(n):
        tr, _ = ue.run(ue.make_state({0: 1}, 0, env), ue.ClockField(s), env, ue.Stop(time=2.0))
        times.append(tr.rho[0] if tr.rho else math.inf)
    times = np.array(times)
    for t, p in zip((0.5, 1.0, 2.0), walk_hitting_cdf(1, [0.5, 1.0, 2.0])):
        assert abs(np.mean(times <= t) - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_prefix_dominates_examples():
    assert ue.prefix_dominates({0: 2, -3: 1}, {0: 2, -3: 1})
    assert not ue.prefix_dominates({0: 1}, {-1: 1})
    assert ue.prefix_dominates({-1: 1}, {0: 1})
    assert ue.prefix_dominates({}, {0: 1})
    assert not ue.prefix_dominates({0: 1, -1: 1}, {0: 1})


def test_identical_configurations_give_identical_traces():
    env = Environment(Deterministic(2), Geometric(0.5), 4)
    c = ue.make_state({0: 2, -1: 1}, 0, env)
    res = ue.coupled_run(c, c.copy(), ue.ClockField(5), env, stop=ue.Stop(time=30))
    assert res.trace1.rho == res.trace2.rho and res.trace1.events == res.trace2.events
    assert res.dominated and res.violations == 0


def _perturb(rng, eta):
    eta1 = dict(eta)
    for _ in range(int(rng.integers(1, 4))):
        occ = [x for x, c in eta1.items() if c]
        if not occ:
            break
        x = occ[int(rng.integers(len(occ)))]
        eta1[x] -= 1
        if rng.random() < 0.5:
            y = x - int(rng.integers(1, 3))
            eta1[y] = eta1.get(y, 0) + 1
    return {x: c for x, c in eta1.items() if c}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_coupling_order_until_fronts_separate(seed):
    """Under prefix domination the first infection is always ordered, and any later
    inversion is preceded by a level that the second process reached strictly first."""
    rng = np.random.default_rng(seed)
    env = Environment(Empirical({0: 0.3, 3: 0.7}), Geometric(0.6), seed)
    eta2 = {0: int(rng.integers(1, 4)), -1: int(rng.integers(0, 3)), -2: int(rng.integers(0, 2))}
    eta2 = {x: c for x, c in eta2.items() if c}
    eta1 = _perturb(rng, eta2)
    assert ue.prefix_dominates(eta1, eta2)
    res = ue.coupled_run(ue.make_state(eta1, 0, env), ue.make_state(eta2, 0, env), ue.ClockField(seed + 1),
                         env, stop=ue.Stop(time=40), debug=True)
    r1, r2 = res.trace1.rho, res.trace2.rho
    assert res.dominated
    if r1:
        assert r2 and r2[0] <= r1[0]
    for n, t in enumerate(r1):
        if n >= len(r2) or t < r2[n]:
            assert any(r2[m] < r1[m] for m in range(n))
            break


def test_pathwise_monotonicity_counterexample():
    """Hand-built clock realization where the dominated configuration gets ahead.

    The second process infects site 1 first; its two offspring then step back
    to 0, so when the first process infects site 1 at t=4 its fresh offspring
    hold rank 2 at site 1 and use the rank-2 clock at t=5, which the second
    process cannot use.
    """
    env = Environment.from_values(A={1: 2, 2: 0}, I={1: 1, 2: 1, 3: 5})
    R, L, P = ue.RIGHT, ue.LEFT, ue.LIVING
    clocks = FixedClocks({(0, 1, R, P): [1, 4], (1, 1, L, P): [2, 2.5], (-1, 1, R, P): [3],
                          (1, 2, R, P): [5]})
    res = ue.coupled_run(ue.make_state({-1: 1}, 0, env), ue.make_state({0: 1}, 0, env), clocks, env,
                         stop=ue.Stop(time=6))
    assert res.dominated
    assert res.trace2.rho == [1] and res.trace1.rho == [4, 5]
    assert res.violations == 1


def test_coupled_run_requires_shared_front():
    env = Environment(Deterministic(2), Geometric(0.5), 4)
    with pytest.raises(ValueError):
        ue.coupled_run(ue.make_state({0: 1}, 0, env), ue.make_state({1: 1}, 1, env), ue.ClockField(0), env)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.booleans())
def test_conservation_and_event_log(seed, ghosts_move):
    env = Environment(Empirical({0: 0.2, 2: 0.3, 4: 0.5}), Geometric(0.5), seed)
    st0 = ue.make_state({0: 3}, 0, env)
    tr, st1 = ue.run(st0, ue.ClockField(seed), env, ue.Stop(time=25, front=25), ghosts_move=ghosts_move,
                     log_moves=True, debug=True)
    births = [0]
    for k in range(1, tr.front - tr.r0 + 1):
        births.append(births[-1] + env.A(k))
    r = 0
    for (t, kind, _, _, site, r_after, iota_before, nl, ng) in tr.events:
        assert nl == tr.initial_living + births[r_after] - ng
        if kind == INFECTION:
            assert iota_before == 1 and r_after == r + 1
        if kind == FAILED:
            assert iota_before >= 2
        r = r_after
    assert st1.living == tr.initial_living + births[-1] - st1.ghosts
    assert all(x <= st1.r for x in st1.eta)
    # ghost identity for the count construction
    g = tr.ghost_counts_at_rho
    for n in range(len(g)):
        for m in range(n + 1, len(g)):
            assert g[m] - g[n] == sum(env.I(k) for k in range(n + 2, m + 2))


def test_two_sided_extinction_and_survival():
    env = Environment(Deterministic(0), Geometric(0.9), 0)
    tr, st1 = ue.run(ue.make_two_sided(env), ue.ClockField(0), env, ue.Stop(time=50))
    assert st1.living == 0
    env = Environment(Deterministic(4), Deterministic(1), 0)
    tr, st1 = ue.run(ue.make_two_sided(env), ue.ClockField(1), env, ue.Stop(time=5))
    assert st1.living > 0 and st1.r >= 1 and st1.l <= -1
    assert all(st1.l <= x <= st1.r for x in st1.eta)
