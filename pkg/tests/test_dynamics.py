import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpinterface import dynamics as dyn
from cpinterface import events as ev
from cpinterface.dynamics import CbpConfiguration, CbpParams, McpConfiguration, McpParams
from cpinterface.events import EventLog, FlightPlan

P = CbpParams(3.0, 0.5, 2.0, 1.0)


def log_of(window, span, deaths=None, arrows=None, lam=1.0):
    return EventLog.from_streams(window, span, lam, deaths or {}, arrows or {})


def plan_of(span, left=(), right=(), params=P):
    return FlightPlan.from_attempts(span, params.r_left, params.r0, params.r1, left, right)


def constrained_sweep(traj, log, sources, allowed_rows):
    """Snapshots (t, reached set) of one forward sweep of constrained paths
    from ``sources`` at time 0.  ``allowed_rows[i]`` is the set of sites a
    path may occupy while trajectory row i holds; the set after the marks
    <= t is what a fresh query from 0 to t returns."""
    events = list(zip(log.times.tolist(), log.kinds.tolist(), log.sites.tolist()))
    marks = sorted({e[0] for e in events} | set(traj.times[1:].tolist()))
    cur = set(sources) & allowed_rows[0]
    out, k = [], 0
    for tm in marks:
        while k < len(events) and events[k][0] == tm:
            _, kind, s = events[k]
            if kind == ev.DEATH:
                cur.discard(s)
            elif s in cur:
                cur.add(s + 1 if kind == ev.RIGHT else s - 1)
            k += 1
        cur &= allowed_rows[traj.row_at(tm)]
        out.append((tm, frozenset(cur)))
    return out


def _rows(traj, keep):
    sites = np.arange(traj.x_lo, traj.x_hi + 1)
    return [set(sites[keep(i)].tolist()) for i in range(len(traj))]


def _snapshot_at(snaps, t):
    i = np.searchsorted([s[0] for s in snaps], t, side="right") - 1
    return snaps[i][1] if i >= 0 else None


# ---------------------------------------------------------------------------
# types


def test_param_validation():
    with pytest.raises(ValueError):
        CbpParams(1.0, -0.1, 1.0, 1.0)
    with pytest.raises(ValueError):
        McpParams(1.0, math.inf)


def test_configuration_spaces():
    with pytest.raises(ValueError):
        CbpConfiguration(2, frozenset({1, 3}))
    with pytest.raises(ValueError):
        McpConfiguration(frozenset({0, 3}), frozenset({2}))
    with pytest.raises(ValueError):
        McpConfiguration(frozenset({1}), frozenset({1}))


def test_order_leq_examples():
    h = dyn.cbp_heaviside((-5, 5))
    assert dyn.order_leq(h, h)
    fewer = CbpConfiguration(0, h.occupied - {3})
    assert dyn.order_leq(fewer, h)
    assert not dyn.order_leq(CbpConfiguration(-1, frozenset()), CbpConfiguration(0, frozenset()))


# ---------------------------------------------------------------------------
# contact process


def test_evolve_cp_examples():
    log = log_of((-3, 3), (0.0, 1.0))
    assert dyn.evolve_cp([], log).config_at(1.0) == frozenset()
    assert dyn.evolve_cp([0, 1], log).config_at(1.0) == frozenset({0, 1})
    log = log_of((-3, 3), (0.0, 1.0), deaths={0: [0.7]}, arrows={(0, 1): [0.5]})
    tr = dyn.evolve_cp([0], log)
    assert [c for _, c in tr.snapshots()] == [frozenset({0}), frozenset({0, 1}), frozenset({1})]
    assert tr.times.tolist()[1:] == [0.5, 0.7]


def test_evolve_cp_rejects_outside_init():
    with pytest.raises(ValueError):
        dyn.evolve_cp([9], log_of((-3, 3), (0.0, 1.0)))


@given(st.integers(0, 2**31), st.sets(st.integers(-6, 6), max_size=8))
@settings(max_examples=60, deadline=None)
def test_evolve_cp_matches_descendants(seed, init):
    log = ev.sample_event_log((-6, 6), (0.0, 2.0), 2.0, seed)
    tr = dyn.evolve_cp(init, log)
    for t in np.r_[tr.times[1:], 2.0]:
        assert tr.config_at(t) == ev.descendants(log, [(x, 0.0) for x in init], t)


# ---------------------------------------------------------------------------
# contact-and-barrier process


def test_evolve_cbp_static():
    h = dyn.cbp_heaviside((-5, 5))
    tr = dyn.evolve_cbp(h, log_of((-5, 5), (0.0, 1.0)), plan_of((0.0, 1.0)), P)
    assert tr.config_at(1.0) == h
    assert len(tr) == 1


def test_evolve_cbp_right_jump_destroys_particle():
    init = CbpConfiguration(0, frozenset({1, 2}))
    tr = dyn.evolve_cbp(init, log_of((-5, 5), (0.0, 1.0)), plan_of((0.0, 1.0), right=[(0.4, 0.3)]), P)
    assert tr.config_at(1.0) == CbpConfiguration(1, frozenset({2}))
    itf = dyn.extract_interface(tr)
    assert itf.at(0.0) == (0.0, 1.0) and itf.at(0.5) == (1.0, 2.0)
    # mark above r1/r blocks the jump onto an occupied site
    tr = dyn.evolve_cbp(init, log_of((-5, 5), (0.0, 1.0)), plan_of((0.0, 1.0), right=[(0.4, 0.7)]), P)
    assert tr.config_at(1.0) == init


def test_evolve_cbp_empty_destination_uses_r0():
    init = CbpConfiguration(0, frozenset({2}))
    tr = dyn.evolve_cbp(init, log_of((-5, 5), (0.0, 1.0)), plan_of((0.0, 1.0), right=[(0.4, 0.9)]), P)
    assert tr.config_at(1.0) == CbpConfiguration(1, frozenset({2}))


def test_evolve_cbp_left_jump():
    init = CbpConfiguration(0, frozenset({1, 3}))
    tr = dyn.evolve_cbp(init, log_of((-5, 5), (0.0, 1.0)), plan_of((0.0, 1.0), left=[0.4]), P)
    assert tr.config_at(1.0) == CbpConfiguration(-1, frozenset({1, 3}))


def test_evolve_cbp_span_checked():
    with pytest.raises(ValueError):
        dyn.evolve_cbp(dyn.cbp_heaviside((-5, 5)), log_of((-5, 5), (0.0, 1.0)), plan_of((0.0, 1.0)), P,
                       span=(0.0, 2.0))


def test_interface_heaviside_constant():
    h = dyn.cbp_heaviside((-5, 5))
    itf = dyn.extract_interface(dyn.evolve_cbp(h, log_of((-5, 5), (0.0, 1.0)), plan_of((0.0, 1.0)), P))
    assert itf.at(0.7) == (0.0, 1.0) and itf.position(0.7) == 0.5
    m = dyn.mcp_heaviside((-5, 5))
    logs = (log_of((-5, 5), (0.0, 1.0)), log_of((-5, 5), (0.0, 1.0)))
    assert dyn.extract_interface(dyn.evolve_mcp(m, logs)).at(0.3) == (0.0, 1.0)


def _random_cbp(seed, width=20, span=5.0, params=P):
    gen = np.random.default_rng(seed)
    x_lo = -int(gen.integers(3, 8))
    window = (x_lo, x_lo + width - 1)
    b = int(gen.integers(x_lo + 1, x_lo + 5))
    occ = frozenset(int(x) for x in range(b + 1, window[1]) if gen.random() < 0.5)
    log = ev.sample_event_log(window, (0.0, span), params.lam, (seed, 1))
    plan = ev.sample_flight_plan(params.r_left, params.r0, params.r1, (0.0, span), (seed, 2))
    return CbpConfiguration(b, occ), log, plan


def cbp_equivalence_violations(seed, params=P, fresh=False):
    """Occupancy against barrier-free reachability at every change point.
    ``fresh`` recomputes each query from time 0 through the library call."""
    init, log, plan = _random_cbp(seed, params=params)
    tr = dyn.evolve_cbp(init, log, plan, params)
    snaps = constrained_sweep(tr, log, init.occupied, _rows(tr, lambda i: np.arange(tr.x_lo, tr.x_hi + 1) > tr.barrier[i]))
    bad = 0
    t_end = tr.taint_time if tr.taint else log.t_hi
    for t in np.r_[tr.times[1:], log.t_hi]:
        if t > t_end:
            break
        occ = tr.config_at(t).occupied
        if fresh:
            reach = dyn.constrained_descendants(tr, log, init.occupied, 0.0, t)
        else:
            reach = _snapshot_at(snaps, t)
            reach = init.occupied if reach is None else reach
        bad += occ != reach
    return bad


@given(st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_cbp_occupancy_equals_barrier_free_reachability(seed):
    assert cbp_equivalence_violations(seed, fresh=True) == 0


@given(st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_cbp_configuration_space_closure(seed):
    init, log, plan = _random_cbp(seed)
    tr = dyn.evolve_cbp(init, log, plan, P)
    for i in range(len(tr)):
        c = tr._config(i)  # constructor enforces occupancy right of the barrier
        if i:
            prev = tr._config(i - 1)
            moved = abs(c.barrier - prev.barrier)
            changed = len(c.occupied ^ prev.occupied)
            assert moved <= 1 and changed <= 1


def test_constrained_reachable_examples():
    init = CbpConfiguration(0, frozenset({1}))
    log = log_of((-3, 3), (0.0, 1.0), arrows={(1, 0): [0.3]}, deaths={1: [0.4]})
    tr = dyn.evolve_cbp(init, log, plan_of((0.0, 1.0)), P)
    assert not dyn.constrained_reachable(tr, log, (1, 0.0), (0, 1.0))
    empty = log_of((-3, 3), (0.0, 1.0))
    tr = dyn.evolve_cbp(init, empty, plan_of((0.0, 1.0)), P)
    assert dyn.constrained_reachable(tr, empty, (1, 0.0), (1, 1.0))
    with pytest.raises(ValueError):
        dyn.constrained_reachable(tr, empty, (1, 0.0), (1, 1.0), mode=("active", 1))


# ---------------------------------------------------------------------------
# two-type process


def test_evolve_mcp_blocked_birth():
    init = McpConfiguration(frozenset({0}), frozenset({1}))
    h1 = log_of((-3, 3), (0.0, 1.0), arrows={(0, 1): [0.5]})
    h2 = log_of((-3, 3), (0.0, 1.0))
    assert dyn.evolve_mcp(init, (h1, h2)).config_at(1.0) == init


def test_evolve_mcp_birth_after_death():
    init = McpConfiguration(frozenset({0}), frozenset({1}))
    h1 = log_of((-3, 3), (0.0, 1.0), arrows={(0, 1): [0.6]})
    h2 = log_of((-3, 3), (0.0, 1.0), deaths={1: [0.3]})
    out = dyn.evolve_mcp(init, (h1, h2)).config_at(1.0)
    assert out == McpConfiguration(frozenset({0, 1}), frozenset())


def test_evolve_mcp_truncation_checked():
    logs = (log_of((-3, 3), (0.0, 1.0)), log_of((-3, 3), (0.0, 1.0)))
    with pytest.raises(ValueError):
        dyn.evolve_mcp(dyn.mcp_heaviside((-3, 3)), logs, truncation_radius=3)
    tr = dyn.evolve_mcp(dyn.mcp_heaviside((-3, 3)), logs, truncation_radius=2)
    assert tr.initial == McpConfiguration(frozenset(range(-2, 1)), frozenset({1, 2}))


def _random_mcp(seed, width=20, span=5.0, lam=(3.0, 2.5)):
    gen = np.random.default_rng(seed)
    x_lo = -int(gen.integers(5, 15))
    window = (x_lo, x_lo + width - 1)
    cut = int(gen.integers(x_lo + 2, x_lo + width - 2))
    a = frozenset(int(x) for x in range(x_lo + 1, cut + 1) if gen.random() < 0.6)
    b = frozenset(int(x) for x in range(cut + 1, window[1]) if gen.random() < 0.6)
    h1 = ev.sample_event_log(window, (0.0, span), lam[0], (seed, 1))
    h2 = ev.sample_event_log(window, (0.0, span), lam[1], (seed, 2))
    return McpConfiguration(a, b), (h1, h2)


def mcp_equivalence_violations(seed, fresh=False):
    init, logs = _random_mcp(seed)
    tr = dyn.evolve_mcp(init, logs)
    snaps = {typ: constrained_sweep(tr, logs[typ - 1], occ0, _rows(tr, lambda i, typ=typ: tr.states[i] == typ))
             for typ, occ0 in ((1, init.type1), (2, init.type2))}
    bad = 0
    for t in np.r_[tr.times[1:], logs[0].t_hi]:
        c = tr.config_at(t)
        for typ, log, occ0, occ in ((1, logs[0], init.type1, c.type1), (2, logs[1], init.type2, c.type2)):
            if fresh:
                reach = dyn.constrained_descendants(tr, log, occ0, 0.0, t, ("active", typ))
            else:
                reach = _snapshot_at(snaps[typ], t)
                reach = occ0 if reach is None else reach
            bad += occ != reach
    return bad


@given(st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_mcp_state_equals_active_reachability(seed):
    assert mcp_equivalence_violations(seed) == 0


@pytest.mark.parametrize("seed", range(4))
def test_sweep_oracle_matches_fresh_queries(seed):
    init, logs = _random_mcp(seed)
    tr = dyn.evolve_mcp(init, logs)
    snaps = constrained_sweep(tr, logs[0], init.type1, _rows(tr, lambda i: tr.states[i] == 1))
    for t, reach in snaps[:: max(1, len(snaps) // 40)]:
        assert reach == dyn.constrained_descendants(tr, logs[0], init.type1, 0.0, t, ("active", 1))
    assert mcp_equivalence_violations(seed, fresh=True) == 0


@given(st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_mcp_interface_ordering(seed):
    init, logs = _random_mcp(seed)
    itf = dyn.extract_interface(dyn.evolve_mcp(init, logs))
    assert np.all(itf.left < itf.right)


def test_active_path_blocked_by_other_type():
    # site 1 holds type 2 until 0.5; a type-1 path cannot use it before then
    init = McpConfiguration(frozenset({0}), frozenset({1}))
    h1 = log_of((-3, 3), (0.0, 1.0), arrows={(0, 1): [0.2]}, deaths={0: [0.3]})
    h2 = log_of((-3, 3), (0.0, 1.0), deaths={1: [0.5]})
    tr = dyn.evolve_mcp(init, (h1, h2))
    assert not dyn.constrained_reachable(tr, h1, (0, 0.0), (1, 1.0), ("active", 1))


# ---------------------------------------------------------------------------
# monotone coupling


@given(st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_monotone_coupling_small(seed):
    from cpinterface.harness import monotone_violations
    res = monotone_violations(P, 1, 5.0, (seed,))
    assert res[0] is None or res[0][0] == 0


# ---------------------------------------------------------------------------
# open-window runs


def test_free_barrier_is_random_walk():
    # r0 == r1: marks never matter, B_t has mean (r0 - r_left) t
    p = CbpParams(3.0, 0.5, 2.0, 2.0)
    b = np.array([dyn.run_cbp_heaviside(p, 10.0, (5, i)).interface.at(10.0)[0] for i in range(600)])
    assert abs(b.mean() - 15.0) < 3 * math.sqrt(25.0 / 600)
    assert abs(b.var() / 25.0 - 1) < 0.2


def test_static_barrier_never_moves():
    p = CbpParams(3.0, 0.0, 0.0, 0.0)
    run = dyn.run_cbp_heaviside(p, 20.0, 1)
    assert np.all(run.interface.left == 0)


def test_window_growth_preserves_result():
    # the same seed on a larger starting window gives the same interface
    a = dyn.run_cbp_heaviside(P, 15.0, 4)
    b = dyn.run_cbp_heaviside(P, 15.0, 4, window=(-60, 120))
    assert a.interface == b.interface
    c = dyn.run_mcp_heaviside(McpParams(3.0, 3.0), 15.0, 4)
    d = dyn.run_mcp_heaviside(McpParams(3.0, 3.0), 15.0, 4, window=(-120, 120))
    assert c.interface == d.interface


def test_open_run_matches_closed_evolution():
    # on a window wide enough to be certified, the open run equals the closed one
    run = dyn.run_cbp_heaviside(P, 5.0, 8)
    x_lo, x_hi = run.window
    log = ev.sample_blocked_log(run.window, (0.0, 5.0), P.lam, (8, 1))
    plan = ev.sample_flight_plan(P.r_left, P.r0, P.r1, (0.0, 5.0), (8, 2))
    tr = dyn.evolve_cbp(CbpConfiguration(0, frozenset(range(1, log.x_hi + 1))), log, plan, P)
    itf = dyn.extract_interface(tr)
    for t in np.linspace(0, 5, 21):
        assert itf.at(t) == run.interface.at(t)


def test_cp_front_examples():
    r = dyn.cp_front(3.0, 20.0, 3)
    assert r is not None and r > 0
    t, R = dyn.cp_front_path(3.0, 20.0, 3)
    assert R[-1] == r and t[0] == 0.0 and R[0] == 0


def test_interface_csv_header():
    h = dyn.cbp_heaviside((-5, 5))
    itf = dyn.extract_interface(dyn.evolve_cbp(h, log_of((-5, 5), (0.0, 1.0)), plan_of((0.0, 1.0)), P))
    assert itf.to_csv() == "t,B,ell\n0.0,0,1\n"
