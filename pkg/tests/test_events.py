import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpinterface import events as ev
from cpinterface.events import DEATH, LEFT, RIGHT, EventLog, FlightPlan, LatticePath


def log_of(window, span, deaths=None, arrows=None, lam=1.0):
    return EventLog.from_streams(window, span, lam, deaths or {}, arrows or {})


# random small logs for brute-force oracles
@st.composite
def small_logs(draw, max_events=12, width=(3, 6)):
    w = draw(st.integers(*width))
    n = draw(st.integers(0, max_events))
    times = sorted(draw(st.sets(st.integers(1, 999), min_size=n, max_size=n)))
    deaths, arrows = {}, {}
    for t in times:
        x = draw(st.integers(0, w - 1))
        k = draw(st.sampled_from([DEATH, RIGHT, LEFT]))
        if k == RIGHT and x < w - 1:
            arrows.setdefault((x, x + 1), []).append(t / 1000)
        elif k == LEFT and x > 0:
            arrows.setdefault((x, x - 1), []).append(t / 1000)
        else:
            deaths.setdefault(x, []).append(t / 1000)
    return log_of((0, w - 1), (0.0, 1.0), deaths, arrows)


def all_paths(log, start, a, b):
    """Every infection path from (start, a) alive at b, as site sequences over
    the event epochs (brute force over choices at arrow events)."""
    evs = [e for e in log.events() if a < e[0] <= b]
    out = []

    def walk(k, site, seq):
        if k == len(evs):
            out.append(seq)
            return
        t, kind, s = evs[k]
        if kind == DEATH:
            if s != site:
                walk(k + 1, site, seq + [site])
            return
        walk(k + 1, site, seq + [site])
        if s == site:
            walk(k + 1, s + 1 if kind == RIGHT else s - 1, seq + [s + 1 if kind == RIGHT else s - 1])

    walk(0, start, [start])
    return evs, out


# ---------------------------------------------------------------------------
# sampling


def test_zero_birth_rate_has_no_arrows():
    log = ev.sample_event_log((-5, 5), (0.0, 10.0), 0.0, 1)
    assert len(log) > 0
    assert np.all(log.kinds == DEATH)


def test_empty_span_has_no_events():
    log = ev.sample_event_log((-5, 5), (2.0, 2.0), 3.0, 1)
    assert len(log) == 0


def test_inverted_window_or_span_rejected():
    with pytest.raises(ValueError):
        ev.sample_event_log((3, 2), (0.0, 1.0), 1.0, 0)
    with pytest.raises(ValueError):
        ev.sample_event_log((0, 2), (1.0, 0.0), 1.0, 0)
    with pytest.raises(ValueError):
        ev.sample_event_log((0, 2), (0.0, 1.0), -1.0, 0)


def test_death_count_mean_matches_poisson():
    # single site over [0, 100]: Poisson(100) deaths
    counts = np.array([len(ev.sample_event_log((0, 0), (0.0, 100.0), 1.0, (7, i))) for i in range(10_000)])
    se = math.sqrt(100 / counts.shape[0])
    assert abs(counts.mean() - 100) < 3 * se
    assert abs(counts.var() / 100 - 1) < 0.05


def test_arrow_rate_per_edge():
    log = ev.sample_event_log((0, 1), (0.0, 20_000.0), 2.5, 3)
    n = len(log.arrows[(0, 1)])
    assert abs(n - 50_000) < 3 * math.sqrt(50_000)


def test_sampling_deterministic():
    a = ev.sample_event_log((-4, 4), (0.0, 3.0), 2.0, (1, 2, 3))
    b = ev.sample_event_log((-4, 4), (0.0, 3.0), 2.0, (1, 2, 3))
    c = ev.sample_event_log((-4, 4), (0.0, 3.0), 2.0, (1, 2, 4))
    assert a == b
    assert a != c


@given(st.integers(0, 2**31), st.integers(1, 30), st.floats(0.1, 5.0))
@settings(max_examples=50, deadline=None)
def test_log_invariants(seed, width, lam):
    log = ev.sample_event_log((0, width - 1), (-1.0, 2.0), lam, seed)
    assert np.all(np.diff(log.times) > 0)
    assert np.all((log.times >= -1.0) & (log.times <= 2.0))
    tg = log.targets
    assert np.all((tg >= 0) & (tg <= width - 1))
    for (x, y), ts in log.arrows.items():
        assert 0 <= x < width and 0 <= y < width


def test_blocked_logs_nest():
    # a wider window reproduces the events of the narrower one
    small = ev.sample_blocked_log((-10, 10), (0.0, 5.0), 3.0, (9,))
    big = ev.sample_blocked_log((-40, 40), (0.0, 5.0), 3.0, (9,))
    lo, hi = small.window
    inner = (big.sites >= lo) & (big.sites <= hi) & (big.targets >= lo) & (big.targets <= hi)
    assert np.array_equal(big.times[inner], small.times)
    assert np.array_equal(big.sites[inner], small.sites)


def test_flight_plan_empty_streams():
    p = ev.sample_flight_plan(0.0, 2.0, 1.0, (0.0, 10.0), 1)
    assert p.left_attempts.size == 0 and p.right_attempts.size > 0
    p = ev.sample_flight_plan(1.0, 0.0, 0.0, (0.0, 10.0), 1)
    assert p.right_attempts.size == 0 and p.left_attempts.size > 0


def test_flight_plan_negative_rate_rejected():
    with pytest.raises(ValueError):
        ev.sample_flight_plan(-0.1, 1.0, 1.0, (0.0, 1.0), 0)


def test_flight_plan_mark_fraction():
    p = ev.sample_flight_plan(0.0, 2.0, 1.0, (0.0, 5_000.0), 11)
    m = p.right_marks
    assert m.shape[0] > 9_000
    frac = np.mean(m <= 0.5)
    assert abs(frac - 0.5) < 3 * math.sqrt(0.25 / m.shape[0])
    assert np.all((m >= 0) & (m <= 1))
    assert np.all(np.diff(p.times) > 0)


# ---------------------------------------------------------------------------
# reachability


def test_reachable_examples():
    empty = log_of((-2, 2), (0.0, 5.0))
    assert ev.reachable(empty, (0, 0.0), (0, 5.0))
    killed = log_of((-2, 2), (0.0, 1.0), deaths={0: [0.5]})
    assert not ev.reachable(killed, (0, 0.0), (0, 1.0))
    both = log_of((-2, 2), (0.0, 1.0), deaths={0: [0.7]}, arrows={(0, 1): [0.5]})
    assert ev.reachable(both, (0, 0.0), (1, 1.0))
    assert not ev.reachable(both, (0, 0.0), (0, 1.0))


def test_reachable_rejects_outside_points():
    log = log_of((-2, 2), (0.0, 1.0))
    with pytest.raises(ValueError):
        ev.reachable(log, (5, 0.0), (0, 1.0))
    with pytest.raises(ValueError):
        ev.reachable(log, (0, 0.0), (0, 2.0))


def test_descendants_examples():
    assert ev.descendants(log_of((-2, 2), (0.0, 1.0)), [(0, 0.0)], 1.0) == {0}
    assert ev.descendants(log_of((-2, 2), (0.0, 1.0), deaths={0: [0.5]}), [(0, 0.0)], 1.0) == set()
    assert ev.descendants(log_of((-2, 2), (0.0, 1.0), arrows={(0, 1): [0.5]}), [(0, 0.0)], 1.0) == {0, 1}
    with pytest.raises(ValueError):
        ev.descendants(log_of((-2, 2), (0.0, 1.0)), [(0, 0.0)], 2.0)


@given(small_logs(), st.integers(0, 5))
@settings(max_examples=200, deadline=None)
def test_descendants_match_path_enumeration(log, start):
    start = min(start, log.x_hi)
    _, paths = all_paths(log, start, 0.0, 1.0)
    assert ev.descendants(log, [(start, 0.0)], 1.0) == {p[-1] for p in paths}


@given(small_logs(), st.integers(0, 5), st.integers(0, 5), st.integers(1, 999), st.booleans())
@settings(max_examples=200, deadline=None)
def test_reachability_monotone_in_marks(log, src, dst, t, add_arrow):
    src, dst = min(src, log.x_hi), min(dst, log.x_hi)
    t = t / 1000 + 1e-7
    before = ev.reachable(log, (src, 0.0), (dst, 1.0))
    deaths = {x: v.tolist() for x, v in log.deaths.items()}
    arrows = {k: v.tolist() for k, v in log.arrows.items()}
    if add_arrow and log.x_hi > 0:
        arrows.setdefault((src if src < log.x_hi else src - 1, src + 1 if src < log.x_hi else src), []).append(t)
    else:
        deaths.setdefault(dst, []).append(t)
    try:
        more = log_of(log.window, log.span, deaths, arrows)
    except ValueError:
        return  # time collision
    after = ev.reachable(more, (src, 0.0), (dst, 1.0))
    if add_arrow:
        assert after or not before
    else:
        assert before or not after


# ---------------------------------------------------------------------------
# extremal paths


def test_extremal_path_examples():
    p = ev.extremal_path(log_of((-2, 2), (0.0, 1.0)), {0}, 0.0, 1.0, "leftmost")
    assert p == LatticePath.constant(0.0, 1.0, 0)
    p = ev.extremal_path(log_of((-2, 2), (0.0, 1.0), arrows={(0, -1): [0.3]}), {0}, 0.0, 1.0, "leftmost")
    assert p.start_site == 0 and p.jump_times.tolist() == [0.3] and p.jump_sites.tolist() == [-1]
    assert ev.extremal_path(log_of((-2, 2), (0.0, 1.0), deaths={0: [0.2]}), {0}, 0.0, 1.0) is None
    with pytest.raises(ValueError):
        ev.extremal_path(log_of((-2, 2), (0.0, 1.0)), set(), 0.0, 1.0)


def _seq_at_epochs(path, evs, a):
    return [path.at(a)] + [path.at(t) for t, _, _ in evs]


@given(small_logs(), st.sets(st.integers(0, 5), min_size=1, max_size=3), st.booleans())
@settings(max_examples=200, deadline=None)
def test_extremal_path_is_pointwise_extreme(log, sources, leftmost):
    sources = {min(s, log.x_hi) for s in sources}
    side = "leftmost" if leftmost else "rightmost"
    cands = []
    evs = None
    for s in sources:
        evs, ps = all_paths(log, s, 0.0, 1.0)
        cands += ps
    p = ev.extremal_path(log, sources, 0.0, 1.0, side)
    if not cands:
        assert p is None
        return
    seq = _seq_at_epochs(p, evs, 0.0)
    assert seq in cands
    for c in cands:
        if leftmost:
            assert all(a <= b for a, b in zip(seq, c))
        else:
            assert all(a >= b for a, b in zip(seq, c))


# ---------------------------------------------------------------------------
# Left / Right splits


def test_split_membership_examples():
    path = LatticePath.constant(0.0, 1.0, 0)
    log = log_of((-3, 3), (0.0, 1.0), deaths={1: [0.4], 0: [0.6]}, arrows={(0, 1): [0.5]})
    left = ev.split(log, path, "left")
    right = ev.split(log, path, "right_plus")
    assert set(left.events()) == {(0.6, DEATH, 0)}
    assert set(right.events()) == {(0.4, DEATH, 1), (0.5, RIGHT, 0)}


@given(st.integers(0, 2**31), st.integers(0, 3), st.sampled_from(["left", "right"]))
@settings(max_examples=60, deadline=None)
def test_split_partitions_events(seed, start, side):
    log = ev.sample_event_log((-4, 4), (0.0, 2.0), 2.0, seed)
    path = ev.extremal_path(log, range(start, 5), 0.0, 2.0, "leftmost") or LatticePath.constant(0.0, 2.0, start)
    other = "right_plus" if side == "left" else "left_plus"
    a, b = ev.split(log, path, side), ev.split(log, path, other)
    assert len(a) + len(b) == len(log)
    assert set(a.events()) | set(b.events()) == set(log.events())
    assert not set(a.events()) & set(b.events())


def test_resample_side_examples():
    log = ev.sample_event_log((-5, 5), (0.0, 2.0), 2.0, 21)
    path = ev.extremal_path(log, range(0, 6), 0.0, 2.0, "leftmost")
    assert path is not None
    assert ev.resample_side(log, path, log) == log
    empty = EventLog.empty(log.window, log.span, log.birth_rate)
    assert ev.resample_side(log, path, empty) == ev.split(log, path, "left")
    fresh = ev.sample_event_log((-5, 5), (0.0, 2.0), 2.0, 22)
    out = ev.resample_side(log, path, fresh)
    assert len(out) == len(ev.split(log, path, "left")) + len(ev.split(fresh, path, "right_plus"))
    with pytest.raises(ValueError):
        ev.resample_side(log, path, ev.sample_event_log((-5, 6), (0.0, 2.0), 2.0, 22))


def test_dump_roundtrip():
    log = ev.sample_event_log((-3, 3), (0.0, 1.5), 2.0, 5)
    text = log.dump()
    assert all(line[0] in "DA" for line in text.splitlines())
    assert ev.parse_dump(text, log.window, log.span, log.birth_rate) == log


def test_lattice_path_rules():
    with pytest.raises(ValueError):
        LatticePath(0.0, 1.0, 0, np.array([0.5]), np.array([2]))
    with pytest.raises(ValueError):
        LatticePath(0.0, 1.0, 0, np.array([0.5, 0.4]), np.array([1, 0]))
    p = LatticePath(0.0, 1.0, 0, np.array([0.5]), np.array([1]))
    assert p.at(0.49) == 0 and p.at(0.5) == 1 and p.at_left(0.5) == 0
    q = ev.concat_paths(p, LatticePath.constant(1.0, 2.0, 1))
    assert q.end_site == 1 and q.b == 2.0
