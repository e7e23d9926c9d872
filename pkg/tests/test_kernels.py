import math

import numpy as np
from hypothesis import given, settings, strategies as st

from cpinterface import _kernels as K


@st.composite
def tubes(draw, max_w=7, max_m=14):
    W = draw(st.integers(2, max_w))
    m = draw(st.integers(0, max_m))
    kinds, sites = [], []
    for _ in range(m):
        k = draw(st.integers(0, 3))
        if k == 1:
            s = draw(st.integers(0, W - 2))
        elif k == 2:
            s = draw(st.integers(1, W - 1))
        else:
            s = draw(st.integers(0, W - 1))
        kinds.append(k)
        sites.append(s)
    allowed0 = np.array(draw(st.lists(st.integers(0, 1), min_size=W, max_size=W)), np.uint8)
    chg = np.array([draw(st.integers(-1, W - 1)) for _ in range(m)], np.int64)
    val = np.array([draw(st.integers(0, 1)) for _ in range(m)], np.uint8)
    start = draw(st.integers(0, W - 1))
    target = draw(st.integers(0, W - 1))
    return (np.array(kinds, np.int64), np.array(sites, np.int64), allowed0, chg, val, start, target)


def full_allowed(allowed0, chg, val):
    rows = [allowed0.copy()]
    for c, v in zip(chg, val):
        a = rows[-1].copy()
        if c >= 0:
            a[c] = v
        rows.append(a)
    return np.array(rows, np.uint8)


def all_paths(kinds, sites, allowed, start, target):
    """Every per-epoch site sequence from start to target that only moves
    along arrows, avoids deaths and stays inside the allowed sets."""
    m = len(kinds)
    out = []

    def rec(k, x, acc):
        if k == m:
            if x == target:
                out.append(tuple(acc))
            return
        kk, s = kinds[k], sites[k]
        opts = []
        if kk == 0 and s == x:
            return
        opts.append(x)
        if kk in (1, 2) and s == x:
            opts.append(s + 1 if kk == 1 else s - 1)
        for y in opts:
            if allowed[k + 1, y]:
                rec(k + 1, y, acc + [y])

    if allowed[0, start]:
        rec(0, start, [start])
    return out


@given(tubes(), st.booleans())
@settings(max_examples=400, deadline=None)
def test_tube_snap_extremal_against_enumeration(tube, leftmost):
    kinds, sites, a0, chg, val, start, target = tube
    allowed = full_allowed(a0, chg, val)
    got = K.tube_snap(kinds, sites, allowed, start, target, leftmost)
    paths = all_paths(kinds.tolist(), sites.tolist(), allowed, start, target)
    if not paths:
        assert got.shape[0] == 0
        return
    assert tuple(got.tolist()) in paths
    pick = min if leftmost else max
    for k in range(len(kinds) + 1):
        assert got[k] == pick(p[k] for p in paths)


@given(tubes(), st.booleans())
@settings(max_examples=400, deadline=None)
def test_tube_snap_delta_matches_full_table(tube, leftmost):
    kinds, sites, a0, chg, val, start, target = tube
    full = K.tube_snap(kinds, sites, full_allowed(a0, chg, val), start, target, leftmost)
    delta = K.tube_snap_delta(kinds, sites, a0, chg, val, start, target, leftmost)
    assert np.array_equal(full, delta)


def test_tube_snap_examples():
    # arrow 0 -> 1 then death at 0: the only surviving path jumps
    kinds = np.array([1, 0], np.int64)
    sites = np.array([0, 0], np.int64)
    ok = np.ones((3, 3), np.uint8)
    assert K.tube_snap(kinds, sites, ok, 0, 1, True).tolist() == [0, 1, 1]
    assert K.tube_snap(kinds, sites, ok, 0, 0, True).shape[0] == 0
    ok[1, 1] = 0  # site 1 forbidden right after the arrow
    assert K.tube_snap(kinds, sites, ok, 0, 1, True).shape[0] == 0


def dual_oracle(times, kinds, sites, A):
    need = set(np.nonzero(A)[0].tolist())
    W = len(A)
    edge = bool(need & {0, W - 1})
    if not need:
        return -math.inf, False, edge
    for t, k, s in zip(times[::-1], kinds[::-1], sites[::-1]):
        if k == 0:
            if s in need:
                need.discard(s)
                if not need:
                    return -t, False, edge
        else:
            d = s + 1 if k == 1 else s - 1
            if d in need and s not in need:
                need.add(s)
                edge |= s in (0, W - 1)
    return math.inf, True, edge


@given(tubes(max_m=25), st.data())
@settings(max_examples=300, deadline=None)
def test_dual_lifetime_oracle(tube, data):
    kinds, sites, a0, *_ = tube
    kinds = np.where(kinds == 3, 0, kinds)
    m = len(kinds)
    raw = data.draw(st.lists(st.floats(0.01, 5.0), min_size=m, max_size=m, unique=True))
    times = np.sort(-np.array(raw, np.float64))
    got = K.dual_lifetime(times, kinds, sites, a0)
    assert tuple(got) == dual_oracle(times, kinds, sites, a0)
