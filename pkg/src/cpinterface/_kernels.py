"""Compiled event-loop engines.

All engines work on window-relative site indices ``0..W-1`` and consume the
time-sorted event tables of :class:`~cpinterface.events.EventLog`
(kind 0 death, 1 arrow to the right, 2 arrow to the left).

Occupancy is carried as a pair of 0/1 arrays ``lo <= up``: ``lo`` is what is
certainly occupied, ``up`` what may be occupied once the unknown outside of
the window is taken into account.  An *open* edge column is permanently
"maybe occupied" in ``up``.  Every engine reports the first time at which the
uncertainty reaches a quantity it is asked to produce ("taint").
"""

from __future__ import annotations

import numpy as np
from numba import njit

INF = np.inf
BIG = np.int64(1) << np.int64(40)
NEG = -BIG


@njit(cache=True)
def _first(arr, start, W):
    for i in range(start, W):
        if arr[i]:
            return i
    return W


@njit(cache=True)
def _last(arr, start):
    for i in range(start, -1, -1):
        if arr[i]:
            return i
    return -1


# ---------------------------------------------------------------------------
# plain contact process sweep (optionally with forced "trail" sources)


@njit(cache=True)
def cp_sweep(times, kinds, sites, lo, up, open_l, open_r,
             f_times, f_kinds, f_sites, t_stop, rec_prev, rec_states):
    """Evolve ``lo``/``up`` in place through all events with time <= t_stop.

    Forcing events (kind 1 = start, 0 = end) mark a site as a source: it is
    set occupied at the start and deaths on it are ignored until the end.

    Returns (prev_lo, prev_up, taint_t, rec_t, rec_rows, n_rec).  ``prev_*``
    hold the pre-event value at each log event's affected site so a sweep can
    be rolled back; ``taint_t`` is the first time an occupied site (``lo``)
    sits in a closed outer column.
    """
    W = lo.shape[0]
    n = times.shape[0]
    nf = f_times.shape[0]
    force = np.zeros(W, np.int32)
    prev_lo = np.zeros(n if rec_prev else 0, np.uint8)
    prev_up = np.zeros(n if rec_prev else 0, np.uint8)
    nrow = n + nf + 1 if rec_states else 1
    rec_t = np.zeros(nrow)
    rec_rows = np.empty((nrow, W if rec_states else 1), np.uint8)
    n_rec = 0
    if open_l:
        up[0] = 1
    if open_r:
        up[W - 1] = 1
    taint_t = INF
    if (not open_l and lo[0]) or (not open_r and lo[W - 1]):
        taint_t = -INF
    if rec_states:
        rec_t[0] = -INF
        rec_rows[0, :] = lo
        n_rec = 1
    i = 0
    j = 0
    while True:
        tl = times[i] if i < n else INF
        tf = f_times[j] if j < nf else INF
        if tl > t_stop and tf > t_stop:
            break
        changed = False
        if tf <= tl:
            s = f_sites[j]
            t = tf
            if f_kinds[j] == 1:
                force[s] += 1
                if not lo[s]:
                    lo[s] = 1
                    changed = True
                up[s] = 1
            else:
                force[s] -= 1
            j += 1
        else:
            k = kinds[i]
            s = sites[i]
            t = tl
            if k == 0:
                if rec_prev:
                    prev_lo[i] = lo[s]
                    prev_up[i] = up[s]
                if force[s] == 0:
                    if lo[s]:
                        changed = True
                    lo[s] = 0
                    if not ((open_l and s == 0) or (open_r and s == W - 1)):
                        up[s] = 0
            else:
                d = s + 1 if k == 1 else s - 1
                if rec_prev:
                    prev_lo[i] = lo[d]
                    prev_up[i] = up[d]
                if lo[s] and not lo[d]:
                    lo[d] = 1
                    changed = True
                if up[s]:
                    up[d] = 1
            i += 1
        if changed:
            if taint_t == INF and ((not open_l and lo[0]) or (not open_r and lo[W - 1])):
                taint_t = t
            if rec_states:
                rec_t[n_rec] = t
                rec_rows[n_rec, :] = lo
                n_rec += 1
    return prev_lo, prev_up, taint_t, rec_t, rec_rows, n_rec


# ---------------------------------------------------------------------------
# contact-and-barrier process


@njit(cache=True)
def cbp_run(times, kinds, sites, p_times, p_kinds, p_marks, a0, a1,
            lo, up, b, open_r, track, sdl, sdu, labl, labu, out_lab,
            t_start, t_end, t_adj, rec_states, rec_events):
    """Contact-and-barrier dynamics on a window, in place.

    ``a0``/``a1`` are the acceptance thresholds r0/r and r1/r for a right
    attempt onto an empty/occupied site.  With ``track`` the engine follows
    the barrier-free descendants of the special set (``sdl``/``sdu`` with
    minimal origin labels ``labl``/``labu``) and stops at the first time
    t >= t_adj at which the site right of the barrier is such a descendant.
    ``out_lab`` is the smallest label that may enter from beyond the right
    edge (only used when ``open_r``).

    Returns a tuple
      (b, taint_t, T, X, n_if, if_t, if_b, if_l, n_rows, row_t, rows, row_b,
       n_ev, ev_code, ev_b)
    with ``if_l`` = W when no particle is right of the barrier.  ``ev_code``
    lists processed events in order (i >= 0 log event i, -(j+1) plan event j)
    and ``ev_b`` the barrier after each of them.
    """
    W = lo.shape[0]
    n = times.shape[0]
    m = p_times.shape[0]
    cap = n + m + 2
    if_t = np.zeros(cap)
    if_b = np.zeros(cap, np.int64)
    if_l = np.zeros(cap, np.int64)
    nr = cap if rec_states else 1
    row_t = np.zeros(nr)
    rows = np.empty((nr, W if rec_states else 1), np.uint8)
    row_b = np.zeros(nr, np.int64)
    ne = cap if rec_events else 1
    ev_code = np.zeros(ne, np.int64)
    ev_b = np.zeros(ne, np.int64)
    n_ev = 0
    n_rows = 0
    taint_t = INF
    T = INF
    X = np.int64(-1)
    edge_lab = out_lab

    if open_r:
        up[W - 1] = 1
        if track:
            sdu[W - 1] = 1
            if labu[W - 1] > edge_lab:
                labu[W - 1] = edge_lab
    ell_lo = _first(lo, b + 1, W)
    ell_up = _first(up, b + 1, W)
    if_t[0] = t_start
    if_b[0] = b
    if_l[0] = ell_lo
    n_if = 1
    if rec_states:
        row_t[0] = t_start
        rows[0, :] = lo
        row_b[0] = b
        n_rows = 1
    if ell_lo != ell_up or (open_r and (b < 1 or b + 1 >= W - 1)):
        taint_t = t_start
        return (b, taint_t, T, X, n_if, if_t, if_b, if_l, n_rows, row_t, rows, row_b, n_ev, ev_code, ev_b)
    if (not open_r) and (b <= 0 or b >= W - 1 or lo[W - 1]):
        taint_t = t_start

    adj_checked = t_adj <= t_start
    i = 0
    j = 0
    while True:
        tl = times[i] if i < n else INF
        tp = p_times[j] if j < m else INF
        tnext = tl if tl < tp else tp
        if track and not adj_checked and tnext > t_adj and t_adj <= t_end:
            adj_checked = True
            if sdl[b + 1]:
                if labl[b + 1] != labu[b + 1]:
                    taint_t = t_adj
                else:
                    T = t_adj
                    X = labl[b + 1]
                break
            elif sdu[b + 1]:
                taint_t = t_adj
                break
        if tnext > t_end:
            break
        changed = False
        if tl <= tp:
            t = tl
            k = kinds[i]
            s = sites[i]
            if rec_events:
                ev_code[n_ev] = i
            i += 1
            if k == 0:
                if lo[s]:
                    changed = True
                lo[s] = 0
                edge = open_r and s == W - 1
                if not edge:
                    up[s] = 0
                if track:
                    sdl[s] = 0
                    labl[s] = BIG
                    if edge:
                        labu[s] = edge_lab
                    else:
                        sdu[s] = 0
                        labu[s] = BIG
                if s == ell_lo:
                    ell_lo = _first(lo, s + 1, W)
                if s == ell_up:
                    ell_up = _first(up, s + 1, W)
            else:
                d = s + 1 if k == 1 else s - 1
                if d > b:
                    if lo[s] and not lo[d]:
                        lo[d] = 1
                        changed = True
                        if d < ell_lo:
                            ell_lo = d
                    if up[s] and not up[d]:
                        up[d] = 1
                        if d < ell_up:
                            ell_up = d
                    if track:
                        if sdl[s]:
                            sdl[d] = 1
                            if labl[s] < labl[d]:
                                labl[d] = labl[s]
                        if sdu[s]:
                            sdu[d] = 1
                            if labu[s] < labu[d]:
                                labu[d] = labu[s]
                            if open_r and d == W - 1 and labu[d] < edge_lab:
                                edge_lab = labu[d]
                    if (not open_r) and d == W - 1 and lo[d] and taint_t == INF:
                        taint_t = t
        else:
            t = tp
            if rec_events:
                ev_code[n_ev] = -(j + 1)
            if p_kinds[j] == 0:
                if b - 1 < 0 or (open_r and b - 1 < 1):
                    taint_t = t
                    break
                b -= 1
                if b == 0 and taint_t == INF:
                    taint_t = t
                changed = True
            else:
                d = b + 1
                if d > W - 1 or (open_r and d >= W - 1):
                    taint_t = t
                    break
                if d == W - 1 and taint_t == INF:
                    taint_t = t
                mk = p_marks[j]
                jump_lo = mk <= (a1 if lo[d] else a0)
                jump_up = mk <= (a1 if up[d] else a0)
                if jump_lo != jump_up:
                    taint_t = t
                    break
                if jump_lo:
                    b = d
                    lo[d] = 0
                    up[d] = 0
                    if track:
                        sdl[d] = 0
                        sdu[d] = 0
                        labl[d] = BIG
                        labu[d] = BIG
                    if ell_lo == d:
                        ell_lo = _first(lo, d + 1, W)
                    if ell_up == d:
                        ell_up = _first(up, d + 1, W)
                    changed = True
            j += 1
        if rec_events:
            ev_b[n_ev] = b
            n_ev += 1
        if ell_lo != ell_up:
            taint_t = t
            break
        if if_b[n_if - 1] != b or if_l[n_if - 1] != ell_lo:
            if_t[n_if] = t
            if_b[n_if] = b
            if_l[n_if] = ell_lo
            n_if += 1
        if rec_states and changed:
            row_t[n_rows] = t
            rows[n_rows, :] = lo
            row_b[n_rows] = b
            n_rows += 1
        if track and adj_checked:
            if sdl[b + 1]:
                if labl[b + 1] != labu[b + 1]:
                    taint_t = t
                else:
                    T = t
                    X = labl[b + 1]
                break
            elif sdu[b + 1]:
                taint_t = t
                break
    return (b, taint_t, T, X, n_if, if_t, if_b, if_l, n_rows, row_t, rows, row_b, n_ev, ev_code, ev_b)


# ---------------------------------------------------------------------------
# multitype contact process


@njit(cache=True)
def _mcp_arrow(src_lo, src_up, dst_lo, dst_up, oth_lo, oth_up, s, d):
    """Type-i birth s -> d.  Returns (new_lo, new_up) for site d."""
    nl = dst_lo[d] | (src_lo[s] & (1 - oth_up[d]))
    nu = dst_up[d] | (src_up[s] & (1 - oth_lo[d]))
    return nl, nu


@njit(cache=True)
def mcp_run(t1, k1, s1, t2, k2, s2, lo1, up1, lo2, up2, open_l, open_r,
            track, sd1l, sd1u, lb1l, lb1u, sd2l, sd2u, lb2l, lb2u, out1, out2,
            t_start, t_end, t_adj, rec_states, rec_events):
    """Two-type dynamics on a window, in place.

    Type 1 lives to the left.  An open left edge may hold type 1 (``up1``),
    an open right edge type 2.  With ``track`` the engine follows the active
    descendants of the special sets (type 1 with maximal origin label, type 2
    with minimal) and stops at the first t >= t_adj at which the interface
    is adjacent and both its sites are such descendants.

    Returns (taint_t, T, X1, X2, n_if, if_t, if_r, if_l, n_rows, row_t, rows,
             n_ev, ev_code, ev0, ev_site, ev_val)
    with r = -1 / ell = W encoding absence.  ``rows`` hold the state code
    (0 empty, 1, 2) from the certain arrays.  With ``rec_events`` the
    engine returns the initial (lo1, up1, lo2, up2) rows in ``ev0`` and,
    for each event, the one site it may have changed with the four values
    there afterwards (``ev_site`` -1 for none).
    """
    W = lo1.shape[0]
    n1 = t1.shape[0]
    n2 = t2.shape[0]
    cap = n1 + n2 + 2
    if_t = np.zeros(cap)
    if_r = np.zeros(cap, np.int64)
    if_l = np.zeros(cap, np.int64)
    nr = cap if rec_states else 1
    row_t = np.zeros(nr)
    rows = np.empty((nr, W if rec_states else 1), np.uint8)
    ne = cap if rec_events else 1
    we = W if rec_events else 1
    ev_code = np.zeros(ne, np.int64)
    ev0 = np.zeros((4, we), np.uint8)
    ev_site = np.full(ne, -1, np.int64)
    ev_val = np.zeros((ne, 4), np.uint8)
    n_ev = 0
    n_rows = 0
    taint_t = INF
    T = INF
    X1 = np.int64(0)
    X2 = np.int64(0)
    e1 = out1
    e2 = out2
    if open_l:
        up1[0] = 1
        if track:
            sd1u[0] = 1
            if lb1u[0] < e1:
                lb1u[0] = e1
    if open_r:
        up2[W - 1] = 1
        if track:
            sd2u[W - 1] = 1
            if lb2u[W - 1] > e2:
                lb2u[W - 1] = e2
    r_lo = _last(lo1, W - 1)
    r_up = _last(up1, W - 1)
    l_lo = _first(lo2, 0, W)
    l_up = _first(up2, 0, W)
    if_t[0] = t_start
    if_r[0] = r_lo
    if_l[0] = l_lo
    n_if = 1
    if rec_states:
        row_t[0] = t_start
        for x in range(W):
            rows[0, x] = 1 if lo1[x] else (2 if lo2[x] else 0)
        n_rows = 1
    if rec_events:
        ev0[0, :] = lo1
        ev0[1, :] = up1
        ev0[2, :] = lo2
        ev0[3, :] = up2
        n_ev = 1
    if r_lo != r_up or l_lo != l_up or (open_l and up2[0]) or (open_r and up1[W - 1]):
        taint_t = t_start
        return (taint_t, T, X1, X2, n_if, if_t, if_r, if_l, n_rows, row_t, rows,
                n_ev, ev_code, ev0, ev_site, ev_val)
    if lo1[0] or lo2[0] or lo1[W - 1] or lo2[W - 1]:
        if not (open_l or open_r):
            taint_t = t_start

    adj_checked = t_adj <= t_start
    i = 0
    j = 0
    while True:
        ta = t1[i] if i < n1 else INF
        tb = t2[j] if j < n2 else INF
        tnext = ta if ta < tb else tb
        if track and not adj_checked and tnext > t_adj and t_adj <= t_end:
            adj_checked = True
            if r_lo >= 0 and l_lo == r_lo + 1 and l_lo < W:
                if sd1l[r_lo] and sd2l[l_lo]:
                    if lb1l[r_lo] != lb1u[r_lo] or lb2l[l_lo] != lb2u[l_lo]:
                        taint_t = t_adj
                    else:
                        T = t_adj
                        X1 = lb1l[r_lo]
                        X2 = lb2l[l_lo]
                    break
                elif sd1u[r_lo] and sd2u[l_lo]:
                    taint_t = t_adj
                    break
        if tnext > t_end:
            break
        changed = False
        if ta <= tb:
            t = ta
            k = k1[i]
            s = s1[i]
            if rec_events:
                ev_code[n_ev] = i
            i += 1
            if k == 0:
                if lo1[s]:
                    changed = True
                lo1[s] = 0
                edge = open_l and s == 0
                if not edge:
                    up1[s] = 0
                if track:
                    sd1l[s] = 0
                    lb1l[s] = NEG
                    if edge:
                        lb1u[s] = e1
                    else:
                        sd1u[s] = 0
                        lb1u[s] = NEG
                if s == r_lo:
                    r_lo = _last(lo1, s - 1)
                if s == r_up:
                    r_up = _last(up1, s - 1)
            else:
                d = s + 1 if k == 1 else s - 1
                nl, nu = _mcp_arrow(lo1, up1, lo1, up1, lo2, up2, s, d)
                if nl and not lo1[d]:
                    changed = True
                lo1[d] = nl
                up1[d] = nu
                if nl and d > r_lo:
                    r_lo = d
                if nu and d > r_up:
                    r_up = d
                if track:
                    if sd1l[s] and nl:
                        sd1l[d] = 1
                        if lb1l[s] > lb1l[d]:
                            lb1l[d] = lb1l[s]
                    if sd1u[s] and nu:
                        sd1u[d] = 1
                        if lb1u[s] > lb1u[d]:
                            lb1u[d] = lb1u[s]
                        if open_l and d == 0 and lb1u[d] > e1:
                            e1 = lb1u[d]
        else:
            t = tb
            k = k2[j]
            s = s2[j]
            if rec_events:
                ev_code[n_ev] = -(j + 1)
            j += 1
            if k == 0:
                if lo2[s]:
                    changed = True
                lo2[s] = 0
                edge = open_r and s == W - 1
                if not edge:
                    up2[s] = 0
                if track:
                    sd2l[s] = 0
                    lb2l[s] = BIG
                    if edge:
                        lb2u[s] = e2
                    else:
                        sd2u[s] = 0
                        lb2u[s] = BIG
                if s == l_lo:
                    l_lo = _first(lo2, s + 1, W)
                if s == l_up:
                    l_up = _first(up2, s + 1, W)
            else:
                d = s + 1 if k == 1 else s - 1
                nl, nu = _mcp_arrow(lo2, up2, lo2, up2, lo1, up1, s, d)
                if nl and not lo2[d]:
                    changed = True
                lo2[d] = nl
                up2[d] = nu
                if nl and d < l_lo:
                    l_lo = d
                if nu and d < l_up:
                    l_up = d
                if track:
                    if sd2l[s] and nl:
                        sd2l[d] = 1
                        if lb2l[s] < lb2l[d]:
                            lb2l[d] = lb2l[s]
                    if sd2u[s] and nu:
                        sd2u[d] = 1
                        if lb2u[s] < lb2u[d]:
                            lb2u[d] = lb2u[s]
                        if open_r and d == W - 1 and lb2u[d] < e2:
                            e2 = lb2u[d]
        if rec_events:
            c = s if k == 0 else d
            ev_site[n_ev] = c
            ev_val[n_ev, 0] = lo1[c]
            ev_val[n_ev, 1] = up1[c]
            ev_val[n_ev, 2] = lo2[c]
            ev_val[n_ev, 3] = up2[c]
            n_ev += 1
        if r_lo != r_up or l_lo != l_up or (open_l and up2[0]) or (open_r and up1[W - 1]):
            taint_t = t
            break
        if taint_t == INF and (not open_l) and (lo1[0] or lo2[0]):
            taint_t = t
        if taint_t == INF and (not open_r) and (lo1[W - 1] or lo2[W - 1]):
            taint_t = t
        if if_r[n_if - 1] != r_lo or if_l[n_if - 1] != l_lo:
            if_t[n_if] = t
            if_r[n_if] = r_lo
            if_l[n_if] = l_lo
            n_if += 1
        if rec_states and changed:
            row_t[n_rows] = t
            for x in range(W):
                rows[n_rows, x] = 1 if lo1[x] else (2 if lo2[x] else 0)
            n_rows += 1
        if track and adj_checked:
            if r_lo >= 0 and l_lo == r_lo + 1 and l_lo < W:
                if sd1l[r_lo] and sd2l[l_lo]:
                    if lb1l[r_lo] != lb1u[r_lo] or lb2l[l_lo] != lb2u[l_lo]:
                        taint_t = t
                    else:
                        T = t
                        X1 = lb1l[r_lo]
                        X2 = lb2l[l_lo]
                    break
                elif sd1u[r_lo] and sd2u[l_lo]:
                    taint_t = t
                    break
    return (taint_t, T, X1, X2, n_if, if_t, if_r, if_l, n_rows, row_t, rows,
            n_ev, ev_code, ev0, ev_site, ev_val)


# ---------------------------------------------------------------------------
# extremal paths and dual lifetimes


@njit(cache=True)
def tube_snap(ev_kinds, ev_sites, allowed, start, target, leftmost):
    """Extremal path from (start, epoch 0) to (target, last epoch).

    ``ev_kinds``: 0 death, 1/2 arrows, 3 events of another construction (no
    effect on paths except through ``allowed``).  ``allowed[k]`` is the set
    of sites a path may occupy during epoch k (after event k-1).
    Returns the per-epoch site array, or an empty array if no path exists.
    """
    m = ev_kinds.shape[0]
    W = allowed.shape[1]
    F = np.zeros((m + 1, W), np.uint8)
    F[0, start] = allowed[0, start]
    for k in range(m):
        F[k + 1, :] = F[k, :]
        kk = ev_kinds[k]
        s = ev_sites[k]
        if kk == 0:
            F[k + 1, s] = 0
        elif kk == 1 or kk == 2:
            d = s + 1 if kk == 1 else s - 1
            if F[k, s]:
                F[k + 1, d] = 1
        for x in range(W):
            F[k + 1, x] &= allowed[k + 1, x]
    if not F[m, target]:
        return np.zeros(0, np.int64)
    need = np.zeros(W, np.uint8)
    need[target] = 1
    out = np.zeros(m + 1, np.int64)
    for k in range(m, -1, -1):
        best = -1
        if leftmost:
            for x in range(W):
                if F[k, x] and need[x]:
                    best = x
                    break
        else:
            for x in range(W - 1, -1, -1):
                if F[k, x] and need[x]:
                    best = x
                    break
        out[k] = best
        if k == 0:
            break
        kk = ev_kinds[k - 1]
        s = ev_sites[k - 1]
        if kk == 0:
            need[s] = 0
        elif kk == 1 or kk == 2:
            d = s + 1 if kk == 1 else s - 1
            if need[d]:
                need[s] = 1
        for x in range(W):
            need[x] &= allowed[k - 1, x]
    return out


@njit(cache=True)
def _tube_step(F, need, x, best, leftmost, W):
    """Update the extremal tube site after site x changed membership."""
    inside = F[x] and need[x]
    if leftmost:
        if inside and (best < 0 or x < best):
            return x
        if (not inside) and x == best:
            for y in range(x + 1, W):
                if F[y] and need[y]:
                    return y
            return -1
    else:
        if inside and (best < 0 or x > best):
            return x
        if (not inside) and x == best:
            for y in range(x - 1, -1, -1):
                if F[y] and need[y]:
                    return y
            return -1
    return best


@njit(cache=True)
def tube_rollback(kinds, sites, F, prev_F, target, leftmost):
    """Extremal path from the bottom of a sweep to (target, end).

    ``F`` is the reachable-from-bottom set at the end of a ``cp_sweep`` over
    (kinds, sites) with ``prev_F`` its rollback record; it is modified.
    Returns (path, edge) where ``path[k]`` is the site during epoch k
    (epoch 0 precedes event 0) and ``edge`` tells whether the backward set
    ever touched the outer column on the extremal side.
    """
    n = kinds.shape[0]
    W = F.shape[0]
    out = np.zeros(n + 1, np.int64)
    if not F[target]:
        return np.zeros(0, np.int64), False
    need = np.zeros(W, np.uint8)
    need[target] = 1
    best = target
    edge_col = 0 if leftmost else W - 1
    edge = target == edge_col
    for k in range(n, -1, -1):
        out[k] = best
        if k == 0:
            break
        e = k - 1
        s = sites[e]
        kk = kinds[e]
        if kk == 0:
            need[s] = 0
            F[s] = prev_F[e]
            best = _tube_step(F, need, s, best, leftmost, W)
        else:
            d = s + 1 if kk == 1 else s - 1
            F[d] = prev_F[e]
            best = _tube_step(F, need, d, best, leftmost, W)
            if need[d] and not need[s]:
                need[s] = 1
                if s == edge_col:
                    edge = True
                best = _tube_step(F, need, s, best, leftmost, W)
        if best < 0:
            return np.zeros(0, np.int64), edge
    return out, edge


@njit(cache=True)
def tube_snap_delta(ev_kinds, ev_sites, allowed0, chg_site, chg_val, start, target, leftmost):
    """``tube_snap`` with the allowed sets given as changes: epoch k+1 is
    epoch k with site ``chg_site[k]`` (-1: none) set to ``chg_val[k]``.

    Linear in the number of events apart from extremal-site rescans.
    """
    m = ev_kinds.shape[0]
    W = allowed0.shape[0]
    A = allowed0.copy()
    F = np.zeros(W, np.uint8)
    F[start] = A[start]
    # per event: graph-changed site and its old value, allowed-changed site
    # with old F and old A values
    g_old = np.zeros(m, np.uint8)
    a_oldF = np.zeros(m, np.uint8)
    a_oldA = np.zeros(m, np.uint8)
    for k in range(m):
        kk = ev_kinds[k]
        s = ev_sites[k]
        c = chg_site[k]
        if c >= 0:
            a_oldA[k] = A[c]
            A[c] = chg_val[k]
        if kk == 0:
            g_old[k] = F[s]
            F[s] = 0
        elif kk == 1 or kk == 2:
            d = s + 1 if kk == 1 else s - 1
            g_old[k] = F[d]
            if F[s] and A[d]:
                F[d] = 1
        if c >= 0:
            a_oldF[k] = F[c]
            if not A[c]:
                F[c] = 0
    if not F[target]:
        return np.zeros(0, np.int64)
    need = np.zeros(W, np.uint8)
    need[target] = 1
    best = target
    out = np.zeros(m + 1, np.int64)
    for k in range(m, -1, -1):
        out[k] = best
        if k == 0:
            break
        e = k - 1
        c = chg_site[e]
        if c >= 0:
            F[c] = a_oldF[e]
            A[c] = a_oldA[e]
        kk = ev_kinds[e]
        s = ev_sites[e]
        if kk == 0:
            F[s] = g_old[e]
            need[s] = 0
            best = _tube_step(F, need, s, best, leftmost, W)
        elif kk == 1 or kk == 2:
            d = s + 1 if kk == 1 else s - 1
            F[d] = g_old[e]
            best = _tube_step(F, need, d, best, leftmost, W)
            if need[d] and not need[s] and A[s]:
                need[s] = 1
                best = _tube_step(F, need, s, best, leftmost, W)
        if c >= 0:
            best = _tube_step(F, need, c, best, leftmost, W)
            if need[c] and not A[c]:
                need[c] = 0
                best = _tube_step(F, need, c, best, leftmost, W)
        if best < 0:
            return np.zeros(0, np.int64)
    return out


@njit(cache=True)
def dual_lifetime(times, kinds, sites, A):
    """Backward reachability from the sites in ``A`` at the end of the log.

    Returns (depth, survived, edge): depth = end-relative time at which the
    dual set dies out (the log is assumed to end at time 0, so depth = -t),
    ``survived`` if it reaches the start of the log, ``edge`` if it ever
    touched an outer column.
    """
    W = A.shape[0]
    need = A.copy()
    cnt = 0
    for x in range(W):
        cnt += need[x]
    edge = bool(need[0]) or bool(need[W - 1])
    if cnt == 0:
        return -INF, False, edge
    for e in range(times.shape[0] - 1, -1, -1):
        s = sites[e]
        if kinds[e] == 0:
            if need[s]:
                need[s] = 0
                cnt -= 1
                if cnt == 0:
                    return -times[e], False, edge
        else:
            d = s + 1 if kinds[e] == 1 else s - 1
            if need[d] and not need[s]:
                need[s] = 1
                cnt += 1
                if s == 0 or s == W - 1:
                    edge = True
    return INF, True, edge


@njit(cache=True)
def merge_sorted_segments(s):
    """Union of closed segments (site, a, b) sorted by (site, a)."""
    n = s.shape[0]
    out = np.empty((n, 3))
    m = 0
    for i in range(n):
        if m > 0 and out[m - 1, 0] == s[i, 0] and s[i, 1] <= out[m - 1, 2]:
            if s[i, 2] > out[m - 1, 2]:
                out[m - 1, 2] = s[i, 2]
        else:
            out[m, 0] = s[i, 0]
            out[m, 1] = s[i, 1]
            out[m, 2] = s[i, 2]
            m += 1
    return out[:m].copy()


@njit(cache=True)
def assemble_blocks(expo, unif, counts, t_lo, length, block, lam, x_lo, x_hi):
    """Merge per-block Poisson draws into one time-sorted event table.

    Block b covers sites x_lo + b*block ... and owns the death marks of its
    sites and the arrows leaving them.  ``expo`` holds count+1 exponentials
    per block (normalised spacings), ``unif`` count uniforms per block.
    Arrows leaving the window are dropped.
    """
    nb = counts.shape[0]
    total = 0
    for b in range(nb):
        total += counts[b]
    times = np.empty(total)
    kinds = np.empty(total, np.int8)
    sites = np.empty(total, np.int64)
    rate = block * (1.0 + 2.0 * lam)
    pe = 0
    pu = 0
    k = 0
    for b in range(nb):
        n = counts[b]
        s = 0.0
        for i in range(n + 1):
            s += expo[pe + i]
        inv = length / s
        c = 0.0
        for i in range(n):
            c += expo[pe + i]
            times[k] = t_lo + c * inv
            u = unif[pu + i] * rate
            if u < block:
                kinds[k] = 0
                sites[k] = x_lo + b * block + int(u)
            else:
                e = (u - block) / lam
                if e < block:
                    kinds[k] = 1
                    sites[k] = x_lo + b * block + min(int(e), block - 1)
                else:
                    kinds[k] = 2
                    sites[k] = x_lo + b * block + min(int(e - block), block - 1)
            k += 1
        pe += n + 1
        pu += n
    # k-way merge of the per-block sorted runs
    starts = np.zeros(nb + 1, np.int64)
    for b in range(nb):
        starts[b + 1] = starts[b] + counts[b]
    head = starts[:nb].copy()
    cur = np.empty(nb)
    for b in range(nb):
        cur[b] = times[head[b]] if head[b] < starts[b + 1] else INF
    out_t = np.empty(total)
    out_k = np.empty(total, np.int8)
    out_s = np.empty(total, np.int64)
    m = 0
    for _ in range(total):
        best = 0
        bt = cur[0]
        for b in range(1, nb):
            if cur[b] < bt:
                bt = cur[b]
                best = b
        i = head[best]
        head[best] = i + 1
        cur[best] = times[i + 1] if i + 1 < starts[best + 1] else INF
        k = kinds[i]
        x = sites[i]
        if (k == 1 and x == x_hi) or (k == 2 and x == x_lo):
            continue
        out_t[m] = bt
        out_k[m] = k
        out_s[m] = x
        m += 1
    return out_t[:m], out_k[:m], out_s[:m]
