"""Patchwork construction for the barrier process (CBP) and the two-type
process (MCP).

A patch starts from a trail g (a set of space-time points in negative time),
samples the initial configuration it induces, runs the dynamics until the
adjacency time T and returns the record (T, X, D, Gamma, interface segment).
The next patch starts from the trail g + Gamma, re-centred.  Sewing the
interface segments reproduces the law of the process from the Heaviside start.

Monte Carlo patches run on a finite window whose exterior is carried as
uncertainty by the compiled engines; a patch whose output could depend on
the exterior is marked ``taint`` and not used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from . import rng as _rng
from .dynamics import (CbpConfiguration, CbpParams, InterfaceTrajectory, McpConfiguration, McpParams,
                       _compress)
from .events import (EventLog, FlightPlan, LatticePath, concat_paths, sample_blocked_log,
                     sample_flight_plan)

INF = math.inf

# ---------------------------------------------------------------------------
# trails


@dataclass(frozen=True, eq=False)
class Trail:
    """Finite union of closed vertical segments {site} x [a, b] in
    [-h_neg, 0], plus optional horizontal rays {x : direction*(x - first) >= 0}
    x {time} (the Heaviside footprint and its translates)."""

    segments: np.ndarray
    rays: np.ndarray
    direction: int
    anchor: int
    h_neg: float

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=np.float64).reshape(-1, 3)
        ray = np.asarray(self.rays, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "segments", seg)
        object.__setattr__(self, "rays", ray)
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if not self.h_neg > 0:
            raise ValueError("h_neg must be positive")
        if seg.size and (np.any(seg[:, 1] > seg[:, 2]) or seg[:, 1].min() < -self.h_neg or seg[:, 2].max() > 0):
            raise ValueError("segment times must be ordered and lie in [-h_neg, 0]")
        if ray.size and (ray[:, 1].min() < -self.h_neg or ray[:, 1].max() > 0):
            raise ValueError("ray times must lie in [-h_neg, 0]")
        if not self.contains(self.anchor, 0.0):
            raise ValueError(f"trail must contain its anchor ({self.anchor}, 0)")

    def contains(self, site: int, t: float) -> bool:
        s = self.segments
        if s.size and np.any((s[:, 0] == site) & (s[:, 1] <= t) & (t <= s[:, 2])):
            return True
        r = self.rays
        return bool(r.size and np.any((r[:, 1] == t) & (self.direction * (site - r[:, 0]) >= 0)))

    def sites_at(self, t: float, window) -> set:
        return {x for x in range(int(window[0]), int(window[1]) + 1) if self.contains(x, t)}

    def materialize(self, window) -> list[tuple[int, float, float]]:
        """Sorted segment list with the rays expanded over ``window``."""
        out = {(int(x), float(a), float(b)) for x, a, b in self.segments.tolist()}
        x_lo, x_hi = int(window[0]), int(window[1])
        for first, t in self.rays.tolist():
            xs = range(max(int(first), x_lo), x_hi + 1) if self.direction > 0 else range(x_lo, min(int(first), x_hi) + 1)
            out |= {(x, t, t) for x in xs}
        return sorted(out)

    def shifted(self, dx: int, dt: float) -> "Trail":
        seg = self.segments.copy()
        seg[:, 0] += dx
        seg[:, 1:] += dt
        ray = self.rays.copy()
        ray[:, 0] += dx
        ray[:, 1] += dt
        return _truncated(seg, ray, self.direction, self.anchor, self.h_neg)

    def restricted(self, depth: float) -> "Trail":
        """The part of the trail in Z x [-depth, 0]."""
        d = min(depth, self.h_neg)
        seg = self.segments[self.segments[:, 2] >= -d].copy()
        seg[:, 1] = np.maximum(seg[:, 1], -d)
        ray = self.rays[self.rays[:, 1] >= -d]
        return Trail(seg, ray, self.direction, self.anchor, self.h_neg)

    def forcing(self, x_lo: int, x_hi: int):
        """Source events for a sweep over the window (kind 1 start, 0 end);
        starts sort before ends at equal times."""
        seg = self.segments
        inside = (seg[:, 0] >= x_lo) & (seg[:, 0] <= x_hi)
        s_sites = seg[inside, 0].astype(np.int64)
        a, b = seg[inside, 1], seg[inside, 2]
        r_sites, r_times = [], []
        for first, t in self.rays.tolist():
            if self.direction > 0:
                xs = np.arange(max(int(first), x_lo), x_hi + 1)
            else:
                xs = np.arange(x_lo, min(int(first), x_hi) + 1)
            r_sites.append(xs)
            r_times.append(np.full(xs.shape[0], t))
        if r_sites:
            p_sites = np.concatenate(r_sites)
            p_times = np.concatenate(r_times)
        else:
            p_sites = np.zeros(0, np.int64)
            p_times = np.zeros(0)
        sites = np.concatenate([s_sites, s_sites, p_sites, p_sites])
        times = np.concatenate([a, b, p_times, p_times])
        kinds = np.concatenate([np.ones(a.shape[0], np.int8), np.zeros(a.shape[0], np.int8),
                                np.ones(p_times.shape[0], np.int8), np.zeros(p_times.shape[0], np.int8)])
        order = np.lexsort((-kinds.astype(np.int64), times))
        return times[order], kinds[order], sites[order]

    def spliced(self, other: "Trail", depth: float) -> "Trail":
        """This trail on Z x [-depth, 0] and ``other`` strictly below it."""
        top = self.restricted(depth)
        cut = np.nextafter(-min(depth, self.h_neg), -np.inf)
        seg = other.segments[other.segments[:, 1] <= cut].copy()
        seg[:, 2] = np.minimum(seg[:, 2], cut)
        seg = np.concatenate([top.segments, seg])
        seg = seg[np.lexsort((seg[:, 1], seg[:, 0]))]
        ray = np.concatenate([top.rays, other.rays[other.rays[:, 1] <= cut]])
        return Trail(seg, ray, self.direction, self.anchor, self.h_neg)

    def equal_on(self, other: "Trail", depth: float, window) -> bool:
        return self.restricted(depth).materialize(window) == other.restricted(depth).materialize(window)

    def __len__(self):
        return int(self.segments.shape[0] + self.rays.shape[0])


def _truncated(seg, ray, direction, anchor, h_neg) -> Trail:
    seg = seg[seg[:, 2] >= -h_neg]
    seg[:, 1] = np.maximum(seg[:, 1], -h_neg)
    ray = ray[ray[:, 1] >= -h_neg]
    return Trail(_merge_segments(seg), ray, direction, anchor, h_neg)


def _merge_segments(seg: np.ndarray) -> np.ndarray:
    """Union of overlapping or touching segments on the same site."""
    if seg.shape[0] < 2:
        return seg
    return K.merge_sorted_segments(np.ascontiguousarray(seg[np.lexsort((seg[:, 1], seg[:, 0]))]))


@dataclass(frozen=True, eq=False)
class TrailPair:
    g1: Trail
    g2: Trail

    def __post_init__(self):
        if self.g1.direction != -1 or self.g1.anchor != 0 or self.g2.direction != 1 or self.g2.anchor != 1:
            raise ValueError("pair must hold a left trail anchored at 0 and a right trail anchored at 1")
        if self.g1.h_neg != self.g2.h_neg:
            raise ValueError("trails of a pair must share h_neg")

    @property
    def h_neg(self):
        return self.g1.h_neg

    def equal_on(self, other: "TrailPair", depth: float, window) -> bool:
        return self.g1.equal_on(other.g1, depth, window) and self.g2.equal_on(other.g2, depth, window)

    def restricted(self, depth: float) -> "TrailPair":
        return TrailPair(self.g1.restricted(depth), self.g2.restricted(depth))

    def spliced(self, other: "TrailPair", depth: float) -> "TrailPair":
        return TrailPair(self.g1.spliced(other.g1, depth), self.g2.spliced(other.g2, depth))


AnyTrail = Union[Trail, TrailPair]


def heaviside_trail(model: str = "cbp", window=None, h_neg: float = 30.0) -> AnyTrail:
    """Trail(s) whose induced configuration is the Heaviside one.

    With ``window`` the footprint is returned as explicit point segments over
    the window, otherwise as a ray."""

    def make(direction, anchor):
        if window is None:
            return Trail(np.zeros((0, 3)), np.array([[anchor, 0.0]]), direction, anchor, h_neg)
        x_lo, x_hi = int(window[0]), int(window[1])
        xs = range(anchor, x_hi + 1) if direction > 0 else range(x_lo, anchor + 1)
        return Trail(np.array([[x, 0.0, 0.0] for x in xs]).reshape(-1, 3), np.zeros((0, 2)), direction, anchor, h_neg)

    if model == "cbp":
        return make(1, 1)
    if model == "mcp":
        return TrailPair(make(-1, 0), make(1, 1))
    raise ValueError(f"unknown model {model!r}")


def anchor_trail(model: str = "cbp", h_neg: float = 30.0) -> AnyTrail:
    """Smallest admissible trail: the anchor point(s) only."""
    if model == "cbp":
        return Trail(np.array([[1, 0.0, 0.0]]), np.zeros((0, 2)), 1, 1, h_neg)
    return TrailPair(Trail(np.array([[0, 0.0, 0.0]]), np.zeros((0, 2)), -1, 0, h_neg),
                     Trail(np.array([[1, 0.0, 0.0]]), np.zeros((0, 2)), 1, 1, h_neg))


def append_trail(trail: AnyTrail, gamma, model: Optional[str] = None) -> AnyTrail:
    """g + gamma: union of the trail and the closed graph of gamma, translated
    so that gamma's endpoint lands on the anchor and gamma's end time on 0.

    For a pair, ``gamma`` is (gamma1, gamma2) and both entries use the shift
    that takes gamma1's endpoint to (0, 0)."""
    if isinstance(trail, TrailPair):
        g1, g2 = gamma
        if g1.b != g2.b:
            raise ValueError("paths of a pair must end at the same time")
        dx = -g1.end_site
        if g2.end_site + dx != 1:
            raise ValueError("pair paths must end on adjacent sites")
        return TrailPair(_append_one(trail.g1, g1, dx), _append_one(trail.g2, g2, dx))
    if isinstance(gamma, (tuple, list)):
        raise ValueError("a single trail takes a single path")
    return _append_one(trail, gamma, trail.anchor - gamma.end_site)


def _append_one(trail: Trail, gamma: LatticePath, dx: int) -> Trail:
    if gamma.b < 0:
        raise ValueError("path must end at a non-negative time")
    pieces = np.array(gamma.pieces(), dtype=np.float64).reshape(-1, 3)
    seg = np.concatenate([trail.segments, pieces])
    seg[:, 0] += dx
    seg[:, 1:] -= gamma.b
    ray = trail.rays.copy()
    ray[:, 0] += dx
    ray[:, 1] -= gamma.b
    return _truncated(seg, ray, trail.direction, trail.anchor, trail.h_neg)


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class SpecialSet:
    sites: frozenset
    survival_horizon: float = 30.0

    def __contains__(self, x):
        return x in self.sites


@dataclass(frozen=True, eq=False)
class PatchRecord:
    model: str
    T: float
    X: tuple
    D: float
    gamma: tuple
    segment: Optional[InterfaceTrajectory]
    taint: bool = False
    reason: str = ""
    depth_capped: bool = False
    extensions: int = 0
    window: tuple = ()
    regrowths: int = 0

    @property
    def shift(self) -> int:
        """Displacement of the re-centring site (B_T or r_T)."""
        return int(self.segment.left[-1])

    def __eq__(self, other):
        if not isinstance(other, PatchRecord):
            return NotImplemented
        return (self.model == other.model and self.taint == other.taint and _same(self.T, other.T)
                and self.X == other.X and _same(self.D, other.D) and self.gamma == other.gamma
                and self.segment == other.segment)

    def csv_row(self, n: int) -> str:
        flag = int(self.taint)
        if self.model == "cbp":
            x = ",".join(str(v) for v in self.X) if self.X else ""
        else:
            x = ",".join(str(v) for v in self.X) if self.X else ","
        return f"{n},{_fmt(self.T)},{x},{_fmt(self.D)},{flag}"


def _same(a, b):
    return a == b or (math.isnan(a) and math.isnan(b))


def _fmt(v: float) -> str:
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def _tainted(model, reason, extensions=0) -> PatchRecord:
    return PatchRecord(model, math.nan, (), math.nan, (), None, True, reason, False, extensions)


@dataclass(frozen=True)
class PatchConfig:
    """Horizons and window margins of a patch.

    ``h_neg``: depth of the negative-time construction; ``h_surv``: nominal
    survival horizon (recorded only); ``adj_horizon``: first positive-time
    span, doubled while no adjacency occurs, up to ``max_adj_horizon``.
    Margins of ``None`` are sized from the rates.  A patch whose result could
    depend on the outside of its window is recomputed on a window wider by
    ``grow`` (at most ``max_grow`` times); events already seen are kept.
    """

    h_neg: float = 30.0
    h_surv: float = 30.0
    adj_horizon: float = 2.0
    max_adj_horizon: float = 1024.0
    margin_left: Optional[int] = None
    margin_right: Optional[int] = None
    grow: float = 1.5
    max_grow: int = 8
    lookahead: int = 10

    def __post_init__(self):
        if not (self.h_neg > 0 and self.h_surv > 0 and self.adj_horizon >= 1):
            raise ValueError("horizons must be positive and adj_horizon >= 1")
        if not self.grow > 1:
            raise ValueError("grow must exceed 1")

    def margins(self, model: str, lam: float) -> tuple[int, int]:
        far = _spread(lam, self.h_neg)
        near = max(far // 2, 24)
        # the CBP special path runs leftwards into the past, the barrier side
        # of the MCP is symmetric
        dl, dr = (far, near) if model == "cbp" else (far, far)
        left = self.margin_left if self.margin_left is not None else dl
        right = self.margin_right if self.margin_right is not None else dr
        return int(left), int(right)


def _spread(lam: float, h: float) -> int:
    # a little beyond the distance travelled by a dual front in time h
    v = 0.62 * max(lam, 1.0)
    return int(math.ceil(v * h + 2.0 * math.sqrt(max(lam, 1.0) * h))) + 4


# ---------------------------------------------------------------------------
# API-level pieces on closed windows


_NOF = (np.zeros(0), np.zeros(0, np.int8), np.zeros(0, np.int64))


def sample_initial(trail: AnyTrail, neg_log, h_surv: float = 30.0, pos_log=None, seed=None):
    """Configuration induced by a trail and the negative-time construction.

    A site is occupied iff it is reached from the bottom of the log or from
    the trail.  The special set holds the sites reached from the bottom
    alone.  The window of the log is taken as the whole space.
    ``pos_log`` and ``seed`` are accepted for interface compatibility;
    the special set does not depend on them.
    """
    if isinstance(trail, TrailPair):
        h1, h2 = neg_log
        occ1, s1 = _induced(trail.g1, h1)
        occ2, s2 = _induced(trail.g2, h2)
        x1 = {x for x in occ1 if x <= 0}
        x2 = {x for x in occ2 if x >= 1}
        conf = McpConfiguration(frozenset(x1), frozenset(x2))
        return conf, (SpecialSet(frozenset(x for x in s1 if x <= 0), h_surv),
                      SpecialSet(frozenset(x for x in s2 if x >= 1), h_surv))
    occ, s = _induced(trail, neg_log)
    conf = CbpConfiguration(0, frozenset(x for x in occ if x >= 1))
    return conf, SpecialSet(frozenset(x for x in s if x >= 1), h_surv)


def _check_neg(trail: Trail, log: EventLog):
    if log.t_hi != 0.0 or abs(log.t_lo + trail.h_neg) > 1e-12:
        raise ValueError(f"negative log must span [-{trail.h_neg}, 0], got {log.span}")


def _induced(trail: Trail, log: EventLog):
    _check_neg(trail, log)
    W = log.width
    sites = log.sites - log.x_lo
    s = np.ones(W, np.uint8)
    K.cp_sweep(log.times, log.kinds, sites, s, s.copy(), False, False, *_NOF, 0.0, False, False)
    occ = np.ones(W, np.uint8)
    ft, fk, fs = trail.forcing(log.x_lo, log.x_hi)
    K.cp_sweep(log.times, log.kinds, sites, occ, occ.copy(), False, False, ft, fk, fs - log.x_lo, 0.0, False, False)
    xs = np.arange(log.x_lo, log.x_hi + 1)
    return set(xs[occ == 1].tolist()), set(xs[s == 1].tolist())


@dataclass(frozen=True, eq=False)
class Adjacency:
    T: float
    X: tuple
    gamma: tuple
    timeout: bool = False


def find_adjacency(model: str, initial, special, logs, plan: Optional[FlightPlan] = None,
                   params: Optional[CbpParams] = None, horizon: float = 16.0) -> Adjacency:
    """Adjacency time, anchor site(s) and positive-time special path(s) on a
    closed window (the log window is the whole space)."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if model == "cbp":
        return _adjacency_cbp(initial, special, logs, plan, params, horizon)
    if model == "mcp":
        return _adjacency_mcp(initial, special, logs, horizon)
    raise ValueError(f"unknown model {model!r}")


def _labels(sd, fill):
    return np.where(sd == 1, np.arange(sd.shape[0]), fill).astype(np.int64)


def _adjacency_cbp(initial: CbpConfiguration, special: SpecialSet, log: EventLog, plan, params, horizon):
    if plan is None or params is None:
        raise ValueError("CBP adjacency needs a flight plan and parameters")
    if not special.sites:
        raise ValueError("special set is empty")
    if not special.sites <= initial.occupied:
        raise ValueError("special sites must be occupied")
    x_lo = log.x_lo
    W = log.width
    lo = np.zeros(W, np.uint8)
    for x in initial.occupied:
        lo[x - x_lo] = 1
    sd = np.zeros(W, np.uint8)
    for x in special.sites:
        sd[x - x_lo] = 1
    a0, a1 = params.thresholds
    b0 = initial.barrier - x_lo
    pt, pk, pm = plan.times, plan.kinds, plan.marks
    res = K.cbp_run(log.times, log.kinds, log.sites - x_lo, pt, pk, pm, a0, a1, lo, lo.copy(), b0, False, True,
                    sd, sd.copy(), _labels(sd, K.BIG), _labels(sd, K.BIG), np.int64(W), 0.0, float(horizon), 1.0,
                    False, True)
    T = float(res[2])
    if not T < INF:
        return Adjacency(INF, (), (), True)
    X = int(res[3])
    n_ev, ev_code, ev_b = res[12], res[13][: res[12]], res[14][: res[12]]
    kinds, sites, starts = _merge_codes(ev_code, log.kinds, log.sites - x_lo, log.times, plan.times)
    path = _barrier_free_path(kinds, sites, np.concatenate([[b0], ev_b]), W, X)
    gamma = LatticePath.from_epochs(0.0, T, np.concatenate([[0.0], starts]), path + x_lo)
    return Adjacency(T, (X + x_lo,), (gamma,))


def _barrier_free_path(kinds, sites, bseq, W, start):
    """Leftmost path right of the barrier from ``start`` to the site next to
    the final barrier; ``bseq[k]`` is the barrier during epoch k."""
    allowed0 = (np.arange(W) > bseq[0]).astype(np.uint8)
    step = np.diff(bseq)
    chg = np.where(step > 0, bseq[1:], np.where(step < 0, bseq[:-1], -1)).astype(np.int64)
    val = (step < 0).astype(np.uint8)
    return K.tube_snap_delta(kinds, sites, allowed0, chg, val, start, int(bseq[-1]) + 1, True)


def _merge_codes(ev_code, kinds, sites, times, other_times):
    """Event tables of a processed interleaving (log events keep their kind,
    events of the other stream become kind 3)."""
    own = ev_code >= 0
    idx = np.where(own, ev_code, 0)
    oth = np.where(own, 0, -ev_code - 1)
    k = np.where(own, kinds[idx] if kinds.size else 0, 3).astype(np.int8)
    s = np.where(own, sites[idx] if sites.size else 0, 0).astype(np.int64)
    t = np.where(own, times[idx] if times.size else 0.0, other_times[oth] if other_times.size else 0.0)
    return k, s, t


def _adjacency_mcp(initial: McpConfiguration, special, logs, horizon):
    h1, h2 = logs
    s1, s2 = special
    if not s1.sites or not s2.sites:
        raise ValueError("special set is empty")
    x_lo = h1.x_lo
    W = h1.width
    lo1 = np.zeros(W, np.uint8)
    lo2 = np.zeros(W, np.uint8)
    for x in initial.type1:
        lo1[x - x_lo] = 1
    for x in initial.type2:
        lo2[x - x_lo] = 1
    sd1 = np.zeros(W, np.uint8)
    sd2 = np.zeros(W, np.uint8)
    for x in s1.sites:
        sd1[x - x_lo] = 1
    for x in s2.sites:
        sd2[x - x_lo] = 1
    if np.any(sd1 > lo1) or np.any(sd2 > lo2):
        raise ValueError("special sites must hold their type")
    res = K.mcp_run(h1.times, h1.kinds, h1.sites - x_lo, h2.times, h2.kinds, h2.sites - x_lo,
                    lo1, lo1.copy(), lo2, lo2.copy(), False, False, True,
                    sd1, sd1.copy(), _labels(sd1, K.NEG), _labels(sd1, K.NEG),
                    sd2, sd2.copy(), _labels(sd2, K.BIG), _labels(sd2, K.BIG),
                    np.int64(-1), np.int64(W), 0.0, float(horizon), 1.0, False, True)
    return _mcp_adjacency_from(res, h1, h2, x_lo, W, check_up=False)


def _mcp_adjacency_from(res, h1, h2, x_lo, W, check_up):
    T = float(res[1])
    if not T < INF:
        return Adjacency(INF, (), (), True)
    X1, X2 = int(res[2]), int(res[3])
    n_if = res[4]
    r_T = int(res[6][n_if - 1])
    n_ev = res[11]
    code = res[12][1:n_ev]
    k1, s1, t1 = _merge_codes(code, h1.kinds, h1.sites - x_lo, h1.times, h2.times)
    c2 = -code - 1
    k2, s2, _ = _merge_codes(c2, h2.kinds, h2.sites - x_lo, h2.times, h1.times)
    starts = np.concatenate([[0.0], t1])
    ev0, site, val = res[13], res[14][1:n_ev], res[15][1:n_ev]

    def path(i, kinds, sites, start, target, leftmost):
        return K.tube_snap_delta(kinds, sites, ev0[i], site, np.ascontiguousarray(val[:, i]), start, target,
                                 leftmost)

    p1 = path(0, k1, s1, X1, r_T, False)
    p2 = path(2, k2, s2, X2, r_T + 1, True)
    if p1.size == 0 or p2.size == 0:
        raise RuntimeError("adjacency reported without a special path")
    if check_up:
        q1 = path(1, k1, s1, X1, r_T, False)
        q2 = path(3, k2, s2, X2, r_T + 1, True)
        if not (np.array_equal(p1, q1) and np.array_equal(p2, q2)):
            return None
    g1 = LatticePath.from_epochs(0.0, T, starts, p1 + x_lo)
    g2 = LatticePath.from_epochs(0.0, T, starts, p2 + x_lo)
    return Adjacency(T, (X1 + x_lo, X2 + x_lo), (g1, g2))


def compute_depth(model: str, neg_log, anchor, special, with_flag: bool = False):
    """Depth of the non-special sites between the anchors on a closed window.

    CBP: sites 1..X outside S.  MCP: sites X1..0 outside S1 are traced back
    in the type-1 construction, sites 1..X2 outside S2 in the type-2 one.
    Returns -inf if there is no such site; a dual that reaches the bottom of
    the log is capped at the log depth (flag returned with ``with_flag``).
    """
    if model == "cbp":
        X = int(anchor if np.isscalar(anchor) else anchor[0])
        parts = [(neg_log, range(1, X + 1), special)]
    elif model == "mcp":
        X1, X2 = (int(a) for a in anchor)
        h1, h2 = neg_log
        s1, s2 = special
        parts = [(h1, range(X1, 1), s1), (h2, range(1, X2 + 1), s2)]
    else:
        raise ValueError(f"unknown model {model!r}")
    best, capped = -INF, False
    for log, rng, sp in parts:
        A = np.zeros(log.width, np.uint8)
        for x in rng:
            if x not in sp.sites:
                if not log.x_lo <= x <= log.x_hi:
                    raise ValueError(f"site {x} outside the log window")
                A[x - log.x_lo] = 1
        d, survived, _ = K.dual_lifetime(log.times, log.kinds, log.sites - log.x_lo, A)
        if survived:
            d, capped = -log.t_lo, True
        best = max(best, float(d))
    return (best, capped) if with_flag else best


# ---------------------------------------------------------------------------
# Monte Carlo patches on open windows


def run_patch(model: str, trail: AnyTrail, params, config: PatchConfig = PatchConfig(), seed=0) -> PatchRecord:
    """One patch from ``trail``; deterministic in ``seed`` (an int or key tuple)."""
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    if model == "cbp":
        if not isinstance(trail, Trail) or not isinstance(params, CbpParams):
            raise ValueError("CBP patch needs a Trail and CbpParams")
        build, lam = _patch_cbp, params.lam
    elif model == "mcp":
        if not isinstance(trail, TrailPair) or not isinstance(params, McpParams):
            raise ValueError("MCP patch needs a TrailPair and McpParams")
        build, lam = _patch_mcp, max(params.lam1, params.lam2)
    else:
        raise ValueError(f"unknown model {model!r}")
    if abs(trail.h_neg - config.h_neg) > 1e-12:
        raise ValueError("trail depth and config h_neg differ")
    L, R = config.margins(model, lam)
    rec = None
    for attempt in range(config.max_grow + 1):
        rec = build(trail, params, config, key, L, R)
        if not (rec.taint and rec.reason.startswith("exterior")):
            return replace(rec, regrowths=attempt)
        L = int(math.ceil(L * config.grow))
        R = int(math.ceil(R * config.grow))
    return replace(rec, reason="window", regrowths=config.max_grow)


def _neg_sweeps(log: EventLog, trail: Trail):
    """Special-set sweep (with rollback record) and trail sweep."""
    W = log.width
    sites = log.sites - log.x_lo
    s_lo = np.ones(W, np.uint8)
    s_up = np.ones(W, np.uint8)
    prev_lo, prev_up, _, _, _, _ = K.cp_sweep(log.times, log.kinds, sites, s_lo, s_up, True, True, *_NOF, 0.0,
                                               True, False)
    b_lo = np.ones(W, np.uint8)
    b_up = np.ones(W, np.uint8)
    ft, fk, fs = trail.forcing(log.x_lo, log.x_hi)
    K.cp_sweep(log.times, log.kinds, sites, b_lo, b_up, True, True, ft, fk, fs - log.x_lo, 0.0, False, False)
    return sites, s_lo, s_up, prev_lo, prev_up, b_lo, b_up


def _neg_path(log, sites, s_lo, s_up, prev_lo, prev_up, target, leftmost):
    p_lo, e_lo = K.tube_rollback(log.kinds, sites, s_lo.copy(), prev_lo, target, leftmost)
    p_up, e_up = K.tube_rollback(log.kinds, sites, s_up.copy(), prev_up, target, leftmost)
    if e_lo or e_up or p_lo.size == 0 or not np.array_equal(p_lo, p_up):
        return None
    return LatticePath.from_epochs(log.t_lo, 0.0, np.concatenate([[log.t_lo], log.times]), p_lo + log.x_lo)


def _depth(log, sites, s_lo, s_up, i0, i1):
    """(depth, capped) of the non-special sites with indices i0..i1; None if
    the exterior could matter.  A dual reaching the bottom is capped there."""
    if i1 < i0:
        return -INF, False
    if not np.array_equal(s_lo[i0:i1 + 1], s_up[i0:i1 + 1]):
        return None
    A = np.zeros(s_lo.shape[0], np.uint8)
    A[i0:i1 + 1] = 1 - s_lo[i0:i1 + 1]
    d, survived, edge = K.dual_lifetime(log.times, log.kinds, sites, A)
    if edge:
        return None
    if survived:
        return -float(log.t_lo), True
    return float(d), False


def _patch_cbp(trail: Trail, params: CbpParams, cfg: PatchConfig, key, L: int, R: int) -> PatchRecord:
    h = trail.h_neg
    neg = sample_blocked_log((-L, R), (-h, 0.0), params.lam, key + (_rng.NEG,))
    x_lo, x_hi = neg.window
    W = neg.width
    base = -x_lo
    sites, s_lo, s_up, prev_lo, prev_up, b_lo, b_up = _neg_sweeps(neg, trail)
    b_lo[: base + 1] = 0
    b_up[: base + 1] = 0
    sd_l = s_lo.copy()
    sd_u = s_up.copy()
    sd_l[: base + 1] = 0
    sd_u[: base + 1] = 0
    a0, a1 = params.thresholds

    span = cfg.adj_horizon
    pos = sample_blocked_log((x_lo, x_hi), (0.0, span), params.lam, key + (_rng.POS, 0))
    plan = sample_flight_plan(params.r_left, params.r0, params.r1, (0.0, span), key + (_rng.PLAN, 0))
    ext = 0
    while True:
        res = K.cbp_run(pos.times, pos.kinds, pos.sites - x_lo, plan.times, plan.kinds, plan.marks, a0, a1,
                        b_lo.copy(), b_up.copy(), base, True, True, sd_l.copy(), sd_u.copy(),
                        _labels(sd_l, K.BIG), _labels(sd_u, K.BIG), np.int64(W), 0.0, span, 1.0, False, True)
        if res[1] <= span:
            return _tainted("cbp", "exterior:run", ext)
        if res[2] < INF:
            break
        if span * 2 > cfg.max_adj_horizon:
            return _tainted("cbp", "timeout", ext)
        ext += 1
        pos = pos.extend(sample_blocked_log((x_lo, x_hi), (span, 2 * span), params.lam, key + (_rng.POS, ext)))
        plan = plan.extend(sample_flight_plan(params.r_left, params.r0, params.r1, (span, 2 * span),
                                              key + (_rng.PLAN, ext)))
        span *= 2
    T = float(res[2])
    Xi = int(res[3])
    n_ev = res[12]
    kinds, psites, starts = _merge_codes(res[13][:n_ev], pos.kinds, pos.sites - x_lo, pos.times, plan.times)
    p = _barrier_free_path(kinds, psites, np.concatenate([[base], res[14][:n_ev]]), W, Xi)
    if p.size == 0:
        raise RuntimeError("adjacency reported without a barrier-free path")
    g_pos = LatticePath.from_epochs(0.0, T, np.concatenate([[0.0], starts]), p + x_lo)
    g_neg = _neg_path(neg, sites, s_lo, s_up, prev_lo, prev_up, Xi, True)
    if g_neg is None:
        return _tainted("cbp", "exterior:path", ext)
    dep = _depth(neg, sites, s_lo, s_up, base + 1, Xi)
    if dep is None:
        return _tainted("cbp", "exterior:depth", ext)
    D, capped = dep
    n_if = res[4]
    seg = _segment("cbp", T, res[5][:n_if], res[6][:n_if], res[7][:n_if], x_lo, W)
    return PatchRecord("cbp", T, (Xi + x_lo,), D, (concat_paths(g_neg, g_pos),), seg, False, "", capped, ext,
                       (x_lo, x_hi))


def _segment(model, T, it, ia, ib, x_lo, W):
    a = ia.astype(np.float64) + x_lo
    b = ib.astype(np.float64) + x_lo
    b[ib >= W] = INF
    if model == "mcp":
        a[ia < 0] = -INF
    return InterfaceTrajectory(model, 0.0, T, it.copy(), a, b)


def _patch_mcp(pair: TrailPair, params: McpParams, cfg: PatchConfig, key, L: int, R: int) -> PatchRecord:
    h = pair.h_neg
    n1 = sample_blocked_log((-L, R), (-h, 0.0), params.lam1, key + (_rng.NEG,))
    n2 = sample_blocked_log((-L, R), (-h, 0.0), params.lam2, key + (_rng.NEG2,))
    x_lo, x_hi = n1.window
    W = n1.width
    base = -x_lo
    st1, s1l, s1u, pv1l, pv1u, x1l, x1u = _neg_sweeps(n1, pair.g1)
    st2, s2l, s2u, pv2l, pv2u, x2l, x2u = _neg_sweeps(n2, pair.g2)
    lo1, up1 = x1l.copy(), x1u.copy()
    lo2, up2 = x2l.copy(), x2u.copy()
    lo1[base + 1:] = 0
    up1[base + 1:] = 0
    lo2[: base + 1] = 0
    up2[: base + 1] = 0
    sd1l, sd1u = s1l.copy(), s1u.copy()
    sd2l, sd2u = s2l.copy(), s2u.copy()
    sd1l[base + 1:] = 0
    sd1u[base + 1:] = 0
    sd2l[: base + 1] = 0
    sd2u[: base + 1] = 0

    span = cfg.adj_horizon
    p1 = sample_blocked_log((x_lo, x_hi), (0.0, span), params.lam1, key + (_rng.POS, 0))
    p2 = sample_blocked_log((x_lo, x_hi), (0.0, span), params.lam2, key + (_rng.POS2, 0))
    ext = 0
    while True:
        res = K.mcp_run(p1.times, p1.kinds, p1.sites - x_lo, p2.times, p2.kinds, p2.sites - x_lo,
                        lo1.copy(), up1.copy(), lo2.copy(), up2.copy(), True, True, True,
                        sd1l.copy(), sd1u.copy(), _labels(sd1l, K.NEG), _labels(sd1u, K.NEG),
                        sd2l.copy(), sd2u.copy(), _labels(sd2l, K.BIG), _labels(sd2u, K.BIG),
                        np.int64(-1), np.int64(W), 0.0, span, 1.0, False, True)
        if res[0] <= span:
            return _tainted("mcp", "exterior:run", ext)
        if res[1] < INF:
            break
        if span * 2 > cfg.max_adj_horizon:
            return _tainted("mcp", "timeout", ext)
        ext += 1
        p1 = p1.extend(sample_blocked_log((x_lo, x_hi), (span, 2 * span), params.lam1, key + (_rng.POS, ext)))
        p2 = p2.extend(sample_blocked_log((x_lo, x_hi), (span, 2 * span), params.lam2, key + (_rng.POS2, ext)))
        span *= 2
    adj = _mcp_adjacency_from(res, p1, p2, x_lo, W, check_up=True)
    if adj is None:
        return _tainted("mcp", "exterior:run", ext)
    T = adj.T
    X1i, X2i = adj.X[0] - x_lo, adj.X[1] - x_lo
    g1n = _neg_path(n1, st1, s1l, s1u, pv1l, pv1u, X1i, False)
    g2n = _neg_path(n2, st2, s2l, s2u, pv2l, pv2u, X2i, True)
    if g1n is None or g2n is None:
        return _tainted("mcp", "exterior:path", ext)
    d1 = _depth(n1, st1, s1l, s1u, X1i, base)
    d2 = _depth(n2, st2, s2l, s2u, base + 1, X2i)
    if d1 is None or d2 is None:
        return _tainted("mcp", "exterior:depth", ext)
    capped = d1[1] or d2[1]
    D = max(d1[0], d2[0])
    n_if = res[4]
    seg = _segment("mcp", T, res[5][:n_if], res[6][:n_if], res[7][:n_if], x_lo, W)
    gamma = (concat_paths(g1n, adj.gamma[0]), concat_paths(g2n, adj.gamma[1]))
    return PatchRecord("mcp", T, adj.X, D, gamma, seg, False, "", capped, ext, (x_lo, x_hi))


def coupled_patch(trail_a: AnyTrail, trail_b: AnyTrail, params, config: PatchConfig = PatchConfig(),
                  seed=0, model: Optional[str] = None) -> tuple[PatchRecord, PatchRecord]:
    """Two patches driven by the same realized events (same stream keys)."""
    if model is None:
        model = "mcp" if isinstance(trail_a, TrailPair) else "cbp"
    return run_patch(model, trail_a, params, config, seed), run_patch(model, trail_b, params, config, seed)


def coupling_holds(a: PatchRecord, b: PatchRecord, t: float) -> bool:
    """Depth-and-influence alternative: equal records with depth < t, or both
    depths >= t."""
    if a.D >= t and b.D >= t:
        return True
    return a.D == b.D and a.D < t and a == b


# ---------------------------------------------------------------------------
# sewing and renewals


def sew(paths: Sequence[InterfaceTrajectory]) -> InterfaceTrajectory:
    """Concatenate interface paths, each continuing from where the previous
    one ended: on the k-th span the path is its own value minus its start
    plus the end value of everything before."""
    paths = list(paths)
    if not paths:
        raise ValueError("nothing to sew")
    model = paths[0].model
    ts, ls, rs = [], [], []
    t_off = paths[0].t0
    a_off = 0.0
    b_off = 0.0
    for k, p in enumerate(paths):
        if p.model != model:
            raise ValueError("cannot sew different models")
        if k < len(paths) - 1 and not math.isfinite(p.t1):
            raise ValueError("only the last path may be infinite")
        if k == 0:
            da, db = 0.0, 0.0
        else:
            da = a_off - p.left[0]
            db = b_off - p.right[0]
        ts.append(p.times - p.t0 + t_off)
        ls.append(p.left + da)
        rs.append(p.right + db)
        i_end = p.index(p.t1)
        a_off = float(p.left[i_end] + da)
        b_off = float(p.right[i_end] + db)
        t_off += p.t1 - p.t0
    times = np.concatenate(ts)
    left = np.concatenate(ls)
    right = np.concatenate(rs)
    # a later path owns its start time
    keep = np.r_[times[1:] > times[:-1], True]
    times, left, right = times[keep], left[keep], right[keep]
    times, left, right = _compress(times, left, right)
    return InterfaceTrajectory(model, paths[0].t0, t_off, times, left, right)


@dataclass(frozen=True, eq=False)
class RenewalResult:
    kappas: np.ndarray
    censored: np.ndarray
    indices: np.ndarray
    times: np.ndarray

    def increments(self, records: Sequence[PatchRecord]):
        """(delta_tau, delta_i) between consecutive renewal indices."""
        T = np.array([r.T for r in records])
        B = np.array([r.shift for r in records], dtype=np.float64)
        cT = np.r_[0.0, np.cumsum(T)]
        cB = np.r_[0.0, np.cumsum(B)]
        n = self.indices
        return np.diff(cT[n]), np.diff(cB[n])

    def to_csv(self, records: Sequence[PatchRecord]) -> str:
        dt, di = self.increments(records)
        lines = ["k,N_k,tau_k,delta_tau,delta_i"]
        for k, (nk, tk) in enumerate(zip(self.indices.tolist(), self.times.tolist())):
            d1 = repr(float(dt[k])) if k < dt.shape[0] else ""
            d2 = repr(float(di[k])) if k < di.shape[0] else ""
            lines.append(f"{k},{nk},{repr(float(tk))},{d1},{d2}")
        return "\n".join(lines) + "\n"


def renewal_times(records: Sequence, h_neg: Optional[float] = None, lookahead: int = 10) -> RenewalResult:
    """kappa_n = inf{n' >= n : D^{n'} >= T^n + ... + T^{n'-1}}.

    With ``h_neg`` (depths are known to be below it) kappa_n = infinity is
    decided exactly as soon as the partial sum reaches ``h_neg``; otherwise an
    index counts as a renewal once ``lookahead`` further patches have not
    triggered.  Undecided indices are censored (kappa = nan) and excluded.
    ``records`` may be PatchRecords or (T, D) pairs.
    """
    T = np.array([r.T if isinstance(r, PatchRecord) else r[0] for r in records], dtype=np.float64)
    D = np.array([r.D if isinstance(r, PatchRecord) else r[1] for r in records], dtype=np.float64)
    n = T.shape[0]
    kap = np.full(n, np.nan)
    cens = np.zeros(n, bool)
    for i in range(n):
        s = 0.0
        j = i
        decided = False
        while j < n:
            if D[j] >= s:
                kap[i] = j
                decided = True
                break
            s += T[j]
            j += 1
            if h_neg is not None and s >= h_neg:
                kap[i] = INF
                decided = True
                break
            if h_neg is None and j - i > lookahead:
                kap[i] = INF
                decided = True
                break
        if not decided:
            cens[i] = True
    idx = np.nonzero(kap == INF)[0]
    cT = np.r_[0.0, np.cumsum(T)]
    return RenewalResult(kap, cens, idx, cT[idx])


# ---------------------------------------------------------------------------
# full runs


@dataclass(frozen=True, eq=False)
class PatchworkRun:
    records: list
    sewed: Optional[InterfaceTrajectory]
    kappas: np.ndarray
    censored: np.ndarray
    renewal_indices: np.ndarray
    renewal_times: np.ndarray
    trail: AnyTrail
    taint: bool = False

    @property
    def duration(self) -> float:
        return float(sum(r.T for r in self.records))

    def records_csv(self) -> str:
        head = "n,T,X,D,taint" if self.records and self.records[0].model == "cbp" else "n,T,X1,X2,D,taint"
        return "\n".join([head] + [r.csv_row(i) for i, r in enumerate(self.records)]) + "\n"


def run_patchwork(model: str, trail: AnyTrail, n_patches: int, params, config: PatchConfig = PatchConfig(),
                  seed=0, min_duration: float = 0.0) -> PatchworkRun:
    """Iterate patches, updating the trail with each special path, until
    ``n_patches`` patches and a total duration of ``min_duration`` are reached.
    Stops at the first tainted patch (the run is then flagged)."""
    if n_patches < 1:
        raise ValueError("need at least one patch")
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    records = []
    total = 0.0
    taint = False
    n = 0
    while n < n_patches or total < min_duration:
        rec = run_patch(model, trail, params, config, key + (n,))
        if rec.taint:
            records.append(rec)
            taint = True
            break
        records.append(rec)
        total += rec.T
        trail = append_trail(trail, rec.gamma[0] if model == "cbp" else rec.gamma)
        n += 1
    good = [r for r in records if not r.taint]
    sewed = sew([r.segment for r in good]) if good else None
    ren = renewal_times(good, h_neg=config.h_neg)
    return PatchworkRun(records, sewed, ren.kappas, ren.censored, ren.indices, ren.times, trail, taint)
