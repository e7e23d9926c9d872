"""Contact process, contact-and-barrier process (CBP) and two-type contact
process (MCP) driven by realized event logs.

Two layers live here:

* ``evolve_cp`` / ``evolve_cbp`` / ``evolve_mcp`` evolve an explicit finite
  configuration inside a closed window and return the full
  :class:`Trajectory`.  Nothing enters from outside the window; a run is
  flagged (``taint``) if an occupied site or the barrier reaches an outer
  column.
* ``run_*_heaviside`` simulate from the Heaviside start on an *open* window:
  the unknown exterior is carried as uncertainty; when it could change the
  interface the run is repeated on a wider window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from . import rng as _rng
from .events import (DEATH, LEFT, RIGHT, EventLog, FlightPlan, sample_blocked_log,
                     sample_flight_plan)

# ---------------------------------------------------------------------------
# parameters and configurations


@dataclass(frozen=True)
class CbpParams:
    lam: float
    r_left: float
    r0: float
    r1: float

    def __post_init__(self):
        for name in ("lam", "r_left", "r0", "r1"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite non-negative number, got {v!r}")

    @property
    def r_right(self) -> float:
        return max(self.r0, self.r1)

    @property
    def thresholds(self) -> tuple[float, float]:
        rr = self.r_right
        if rr == 0:
            return 0.0, 0.0
        return self.r0 / rr, self.r1 / rr


@dataclass(frozen=True)
class McpParams:
    lam1: float
    lam2: float

    def __post_init__(self):
        for name in ("lam1", "lam2"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite non-negative number, got {v!r}")


ModelParams = Union[CbpParams, McpParams]


@dataclass(frozen=True)
class CbpConfiguration:
    barrier: int
    occupied: frozenset

    def __post_init__(self):
        occ = frozenset(int(x) for x in self.occupied)
        object.__setattr__(self, "occupied", occ)
        if any(x <= self.barrier for x in occ):
            raise ValueError("occupied sites must lie right of the barrier")

    @property
    def ell(self) -> float:
        return float(min(self.occupied)) if self.occupied else math.inf


@dataclass(frozen=True)
class McpConfiguration:
    type1: frozenset
    type2: frozenset

    def __post_init__(self):
        a = frozenset(int(x) for x in self.type1)
        b = frozenset(int(x) for x in self.type2)
        object.__setattr__(self, "type1", a)
        object.__setattr__(self, "type2", b)
        if a & b:
            raise ValueError("a site cannot hold both types")
        if a and b and max(a) >= min(b):
            raise ValueError("type 1 must lie entirely left of type 2")

    @property
    def r(self) -> float:
        return float(max(self.type1)) if self.type1 else -math.inf

    @property
    def ell(self) -> float:
        return float(min(self.type2)) if self.type2 else math.inf


def order_leq(a: CbpConfiguration, b: CbpConfiguration) -> bool:
    """Partial order: fewer particles and a barrier no further left."""
    return a.occupied <= b.occupied and a.barrier >= b.barrier


def cbp_heaviside(window) -> CbpConfiguration:
    return CbpConfiguration(0, frozenset(range(1, int(window[1]) + 1)))


def mcp_heaviside(window) -> McpConfiguration:
    return McpConfiguration(frozenset(range(int(window[0]), 1)), frozenset(range(1, int(window[1]) + 1)))


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Change-point record of a finite-window evolution.

    ``states`` rows are per-site codes over the window (CP/CBP: 0/1,
    MCP: 0/1/2); ``barrier`` holds the barrier site per row for CBP.
    Row 0 is the initial configuration at ``span[0]``.
    """

    model: str
    x_lo: int
    x_hi: int
    span: tuple
    times: np.ndarray
    states: np.ndarray
    barrier: Optional[np.ndarray]
    taint: bool
    taint_time: float = math.inf

    def __len__(self):
        return int(self.times.shape[0])

    def row_at(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return max(i, 0)

    def _config(self, i: int):
        sites = np.arange(self.x_lo, self.x_hi + 1)
        row = self.states[i]
        if self.model == "cp":
            return frozenset(sites[row == 1].tolist())
        if self.model == "cbp":
            return CbpConfiguration(int(self.barrier[i]), frozenset(sites[row == 1].tolist()))
        return McpConfiguration(frozenset(sites[row == 1].tolist()), frozenset(sites[row == 2].tolist()))

    def config_at(self, t: float):
        return self._config(self.row_at(t))

    def snapshots(self):
        return [(float(self.times[i]), self._config(i)) for i in range(len(self))]

    @property
    def initial(self):
        return self._config(0)


@dataclass(frozen=True, eq=False)
class InterfaceTrajectory:
    """Piecewise-constant (left, right) pair: (B, ell) for CBP, (r, ell) for MCP.

    Infinite values encode absent particles.  ``times[0]`` equals ``t0``.
    """

    model: str
    t0: float
    t1: float
    times: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        for name in ("times", "left", "right"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("change times must increase strictly")

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    def index(self, t):
        return np.maximum(np.searchsorted(self.times, t, side="right") - 1, 0)

    def at(self, t):
        i = self.index(t)
        return self.left[i], self.right[i]

    def position(self, t):
        a, b = self.at(t)
        return 0.5 * (a + b)

    def gap(self, t):
        a, b = self.at(t)
        return b - a

    def __eq__(self, other):
        if not isinstance(other, InterfaceTrajectory):
            return NotImplemented
        return (self.model == other.model and self.t0 == other.t0 and self.t1 == other.t1
                and np.array_equal(self.times, other.times) and np.array_equal(self.left, other.left)
                and np.array_equal(self.right, other.right))

    def to_csv(self) -> str:
        head = "t,B,ell" if self.model == "cbp" else "t,r,ell"
        lines = [head]
        for t, a, b in zip(self.times.tolist(), self.left.tolist(), self.right.tolist()):
            lines.append(f"{repr(t)},{_num(a)},{_num(b)}")
        return "\n".join(lines) + "\n"


def _num(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


# ---------------------------------------------------------------------------
# closed-window evolution


def _span_of(span, *spans):
    lo = max(s[0] for s in spans)
    hi = min(s[1] for s in spans)
    if span is None:
        return (lo, hi)
    a, b = float(span[0]), float(span[1])
    if a < lo or b > hi or a > b:
        raise ValueError(f"span {span} not covered by [{lo}, {hi}]")
    return (a, b)


def _after(arr_times, t0):
    return int(np.searchsorted(arr_times, t0, side="right"))


def _mask(sites: Iterable[int], x_lo: int, x_hi: int, what="site") -> np.ndarray:
    W = x_hi - x_lo + 1
    m = np.zeros(W, np.uint8)
    for x in sites:
        if not x_lo <= x <= x_hi:
            raise ValueError(f"{what} {x} outside window [{x_lo}, {x_hi}]")
        m[x - x_lo] = 1
    return m


def _log_arrays(log: EventLog, t0: float):
    i0 = _after(log.times, t0)
    return log.times[i0:], log.kinds[i0:], log.sites[i0:] - log.x_lo


_EMPTY_F = (np.zeros(0), np.zeros(0, np.int8), np.zeros(0, np.int64))


def evolve_cp(init: Iterable[int], log: EventLog, span=None) -> Trajectory:
    t0, t1 = _span_of(span, log.span)
    lo = _mask(init, log.x_lo, log.x_hi)
    up = lo.copy()
    tt, kk, ss = _log_arrays(log, t0)
    _, _, taint_t, rec_t, rows, n = K.cp_sweep(tt, kk, ss, lo, up, False, False, *_EMPTY_F, t1, False, True)
    times = rec_t[:n].copy()
    times[0] = t0
    return Trajectory("cp", log.x_lo, log.x_hi, (t0, t1), times, rows[:n].astype(np.int8), None,
                      bool(taint_t <= t1), float(max(taint_t, t0)))


def evolve_cbp(init: CbpConfiguration, log: EventLog, plan: FlightPlan, params: CbpParams,
               span=None) -> Trajectory:
    t0, t1 = _span_of(span, log.span, plan.span)
    if not log.x_lo <= init.barrier <= log.x_hi:
        raise ValueError("barrier outside window")
    lo = _mask(init.occupied, log.x_lo, log.x_hi)
    a0, a1 = params.thresholds
    tt, kk, ss = _log_arrays(log, t0)
    j0 = _after(plan.times, t0)
    W = lo.shape[0]
    z8 = np.zeros(W, np.uint8)
    z64 = np.zeros(W, np.int64)
    res = K.cbp_run(tt, kk, ss, plan.times[j0:], plan.kinds[j0:], plan.marks[j0:], a0, a1,
                    lo, lo.copy(), init.barrier - log.x_lo, False, False, z8, z8.copy(), z64, z64.copy(),
                    np.int64(0), t0, t1, math.inf, True, False)
    b, taint_t = res[0], res[1]
    n_rows, row_t, rows, row_b = res[8], res[9], res[10], res[11]
    return Trajectory("cbp", log.x_lo, log.x_hi, (t0, t1), row_t[:n_rows].copy(),
                      rows[:n_rows].astype(np.int8), row_b[:n_rows] + log.x_lo,
                      bool(taint_t <= t1), float(max(taint_t, t0)))


def evolve_mcp(init: McpConfiguration, logs: Sequence[EventLog], span=None,
               truncation_radius: Optional[int] = None) -> Trajectory:
    """Two-type dynamics on the common window of ``logs`` (H1, H2).

    With ``truncation_radius`` n the initial state is restricted to [-n, n];
    the run is tainted if any particle reaches an outer column of the window,
    i.e. if the exterior could have interacted with it.
    """
    h1, h2 = logs
    if h1.window != h2.window:
        raise ValueError("the two logs must share a window")
    t0, t1 = _span_of(span, h1.span, h2.span)
    x_lo, x_hi = h1.window
    a, b = init.type1, init.type2
    if truncation_radius is not None:
        n = int(truncation_radius)
        if not (x_lo < -n and n < x_hi):
            raise ValueError("truncation box must sit strictly inside the window")
        a = {x for x in a if -n <= x <= n}
        b = {x for x in b if -n <= x <= n}
    lo1 = _mask(a, x_lo, x_hi)
    lo2 = _mask(b, x_lo, x_hi)
    res = _mcp_call(h1, h2, t0, t1, lo1, lo2, False, False, rec_states=True)
    taint_t = res[0]
    n_rows, row_t, rows = res[8], res[9], res[10]
    return Trajectory("mcp", x_lo, x_hi, (t0, t1), row_t[:n_rows].copy(), rows[:n_rows].astype(np.int8), None,
                      bool(taint_t <= t1), float(taint_t))


def _mcp_call(h1, h2, t0, t1, lo1, lo2, open_l, open_r, rec_states=False, rec_events=False,
              track=None, t_adj=math.inf):
    W = lo1.shape[0]
    a1, b1, c1 = _log_arrays(h1, t0)
    a2, b2, c2 = _log_arrays(h2, t0)
    if track is None:
        z8 = np.zeros(W, np.uint8)
        z64 = np.zeros(W, np.int64)
        tr = (False, z8, z8, z64, z64, z8, z8, z64, z64, np.int64(0), np.int64(0))
    else:
        tr = (True,) + tuple(track)
    return K.mcp_run(a1, b1, c1, a2, b2, c2, lo1, lo1.copy(), lo2, lo2.copy(), open_l, open_r,
                     *tr, t0, t1, t_adj, rec_states, rec_events)


def extract_interface(traj: Trajectory) -> InterfaceTrajectory:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    sites = np.arange(traj.x_lo, traj.x_hi + 1)
    lefts, rights = [], []
    for i in range(len(traj)):
        row = traj.states[i]
        if traj.model == "cbp":
            occ = sites[row == 1]
            lefts.append(float(traj.barrier[i]))
            rights.append(float(occ.min()) if occ.size else math.inf)
        elif traj.model == "mcp":
            o1, o2 = sites[row == 1], sites[row == 2]
            lefts.append(float(o1.max()) if o1.size else -math.inf)
            rights.append(float(o2.min()) if o2.size else math.inf)
        else:
            raise ValueError("interfaces exist for cbp and mcp only")
    times, L, R = _compress(traj.times, np.array(lefts), np.array(rights))
    return InterfaceTrajectory(traj.model, traj.span[0], traj.span[1], times, L, R)


def _compress(times, L, R):
    keep = np.ones(times.shape[0], bool)
    keep[1:] = (L[1:] != L[:-1]) | (R[1:] != R[:-1])
    return times[keep], L[keep], R[keep]


# ---------------------------------------------------------------------------
# path queries against a realized trajectory


def _allowed(traj: Trajectory, i: int, mode) -> set:
    sites = np.arange(traj.x_lo, traj.x_hi + 1)
    if mode == "barrier_free":
        return set(sites[sites > traj.barrier[i]].tolist())
    kind, typ = mode
    return set(sites[traj.states[i] == typ].tolist())


def _check_mode(traj: Trajectory, mode):
    if mode == "barrier_free":
        if traj.model != "cbp":
            raise ValueError("barrier_free paths need a CBP trajectory")
    elif isinstance(mode, tuple) and len(mode) == 2 and mode[0] == "active" and mode[1] in (1, 2):
        if traj.model != "mcp":
            raise ValueError("active paths need an MCP trajectory")
    else:
        raise ValueError(f"unknown mode {mode!r}")


def constrained_descendants(traj: Trajectory, log: EventLog, sources: Iterable[int], t0: float,
                            t: float, mode="barrier_free") -> set:
    """Sites reached at time t by constrained paths from ``sources`` x {t0}.

    ``mode`` is ``"barrier_free"`` (CBP) or ``("active", i)`` (MCP, with
    ``log`` the type-i construction).  Pure-Python set sweep.
    """
    _check_mode(traj, mode)
    if not (traj.span[0] <= t0 <= t <= traj.span[1]):
        raise ValueError("times outside trajectory span")
    cur = set(int(x) for x in sources) & _allowed(traj, traj.row_at(t0), mode)
    i0 = _after(log.times, t0)
    i1 = int(np.searchsorted(log.times, t, side="right"))
    ev = list(zip(log.times[i0:i1].tolist(), log.kinds[i0:i1].tolist(), log.sites[i0:i1].tolist()))
    r0 = _after(traj.times, t0)
    r1 = int(np.searchsorted(traj.times, t, side="right"))
    marks = sorted({e[0] for e in ev} | set(traj.times[r0:r1].tolist()))
    k = 0
    for tm in marks:
        while k < len(ev) and ev[k][0] == tm:
            _, kind, s = ev[k]
            if kind == DEATH:
                cur.discard(s)
            elif s in cur:
                cur.add(s + 1 if kind == RIGHT else s - 1)
            k += 1
        cur &= _allowed(traj, traj.row_at(tm), mode)
        if not cur:
            break
    return cur


def constrained_reachable(traj: Trajectory, log: EventLog, src, dst, mode="barrier_free") -> bool:
    s_site, s_time = int(src[0]), float(src[1])
    d_site, d_time = int(dst[0]), float(dst[1])
    if s_time > d_time:
        raise ValueError("src after dst")
    return d_site in constrained_descendants(traj, log, [s_site], s_time, d_time, mode)


# ---------------------------------------------------------------------------
# open-window Monte Carlo from the Heaviside start


def _poisson_hi(rate_time: float, z: float = 5.0) -> int:
    return int(math.ceil(rate_time + z * math.sqrt(rate_time) + 1))


def cbp_window(params: CbpParams, horizon: float, margin: int = 20) -> tuple[int, int]:
    """Starting window for a Heaviside CBP run: the barrier stays inside
    unless it outruns its jump counts by two standard deviations, and the
    right edge keeps ``margin`` sites of clearance."""
    left = _poisson_hi(params.r_left * horizon, 2.0) + 3
    right = _poisson_hi(params.r_right * horizon, 2.0) + margin
    return (-left, right)


def mcp_window(params: McpParams, horizon: float, margin: int = 20) -> tuple[int, int]:
    spread = abs(params.lam1 - params.lam2) * horizon + 2.5 * math.sqrt(2 * max(params.lam1, params.lam2, 1.0) * horizon)
    half = int(math.ceil(spread)) + margin
    return (-half, half)


@dataclass(frozen=True)
class HeavisideRun:
    interface: Optional[InterfaceTrajectory]
    taint: bool
    taint_time: float
    window: tuple = ()
    regrowths: int = 0


def _grow(window, factor):
    x_lo, x_hi = window
    return (int(math.floor(x_lo * factor)) - 1, int(math.ceil(x_hi * factor)) + 1)


def _seed_key(seed):
    return tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)


def _interface_from_kernel(model, t0, t1, n, it, ia, ib, x_lo, W):
    a = ia[:n].astype(np.float64) + x_lo
    b = ib[:n].astype(np.float64) + x_lo
    if model == "cbp":
        b[ib[:n] >= W] = math.inf
    else:
        a[ia[:n] < 0] = -math.inf
        b[ib[:n] >= W] = math.inf
    return InterfaceTrajectory(model, t0, t1, it[:n].copy(), a, b)


def run_cbp_heaviside(params: CbpParams, horizon: float, seed, window=None, grow: float = 1.5,
                      max_grow: int = 6) -> HeavisideRun:
    """CBP from barrier 0 with every site >= 1 occupied.

    Runs on a finite window whose exterior is left undetermined; if the
    result could depend on it, the same realisation is rerun on a wider
    window (per-block event streams make the wider log extend the narrower).
    """
    key = _seed_key(seed)
    win = window or cbp_window(params, horizon)
    plan = sample_flight_plan(params.r_left, params.r0, params.r1, (0.0, horizon), key + (_rng.PLAN,))
    for attempt in range(max_grow + 1):
        log = sample_blocked_log(win, (0.0, horizon), params.lam, key + (_rng.POS,))
        run = run_cbp_on(params, log, plan, horizon)
        if not run.taint:
            break
        win = _grow(win, grow)
    return replace(run, regrowths=attempt)


def run_cbp_on(params: CbpParams, log: EventLog, plan: FlightPlan, horizon: float) -> HeavisideRun:
    x_lo, x_hi = log.window
    W = x_hi - x_lo + 1
    b = -x_lo
    lo = np.zeros(W, np.uint8)
    lo[b + 1:] = 1
    a0, a1 = params.thresholds
    z8 = np.zeros(W, np.uint8)
    z64 = np.zeros(W, np.int64)
    res = K.cbp_run(log.times, log.kinds, log.sites - x_lo, plan.times, plan.kinds, plan.marks, a0, a1,
                    lo, lo.copy(), b, True, False, z8, z8.copy(), z64, z64.copy(), np.int64(0),
                    0.0, horizon, math.inf, False, False)
    taint_t = float(res[1])
    tainted = taint_t <= horizon
    itf = None if tainted else _interface_from_kernel("cbp", 0.0, horizon, res[4], res[5], res[6], res[7], x_lo, W)
    return HeavisideRun(itf, tainted, taint_t, (x_lo, x_hi))


def run_mcp_heaviside(params: McpParams, horizon: float, seed, window=None, grow: float = 1.5,
                      max_grow: int = 6) -> HeavisideRun:
    """MCP from type 1 on every site <= 0 and type 2 on every site >= 1."""
    key = _seed_key(seed)
    win = window or mcp_window(params, horizon)
    for attempt in range(max_grow + 1):
        h1 = sample_blocked_log(win, (0.0, horizon), params.lam1, key + (_rng.POS,))
        h2 = sample_blocked_log(win, (0.0, horizon), params.lam2, key + (_rng.POS2,))
        run = run_mcp_on(h1, h2, horizon)
        if not run.taint:
            break
        win = _grow(win, grow)
    return replace(run, regrowths=attempt)


def run_mcp_on(h1: EventLog, h2: EventLog, horizon: float) -> HeavisideRun:
    x_lo, x_hi = h1.window
    W = x_hi - x_lo + 1
    lo1 = np.zeros(W, np.uint8)
    lo2 = np.zeros(W, np.uint8)
    lo1[: 1 - x_lo] = 1
    lo2[1 - x_lo:] = 1
    res = _mcp_call(h1, h2, 0.0, horizon, lo1, lo2, True, True)
    taint_t = float(res[0])
    tainted = taint_t <= horizon
    itf = None if tainted else _interface_from_kernel("mcp", 0.0, horizon, res[4], res[5], res[6], res[7], x_lo, W)
    return HeavisideRun(itf, tainted, taint_t, (x_lo, x_hi))


def cp_front(lam: float, horizon: float, seed, margin: int = 30, grow: float = 1.5,
             max_grow: int = 6) -> Optional[int]:
    """Rightmost particle at ``horizon`` of a CP started from every site <= 0
    occupied; None if no window up to the growth limit certifies it."""
    key = _seed_key(seed)
    win = (-margin, _poisson_hi(lam * horizon, 3.0) + 2)
    for _ in range(max_grow + 1):
        x_lo, x_hi = win
        log = sample_blocked_log(win, (0.0, horizon), lam, key + (_rng.POS,))
        x_lo, x_hi = log.window
        W = x_hi - x_lo + 1
        lo = np.zeros(W, np.uint8)
        lo[: 1 - x_lo] = 1
        up = lo.copy()
        _, _, taint_t, _, _, _ = K.cp_sweep(log.times, log.kinds, log.sites - x_lo, lo, up, True, False,
                                            *_EMPTY_F, horizon, False, False)
        r_lo = K._last(lo, W - 1)
        r_up = K._last(up, W - 1)
        if r_lo == r_up and r_lo >= 0 and taint_t > horizon:
            return int(r_lo + x_lo)
        win = _grow(win, grow)
    return None


def _front_rows(times, rows, n, x_lo):
    occ = rows[:n] != 0
    has = occ.any(axis=1)
    last = occ.shape[1] - 1 - np.argmax(occ[:, ::-1], axis=1)
    return times[:n].copy(), np.where(has, last + x_lo, -np.inf)


def cp_front_path(lam: float, horizon: float, seed, margin: int = 30, grow: float = 1.5,
                  max_grow: int = 6):
    """Rightmost-particle path (times, R) on [0, horizon] of a CP started from
    every site <= 0 occupied, or None if not certified.  The path is certified
    when the empty-exterior and occupied-exterior bounds give the same front
    at every change time."""
    key = _seed_key(seed)
    win = (-margin, _poisson_hi(lam * horizon, 3.0) + 2)
    for _ in range(max_grow + 1):
        log = sample_blocked_log(win, (0.0, horizon), lam, key + (_rng.POS,))
        x_lo, x_hi = log.window
        W = x_hi - x_lo + 1
        s = log.sites - x_lo
        lo = np.zeros(W, np.uint8)
        lo[: 1 - x_lo] = 1
        a = K.cp_sweep(log.times, log.kinds, s, lo.copy(), lo.copy(), True, False, *_EMPTY_F, horizon, False, True)
        force = (np.zeros(1), np.ones(1, np.int8), np.zeros(1, np.int64))
        b = K.cp_sweep(log.times, log.kinds, s, lo.copy(), lo.copy(), False, False, *force, horizon, False, True)
        ta, ra = _front_rows(a[3], a[4], a[5], x_lo)
        tb, rb = _front_rows(b[3], b[4], b[5], x_lo)
        ta[0] = tb[0] = 0.0
        grid = np.union1d(ta, tb)
        fa = ra[np.searchsorted(ta, grid, side="right") - 1]
        fb = rb[np.searchsorted(tb, grid, side="right") - 1]
        if np.array_equal(fa, fb) and fa[-1] < x_hi:
            keep = np.r_[True, fa[1:] != fa[:-1]]
            return grid[keep], fa[keep]
        win = _grow(win, grow)
    return None
