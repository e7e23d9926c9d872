"""Realized graphical constructions: death marks, arrows and barrier flight plans.

An :class:`EventLog` stores every event of a window x span in one time-sorted
table (``times``, ``kinds``, ``sites``).  ``kinds`` is 0 for a death mark at
``site``, 1 for an arrow ``site -> site+1`` and 2 for an arrow
``site -> site-1``.  Per-stream views are built lazily.

The query functions here (:func:`reachable`, :func:`descendants`,
:func:`extremal_path`) are straightforward set sweeps in pure Python.  They are
the reference semantics; the compiled engines in ``_kernels`` are checked
against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from . import rng as _rng

DEATH = 0
RIGHT = 1
LEFT = 2

_MAX_REDRAWS = 16


class SpaceTimePoint(NamedTuple):
    site: int
    time: float


def _fmt(t: float) -> str:
    return repr(float(t))


# --------------------------------------------------------------------------
# containers


@dataclass(frozen=True, eq=False)
class EventLog:
    x_lo: int
    x_hi: int
    t_lo: float
    t_hi: float
    birth_rate: float
    times: np.ndarray
    kinds: np.ndarray
    sites: np.ndarray

    def __post_init__(self):
        if self.x_lo > self.x_hi:
            raise ValueError(f"inverted window [{self.x_lo}, {self.x_hi}]")
        if self.t_lo > self.t_hi:
            raise ValueError(f"inverted span [{self.t_lo}, {self.t_hi}]")
        for a in (self.times, self.kinds, self.sites):
            a.setflags(write=False)

    @property
    def window(self) -> tuple[int, int]:
        return (self.x_lo, self.x_hi)

    @property
    def span(self) -> tuple[float, float]:
        return (self.t_lo, self.t_hi)

    @property
    def width(self) -> int:
        return self.x_hi - self.x_lo + 1

    def __len__(self) -> int:
        return int(self.times.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return (
            self.window == other.window
            and self.span == other.span
            and self.birth_rate == other.birth_rate
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.kinds, other.kinds)
            and np.array_equal(self.sites, other.sites)
        )

    @property
    def targets(self) -> np.ndarray:
        """Arrow targets (the site itself for deaths)."""
        return self.sites + np.where(self.kinds == RIGHT, 1, np.where(self.kinds == LEFT, -1, 0))

    @cached_property
    def deaths(self) -> dict[int, np.ndarray]:
        m = self.kinds == DEATH
        out = {}
        for x in range(self.x_lo, self.x_hi + 1):
            out[x] = self.times[m & (self.sites == x)]
        return out

    @cached_property
    def arrows(self) -> dict[tuple[int, int], np.ndarray]:
        out = {}
        tg = self.targets
        for x in range(self.x_lo, self.x_hi):
            out[(x, x + 1)] = self.times[(self.kinds == RIGHT) & (self.sites == x)]
            out[(x + 1, x)] = self.times[(self.kinds == LEFT) & (tg == x)]
        return out

    def events(self) -> Iterable[tuple[float, int, int]]:
        """Iterate (time, kind, site) in time order."""
        for t, k, s in zip(self.times.tolist(), self.kinds.tolist(), self.sites.tolist()):
            yield t, k, s

    def restrict(self, t_lo: float, t_hi: float) -> "EventLog":
        """Events with time in [t_lo, t_hi], with that span."""
        if t_lo > t_hi:
            raise ValueError("inverted span")
        i0 = int(np.searchsorted(self.times, t_lo, side="left"))
        i1 = int(np.searchsorted(self.times, t_hi, side="right"))
        return EventLog(self.x_lo, self.x_hi, float(t_lo), float(t_hi), self.birth_rate,
                        self.times[i0:i1].copy(), self.kinds[i0:i1].copy(), self.sites[i0:i1].copy())

    def extend(self, later: "EventLog") -> "EventLog":
        """Concatenate a log sampled on the adjacent span ``[t_hi, t']``."""
        if later.window != self.window or later.birth_rate != self.birth_rate:
            raise ValueError("window/rate mismatch")
        if later.t_lo != self.t_hi:
            raise ValueError("spans are not adjacent")
        return EventLog(self.x_lo, self.x_hi, self.t_lo, later.t_hi, self.birth_rate,
                        np.concatenate([self.times, later.times]),
                        np.concatenate([self.kinds, later.kinds]),
                        np.concatenate([self.sites, later.sites]))

    def dump(self) -> str:
        lines = []
        for t, k, s in self.events():
            if k == DEATH:
                lines.append(f"D {s} {_fmt(t)}")
            else:
                lines.append(f"A {s} {s + 1 if k == RIGHT else s - 1} {_fmt(t)}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_streams(cls, window, span, birth_rate: float = 0.0,
                     deaths: Optional[dict] = None, arrows: Optional[dict] = None) -> "EventLog":
        """Build a log from explicit per-stream times (hand-written scenarios)."""
        x_lo, x_hi = int(window[0]), int(window[1])
        t_lo, t_hi = float(span[0]), float(span[1])
        if x_lo > x_hi or t_lo > t_hi:
            raise ValueError("inverted window or span")
        rows = []
        for x, ts in (deaths or {}).items():
            if not x_lo <= x <= x_hi:
                raise ValueError(f"death site {x} outside window")
            rows += [(float(t), DEATH, int(x)) for t in ts]
        for (x, y), ts in (arrows or {}).items():
            if abs(x - y) != 1 or not (x_lo <= x <= x_hi and x_lo <= y <= x_hi):
                raise ValueError(f"arrow {x}->{y} not a nearest-neighbour edge inside window")
            rows += [(float(t), RIGHT if y == x + 1 else LEFT, int(x)) for t in ts]
        rows.sort()
        times = np.array([r[0] for r in rows], dtype=np.float64)
        if times.size and (times[0] < t_lo or times[-1] > t_hi):
            raise ValueError("event time outside span")
        if np.any(np.diff(times) <= 0):
            raise ValueError("two events share a time")
        return cls(x_lo, x_hi, t_lo, t_hi, float(birth_rate), times,
                   np.array([r[1] for r in rows], dtype=np.int8),
                   np.array([r[2] for r in rows], dtype=np.int64))

    @classmethod
    def empty(cls, window, span, birth_rate: float = 0.0) -> "EventLog":
        return cls.from_streams(window, span, birth_rate)


def parse_dump(text: str, window, span, birth_rate: float = 0.0) -> EventLog:
    deaths: dict = {}
    arrows: dict = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] == "D" and len(parts) == 3:
            deaths.setdefault(int(parts[1]), []).append(float(parts[2]))
        elif parts[0] == "A" and len(parts) == 4:
            arrows.setdefault((int(parts[1]), int(parts[2])), []).append(float(parts[3]))
        else:
            raise ValueError(f"bad dump line: {line!r}")
    return EventLog.from_streams(window, span, birth_rate, deaths, arrows)


@dataclass(frozen=True, eq=False)
class FlightPlan:
    """Barrier jump attempts.  ``kinds`` is 0 (left) or 1 (right); marks are
    uniform on [0, 1] for right attempts and 0 for left ones."""

    t_lo: float
    t_hi: float
    r_left: float
    r0: float
    r1: float
    times: np.ndarray
    kinds: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        for a in (self.times, self.kinds, self.marks):
            a.setflags(write=False)

    @property
    def span(self):
        return (self.t_lo, self.t_hi)

    @property
    def r_right(self) -> float:
        return max(self.r0, self.r1)

    @property
    def left_attempts(self) -> np.ndarray:
        return self.times[self.kinds == 0]

    @property
    def right_attempts(self) -> np.ndarray:
        return self.times[self.kinds == 1]

    @property
    def right_marks(self) -> np.ndarray:
        return self.marks[self.kinds == 1]

    def __len__(self):
        return int(self.times.shape[0])

    def __eq__(self, other):
        if not isinstance(other, FlightPlan):
            return NotImplemented
        return (self.span == other.span and (self.r_left, self.r0, self.r1) == (other.r_left, other.r0, other.r1)
                and np.array_equal(self.times, other.times) and np.array_equal(self.kinds, other.kinds)
                and np.array_equal(self.marks, other.marks))

    def extend(self, later: "FlightPlan") -> "FlightPlan":
        if later.t_lo != self.t_hi:
            raise ValueError("spans are not adjacent")
        return FlightPlan(self.t_lo, later.t_hi, self.r_left, self.r0, self.r1,
                          np.concatenate([self.times, later.times]),
                          np.concatenate([self.kinds, later.kinds]),
                          np.concatenate([self.marks, later.marks]))

    @classmethod
    def from_attempts(cls, span, r_left, r0, r1, left=(), right=()) -> "FlightPlan":
        """``right`` is a sequence of (time, mark) pairs."""
        rows = [(float(t), 0, 0.0) for t in left] + [(float(t), 1, float(m)) for t, m in right]
        rows.sort()
        times = np.array([r[0] for r in rows], dtype=np.float64)
        if np.any(np.diff(times) <= 0):
            raise ValueError("two attempts share a time")
        return cls(float(span[0]), float(span[1]), float(r_left), float(r0), float(r1), times,
                   np.array([r[1] for r in rows], dtype=np.int8),
                   np.array([r[2] for r in rows], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class LatticePath:
    """Cadlag nearest-neighbour path on [a, b]."""

    a: float
    b: float
    start_site: int
    jump_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    jump_sites: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=np.float64)
        js = np.asarray(self.jump_sites, dtype=np.int64)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "jump_sites", js)
        if jt.shape != js.shape:
            raise ValueError("jump arrays differ in length")
        if np.any(np.diff(jt) <= 0):
            raise ValueError("jump times must increase strictly")
        if jt.size and (jt[0] <= self.a or jt[-1] > self.b):
            raise ValueError("jump outside domain")
        prev = np.concatenate([[self.start_site], js[:-1]])
        if np.any(np.abs(js - prev) != 1):
            raise ValueError("jumps must be nearest-neighbour")

    @classmethod
    def from_epochs(cls, a: float, b: float, starts: Sequence[float], sites: Sequence[int]) -> "LatticePath":
        """Compress a piecewise-constant record (epoch start times, sites)."""
        starts = np.asarray(starts, dtype=np.float64)
        sites = np.asarray(sites, dtype=np.int64)
        change = np.nonzero(np.diff(sites) != 0)[0] + 1
        return cls(float(a), float(b), int(sites[0]), starts[change], sites[change])

    @classmethod
    def constant(cls, a: float, b: float, site: int) -> "LatticePath":
        return cls(float(a), float(b), int(site))

    def at(self, t: float) -> int:
        i = int(np.searchsorted(self.jump_times, t, side="right"))
        return self.start_site if i == 0 else int(self.jump_sites[i - 1])

    def at_left(self, t: float) -> int:
        """Value just before t."""
        i = int(np.searchsorted(self.jump_times, t, side="left"))
        return self.start_site if i == 0 else int(self.jump_sites[i - 1])

    @property
    def end_site(self) -> int:
        return int(self.jump_sites[-1]) if self.jump_sites.size else self.start_site

    def pieces(self) -> list[tuple[int, float, float]]:
        """Closed constant pieces (site, t0, t1) covering [a, b]."""
        starts = [self.a] + self.jump_times.tolist()
        ends = self.jump_times.tolist() + [self.b]
        sites = [self.start_site] + self.jump_sites.tolist()
        return list(zip(sites, starts, ends))

    def __eq__(self, other):
        if not isinstance(other, LatticePath):
            return NotImplemented
        return (self.a == other.a and self.b == other.b and self.start_site == other.start_site
                and np.array_equal(self.jump_times, other.jump_times)
                and np.array_equal(self.jump_sites, other.jump_sites))

    def __repr__(self):
        return f"LatticePath([{self.a}, {self.b}], start={self.start_site}, jumps={list(zip(self.jump_times.tolist(), self.jump_sites.tolist()))})"


def concat_paths(first: LatticePath, second: LatticePath) -> LatticePath:
    """Join two paths sharing the junction point (first.b, first.end)."""
    if first.b != second.a or first.end_site != second.start_site:
        raise ValueError("paths do not meet")
    return LatticePath(first.a, second.b, first.start_site,
                       np.concatenate([first.jump_times, second.jump_times]),
                       np.concatenate([first.jump_sites, second.jump_sites]))


# --------------------------------------------------------------------------
# sampling


def _check_span(span):
    t_lo, t_hi = float(span[0]), float(span[1])
    if not (math.isfinite(t_lo) and math.isfinite(t_hi)):
        raise ValueError("span must be finite")
    if t_lo > t_hi:
        raise ValueError(f"inverted span [{t_lo}, {t_hi}]")
    return t_lo, t_hi


def _poisson_times(gen: np.random.Generator, rate: float, t_lo: float, t_hi: float):
    """Sorted points of a homogeneous Poisson process, strictly inside the span
    and pairwise distinct.  Draws with a floating-point collision are redrawn."""
    length = t_hi - t_lo
    for _ in range(_MAX_REDRAWS):
        n = int(gen.poisson(rate * length)) if rate > 0 and length > 0 else 0
        if n == 0:
            return np.zeros(0)
        c = np.cumsum(gen.standard_exponential(n + 1))
        times = t_lo + length * (c[:n] / c[n])
        if times[0] > t_lo and times[-1] < t_hi and np.all(np.diff(times) > 0):
            return times
    raise RuntimeError("could not draw distinct event times")


def sample_event_log(window, span, birth_rate: float, stream_seed) -> EventLog:
    """Independent Poisson death marks (rate 1 per site) and arrows (rate
    ``birth_rate`` per directed edge) on ``window`` x ``span``."""
    x_lo, x_hi = int(window[0]), int(window[1])
    if x_lo > x_hi:
        raise ValueError(f"inverted window [{x_lo}, {x_hi}]")
    t_lo, t_hi = _check_span(span)
    lam = float(birth_rate)
    if not lam >= 0:
        raise ValueError("birth_rate must be non-negative")
    gen = _rng.generator(stream_seed)
    n_sites = x_hi - x_lo + 1
    n_edges = n_sites - 1
    total = n_sites + 2 * n_edges * lam
    times = _poisson_times(gen, total, t_lo, t_hi)
    u = gen.random(times.shape[0]) * total
    kinds = np.zeros(times.shape[0], dtype=np.int8)
    sites = np.minimum(u, n_sites - 1).astype(np.int64)
    if lam > 0 and n_edges > 0:
        arrow = u >= n_sites
        e = np.minimum(((u[arrow] - n_sites) / lam).astype(np.int64), 2 * n_edges - 1)
        right = e < n_edges
        kinds[arrow] = np.where(right, RIGHT, LEFT)
        sites[arrow] = np.where(right, e, e - n_edges + 1)
    sites += x_lo
    return EventLog(x_lo, x_hi, t_lo, t_hi, lam, times, kinds, sites)


BLOCK = 16


def _block_code(j: int) -> int:
    return 2 * j if j >= 0 else -2 * j - 1


def block_window(window, block: int = BLOCK) -> tuple[int, int]:
    """Smallest block-aligned window containing ``window``."""
    x_lo, x_hi = int(window[0]), int(window[1])
    return (x_lo // block) * block, (x_hi // block + 1) * block - 1


def sample_blocked_log(window, span, birth_rate: float, stream_seed, block: int = BLOCK) -> EventLog:
    """Event log on the block-aligned hull of ``window``.

    Each block of ``block`` columns (its death marks and the arrows leaving
    it) is drawn from its own stream, so a larger window contains exactly
    the events of a smaller one.  This lets a run be repeated on a wider
    window without changing the events it has already seen.
    """
    from . import _kernels

    x_lo, x_hi = block_window(window, block)
    t_lo, t_hi = _check_span(span)
    lam = float(birth_rate)
    if not lam > 0:
        raise ValueError("blocked sampling needs a positive birth rate")
    key = tuple(stream_seed) if isinstance(stream_seed, (tuple, list)) else (int(stream_seed),)
    length = t_hi - t_lo
    mean = block * (1.0 + 2.0 * lam) * length
    expo, unif, counts = [], [], []
    for j in range(x_lo // block, x_hi // block + 1):
        gen = _rng.generator(key + (_block_code(j),))
        n = int(gen.poisson(mean)) if length > 0 else 0
        expo.append(gen.standard_exponential(n + 1))
        unif.append(gen.random(n))
        counts.append(n)
    times, kinds, sites = _kernels.assemble_blocks(
        np.concatenate(expo), np.concatenate(unif), np.array(counts, np.int64),
        t_lo, length, block, lam, x_lo, x_hi)
    if times.size and (times[0] <= t_lo or times[-1] >= t_hi or np.any(np.diff(times) <= 0)):
        raise RuntimeError("event times collide; use another stream key")
    return EventLog(x_lo, x_hi, t_lo, t_hi, lam, times, kinds, sites)


def sample_flight_plan(r_left: float, r0: float, r1: float, span, stream_seed) -> FlightPlan:
    if min(r_left, r0, r1) < 0 or any(math.isnan(r) for r in (r_left, r0, r1)):
        raise ValueError("barrier rates must be non-negative")
    t_lo, t_hi = _check_span(span)
    gen = _rng.generator(stream_seed)
    rr = max(r0, r1)
    total = r_left + rr
    times = _poisson_times(gen, total, t_lo, t_hi)
    u = gen.random(times.shape[0]) * total
    kinds = (u >= r_left).astype(np.int8)
    marks = np.where(kinds == 1, gen.random(times.shape[0]), 0.0)
    return FlightPlan(t_lo, t_hi, float(r_left), float(r0), float(r1), times, kinds, marks)


# --------------------------------------------------------------------------
# reference queries


def _check_point(log: EventLog, p):
    site, time = int(p[0]), float(p[1])
    if not (log.x_lo <= site <= log.x_hi):
        raise ValueError(f"site {site} outside window {log.window}")
    if not (log.t_lo <= time <= log.t_hi):
        raise ValueError(f"time {time} outside span {log.span}")
    return site, time


def _forward(occ: set, kind: int, site: int) -> None:
    if kind == DEATH:
        occ.discard(site)
    elif site in occ:
        occ.add(site + 1 if kind == RIGHT else site - 1)


def _backward(need: set, kind: int, site: int) -> None:
    if kind == DEATH:
        need.discard(site)
    else:
        tgt = site + 1 if kind == RIGHT else site - 1
        if tgt in need:
            need.add(site)


def descendants(log: EventLog, sources: Iterable, t: float) -> set[int]:
    """Sites y with some source (x, s) connected to (y, t) by an infection path."""
    t = float(t)
    if not (log.t_lo <= t <= log.t_hi):
        raise ValueError(f"time {t} outside span {log.span}")
    srcs = sorted((_check_point(log, p)[1], _check_point(log, p)[0]) for p in sources)
    if any(s > t for s, _ in srcs):
        raise ValueError("source after target time")
    occ: set[int] = set()
    k = 0
    for et, kind, site in log.events():
        if et > t:
            break
        while k < len(srcs) and srcs[k][0] <= et:
            occ.add(srcs[k][1])
            k += 1
        if occ:
            _forward(occ, kind, site)
    while k < len(srcs):
        occ.add(srcs[k][1])
        k += 1
    return occ


def reachable(log: EventLog, src, dst) -> bool:
    s_site, s_time = _check_point(log, src)
    d_site, d_time = _check_point(log, dst)
    if s_time > d_time:
        raise ValueError("src after dst")
    return d_site in descendants(log, [(s_site, s_time)], d_time)


def extremal_path(log: EventLog, sources: Iterable[int], a: float, b: float,
                  side: str = "leftmost", target: Optional[int] = None) -> Optional[LatticePath]:
    """Leftmost (or rightmost) infection path from ``sources`` x {a} alive at
    time b, optionally ending at ``target``.  None if no such path exists."""
    srcs = {int(x) for x in sources}
    if not srcs:
        raise ValueError("empty source set")
    if side not in ("leftmost", "rightmost"):
        raise ValueError(f"unknown side {side!r}")
    if not (log.t_lo <= a < b <= log.t_hi):
        raise ValueError("need t_lo <= a < b <= t_hi")
    srcs = {x for x in srcs if log.x_lo <= x <= log.x_hi}
    sub = log.restrict(a, b)
    evs = [(t, k, s) for t, k, s in sub.events() if t > a]
    fwd = [set(srcs)]
    for _, kind, site in evs:
        nxt = set(fwd[-1])
        _forward(nxt, kind, site)
        fwd.append(nxt)
    need = set(fwd[-1]) if target is None else fwd[-1] & {int(target)}
    if not need:
        return None
    pick = min if side == "leftmost" else max
    out = [0] * len(fwd)
    for k in range(len(fwd) - 1, -1, -1):
        out[k] = pick(fwd[k] & need)
        if k:
            _, kind, site = evs[k - 1]
            _backward(need, kind, site)
    return LatticePath.from_epochs(a, b, [a] + [e[0] for e in evs], out)


# --------------------------------------------------------------------------
# Left / Right decompositions


def _left_mask(log: EventLog, path: LatticePath, mode: str) -> np.ndarray:
    t = log.times
    idx_r = np.searchsorted(path.jump_times, t, side="right")
    idx_l = np.searchsorted(path.jump_times, t, side="left")
    seq = np.concatenate([[path.start_site], path.jump_sites])
    now, before = seq[idx_r], seq[idx_l]
    tg = log.targets
    if mode in ("left", "right_plus"):
        edge = np.maximum(now, before)
        inside = (log.sites <= edge) & (tg <= edge)
    else:
        edge = np.minimum(now, before)
        inside = (log.sites >= edge) & (tg >= edge)
    return inside if mode in ("left", "right") else ~inside


def split(log: EventLog, path: LatticePath, mode: str) -> EventLog:
    """Events of ``log`` restricted to the path's time domain, keeping the
    part on one side of the path (``left``/``right``) or the complement
    (``right_plus``/``left_plus``)."""
    if mode not in ("left", "right_plus", "right", "left_plus"):
        raise ValueError(f"unknown mode {mode!r}")
    if path.a < log.t_lo or path.b > log.t_hi:
        raise ValueError("path domain exceeds log span")
    sub = log.restrict(path.a, path.b)
    keep = _left_mask(sub, path, mode)
    return EventLog(sub.x_lo, sub.x_hi, sub.t_lo, sub.t_hi, sub.birth_rate,
                    sub.times[keep], sub.kinds[keep], sub.sites[keep])


def merge_logs(a: EventLog, b: EventLog) -> EventLog:
    if a.window != b.window or a.span != b.span or a.birth_rate != b.birth_rate:
        raise ValueError("window/span/rate mismatch")
    times = np.concatenate([a.times, b.times])
    order = np.argsort(times, kind="stable")
    times = times[order]
    if np.any(np.diff(times) <= 0):
        raise ValueError("merged logs share an event time")
    return EventLog(a.x_lo, a.x_hi, a.t_lo, a.t_hi, a.birth_rate, times,
                    np.concatenate([a.kinds, b.kinds])[order], np.concatenate([a.sites, b.sites])[order])


def resample_side(log: EventLog, path: LatticePath, fresh: EventLog) -> EventLog:
    """Keep the left part of ``log`` and take the right-plus part from ``fresh``."""
    if fresh.window != log.window or fresh.span != log.span or fresh.birth_rate != log.birth_rate:
        raise ValueError("fresh log must share window, span and rate")
    left = split(log, path, "left")
    right = split(fresh, path, "right_plus")
    if np.intersect1d(left.times, right.times).size:
        # distinct independent continuous draws never collide; hand-built ones might
        raise ValueError("left and fresh right parts share an event time")
    return merge_logs(left, right)
