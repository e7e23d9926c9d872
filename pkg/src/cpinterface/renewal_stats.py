"""Renewal-reward estimators and the statistical checks used by the harness.

Everything here is a deterministic function of its input samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats


class InsufficientData(ValueError):
    pass


class Degenerate(ValueError):
    pass


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class StatReport:
    name: str
    value: float
    p: Optional[float]
    n: int
    band: Optional[tuple] = None
    flagged: bool = False
    extra: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.p is not None and not (0.0 <= self.p <= 1.0):
            raise ValueError(f"p-value {self.p} outside [0, 1]")

    def to_dict(self) -> dict:
        d = {"name": self.name, "value": _jnum(self.value), "p": _jnum(self.p), "n": int(self.n)}
        if self.band is not None:
            d["band"] = [_jnum(b) for b in self.band]
        if self.flagged:
            d["flagged"] = True
        for k, v in self.extra.items():
            d[k] = _jnum(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _jnum(v):
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


# ---------------------------------------------------------------------------
# renewal-reward CLT


@dataclass(frozen=True)
class RenewalSummary:
    """Inter-renewal times and the matching interface increments."""

    delta_tau: np.ndarray
    delta_z: np.ndarray

    def __post_init__(self):
        dt = np.asarray(self.delta_tau, dtype=np.float64)
        dz = np.asarray(self.delta_z, dtype=np.float64)
        if dt.ndim != 1 or dt.shape != dz.shape:
            raise ValueError("delta_tau and delta_z must be 1-d of equal length")
        if np.any(~np.isfinite(dt)) or np.any(~np.isfinite(dz)):
            raise ValueError("increments must be finite")
        if np.any(dt <= 0):
            raise ValueError("inter-renewal times must be positive")
        object.__setattr__(self, "delta_tau", dt)
        object.__setattr__(self, "delta_z", dz)

    @property
    def count(self) -> int:
        return int(self.delta_tau.shape[0])

    @property
    def mu_hat(self) -> float:
        return renewal_clt_estimate(self)[0]

    @property
    def sigma_hat(self) -> float:
        return renewal_clt_estimate(self)[1]

    @property
    def mu_se(self) -> float:
        return renewal_mu_se(self)


def renewal_clt_estimate(summary: RenewalSummary) -> tuple[float, float]:
    """(mu, sigma) with mu = E dz / E dtau and sigma^2 = Var(dz - mu dtau) / E dtau."""
    if summary.count < 2:
        raise InsufficientData("need at least two renewal increments")
    m_tau = summary.delta_tau.mean()
    mu = summary.delta_z.mean() / m_tau
    resid = summary.delta_z - mu * summary.delta_tau
    var = float(np.mean(resid ** 2)) * summary.count / (summary.count - 1)
    return float(mu), math.sqrt(var / m_tau)


def renewal_mu_se(summary: RenewalSummary) -> float:
    """Standard error of mu: sigma / sqrt(total elapsed time)."""
    _, sigma = renewal_clt_estimate(summary)
    return sigma / math.sqrt(summary.delta_tau.sum())


# ---------------------------------------------------------------------------
# i.i.d. diagnostics


def autocorrelation(x: np.ndarray, lag: int) -> float:
    x = np.asarray(x, dtype=np.float64)
    c = x - x.mean()
    den = float(np.dot(c, c))
    if den == 0.0:
        return math.nan
    return float(np.dot(c[:-lag], c[lag:]) / den)


def iid_diagnostics(values: Sequence[float]) -> list[StatReport]:
    """Lag-1 and lag-2 autocorrelations with +-3/sqrt(M) bands and a
    first-half / second-half two-sample test."""
    x = np.asarray(values, dtype=np.float64)
    M = x.shape[0]
    if M < 20:
        raise InsufficientData("need at least 20 values")
    half = 3.0 / math.sqrt(M)
    out = []
    for lag in (1, 2):
        r = autocorrelation(x, lag)
        if math.isnan(r):
            out.append(StatReport(f"acf{lag}", math.nan, None, M, (-half, half), True))
            continue
        p = float(2 * stats.norm.sf(abs(r) * math.sqrt(M)))
        out.append(StatReport(f"acf{lag}", r, p, M, (-half, half), abs(r) > half))
    a, b = x[: M // 2], x[M // 2:]
    if np.all(x == x[0]):
        out.append(StatReport("halves_ks", 0.0, None, M, None, True))
    else:
        ks = stats.ks_2samp(a, b)
        out.append(StatReport("halves_ks", float(ks.statistic), float(ks.pvalue), M))
    return out


# ---------------------------------------------------------------------------
# tail fits


@dataclass(frozen=True)
class TailFit:
    """log P(X > s) ~ log C - c s^p on the upper half of the sample."""

    c: float
    p: float
    r_squared: float
    log_C: float
    n: int
    alternatives: Mapping[float, float] = field(default_factory=dict)


def empirical_survival(samples) -> tuple[np.ndarray, np.ndarray]:
    """Distinct values s and the fraction of samples strictly above each."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    s, idx = np.unique(x, return_index=True)
    n = x.shape[0]
    counts = np.diff(np.append(idx, n))
    above = n - np.cumsum(counts)
    return s, above / n


def tail_fit(samples, p_grid: Sequence[float] = (0.5, 1.0)) -> TailFit:
    x = np.asarray(samples, dtype=np.float64)
    x = x[np.isfinite(x)]
    if x.shape[0] < 100:
        raise InsufficientData("need at least 100 finite samples")
    if np.any(x < 0):
        raise ValueError("tail fit needs non-negative samples")
    s, surv = empirical_survival(x)
    keep = (surv > 0) & (surv <= 0.5)
    s, surv = s[keep], surv[keep]
    if s.shape[0] < 3:
        raise Degenerate("too few distinct values in the upper half")
    y = np.log(surv)
    best = None
    alts = {}
    for p in p_grid:
        fit = stats.linregress(s ** p, y)
        r2 = float(fit.rvalue ** 2)
        alts[float(p)] = r2
        if best is None or r2 > best[2]:
            best = (-float(fit.slope), float(p), r2, float(fit.intercept))
    return TailFit(best[0], best[1], best[2], best[3], int(x.shape[0]), alts)


# ---------------------------------------------------------------------------
# normality and two-sample tests


def spread_ties(x: np.ndarray, lattice: float) -> np.ndarray:
    """Spread the k copies of a lattice value evenly over its cell
    [v - h/2, v + h/2]; the result has the quantiles of x plus an
    independent uniform on the cell."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    vals, start, counts = np.unique(xs, return_index=True, return_counts=True)
    j = np.arange(xs.shape[0]) - np.repeat(start, counts)
    k = np.repeat(counts, counts)
    out = np.empty_like(xs)
    out[order] = xs - lattice / 2 + lattice * (j + 0.5) / k
    return out


def normality_test(samples, lattice: Optional[float] = None) -> StatReport:
    """Lilliefors test of normality (mean and SD estimated), plus skewness
    and excess kurtosis.  ``lattice`` spreads ties of lattice-valued data."""
    from statsmodels.stats.diagnostic import lilliefors

    x = np.asarray(samples, dtype=np.float64)
    n = x.shape[0]
    if n < 200:
        raise InsufficientData("need at least 200 samples")
    sd = x.std()
    if not sd > 0:
        raise Degenerate("zero variance")
    z = (x - x.mean()) / sd
    if lattice is not None:
        if not lattice > 0:
            raise ValueError("lattice spacing must be positive")
        z = spread_ties(z, lattice / sd)
    d, p = lilliefors(z, dist="norm", pvalmethod="approx")
    return StatReport("lilliefors", float(d), float(min(max(p, 0.0), 1.0)), n,
                      extra={"skewness": float(stats.skew(x)), "excess_kurtosis": float(stats.kurtosis(x))})


def two_sample_test(a, b) -> StatReport:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] < 50 or b.shape[0] < 50:
        raise InsufficientData("need at least 50 samples per arm")
    ks = stats.ks_2samp(a, b)
    return StatReport("ks_2samp", float(ks.statistic), float(ks.pvalue), int(a.shape[0] + b.shape[0]))


# ---------------------------------------------------------------------------
# tightness


def tightness_profile(gaps: Sequence[Sequence[float]], L_grid: Sequence[float]) -> np.ndarray:
    """P(gap > L) per time cell (rows) and threshold (columns)."""
    L = np.asarray(L_grid, dtype=np.float64)
    if np.any(np.diff(L) < 0):
        raise ValueError("L_grid must be nondecreasing")
    rows = []
    for cell in gaps:
        g = np.sort(np.asarray(cell, dtype=np.float64))
        if g.shape[0] == 0:
            raise InsufficientData("empty time cell")
        if g.shape[0] < 100:
            raise InsufficientData("each time cell needs at least 100 samples")
        rows.append(1.0 - np.searchsorted(g, L, side="right") / g.shape[0])
    return np.array(rows)


def tightness_csv(t_grid, L_grid, profile: np.ndarray) -> str:
    lines = ["t," + ",".join(f"{l:g}" for l in L_grid)]
    for t, row in zip(t_grid, profile):
        lines.append(f"{t:g}," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def quantile_ratio(gaps: Sequence[Sequence[float]], q: float = 0.99) -> tuple[np.ndarray, float]:
    """Per-cell q-quantiles and the ratio of the largest to the smallest."""
    qs = np.array([np.quantile(np.asarray(c, dtype=np.float64), q, method="inverted_cdf") for c in gaps])
    if np.any(qs <= 0):
        return qs, math.inf
    return qs, float(qs.max() / qs.min())
