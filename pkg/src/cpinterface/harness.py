"""Replicated experiments: speed estimates, assumption checks and the
verification suites, with reproducible manifests and atomic outputs.

Replica i of a suite draws all its randomness from keys that start with
(seed, suite code, arm, i), so results do not depend on execution order or
on the number of workers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from . import dynamics as dyn
from . import events as ev
from . import patchwork as pw
from . import renewal_stats as rs
from . import rng as _rng

SUITES = ("speed", "tightness", "clt", "renewals", "couple", "rprip", "sew-vs-direct")
SIMS = ("sim-cp", "sim-cbp", "sim-mcp")
MODELS = ("cp", "cbp", "mcp")
_CODE = {name: i for i, name in enumerate(SUITES + SIMS)}


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


class HarnessFailure(RuntimeError):
    """An estimate could not be produced (e.g. too many tainted replicas)."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    suite: str = "speed"
    model: str = "cbp"
    lam: float = 3.0
    lam2: Optional[float] = None
    r_left: float = 0.5
    r0: float = 2.0
    r1: float = 1.0
    horizon: float = 50.0
    reps: int = 1000
    seed: int = 42
    h_neg: float = 30.0
    h_surv: float = 30.0
    out: str = "runs/exp"
    method: str = "terminal"
    t_grid: tuple = ()
    patches: int = 100
    renewal_reps: int = 100
    alpha_reps: int = 500
    depth_t: float = 2.0
    half_width: int = 20
    min_renewals: int = 500
    alpha: float = 0.01
    taint_bound: float = 0.05
    workers: int = 1
    fault: int = 0

    def __post_init__(self):
        if self.suite not in SUITES + SIMS:
            raise ConfigError(f"unknown suite {self.suite!r}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        for name in ("lam", "r_left", "r0", "r1"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{_KEY_OF.get(name, name)} must be a finite non-negative number")
        if self.lam2 is not None and not (math.isfinite(self.lam2) and self.lam2 >= 0):
            raise ConfigError("lambda2 must be a finite non-negative number")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if self.reps < 1 or self.patches < 1 or self.renewal_reps < 1 or self.alpha_reps < 2:
            raise ConfigError("replica and patch counts must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not (self.h_neg > 0 and self.h_surv > 0 and self.depth_t > 0):
            raise ConfigError("h_neg, h_surv and depth_t must be positive")
        if self.method not in ("terminal", "renewal", "both"):
            raise ConfigError("method must be terminal, renewal or both")
        if not (0 < self.alpha < 1 and 0 <= self.taint_bound <= 1):
            raise ConfigError("alpha must lie in (0, 1) and taint_bound in [0, 1]")
        if self.workers < 1 or self.half_width < 2:
            raise ConfigError("workers must be >= 1 and half_width >= 2")
        if any(not t > 0 for t in self.t_grid):
            raise ConfigError("t_grid entries must be positive")

    @property
    def cbp_params(self) -> dyn.CbpParams:
        return dyn.CbpParams(self.lam, self.r_left, self.r0, self.r1)

    @property
    def mcp_params(self) -> dyn.McpParams:
        return dyn.McpParams(self.lam, self.lam if self.lam2 is None else self.lam2)

    @property
    def params(self):
        return self.mcp_params if self.model == "mcp" else self.cbp_params

    @property
    def patch_config(self) -> pw.PatchConfig:
        return pw.PatchConfig(h_neg=self.h_neg, h_surv=self.h_surv)

    @property
    def times(self) -> tuple:
        if self.t_grid:
            return tuple(sorted(set(float(t) for t in self.t_grid)))
        if self.suite == "tightness":
            return tuple(float(t) for t in range(10, int(self.horizon) + 1, 10)) or (self.horizon,)
        if self.suite == "clt":
            return tuple(t for t in (50.0, 100.0) if t <= self.horizon) or (self.horizon,)
        return (self.horizon,)

    def resolved(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            d[_KEY_OF.get(f.name, f.name)] = list(v) if isinstance(v, tuple) else v
        return d


_KEY_OF = {"lam": "lambda", "lam2": "lambda2"}
_FIELD_OF = {v: k for k, v in _KEY_OF.items()}
_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
CONFIG_KEYS = tuple(_KEY_OF.get(f.name, f.name) for f in dataclasses.fields(ExperimentConfig))


def parse_config_text(text: str) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"line {n}: empty key")
        out[k] = v
    return out


def load_config_file(path) -> dict:
    try:
        return parse_config_text(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def _convert(name: str, value):
    kind = _TYPES[name]
    if value is None:
        return None
    try:
        if kind in ("float", "Optional[float]"):
            return None if value in ("", "none", "None") else float(value)
        if kind == "int":
            if isinstance(value, str):
                f = float(value)
                if f != int(f):
                    raise ValueError
                return int(f)
            return int(value)
        if kind == "tuple":
            if isinstance(value, str):
                return tuple(float(v) for v in value.split(",") if v.strip())
            return tuple(float(v) for v in value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {_KEY_OF.get(name, name)}: {value!r}") from None


def make_config(values: dict) -> ExperimentConfig:
    kw = {}
    for k, v in values.items():
        name = _FIELD_OF.get(k, k)
        if name not in _TYPES or name in _KEY_OF and k == name:
            raise ConfigError(f"unknown config key {k!r}")
        kw[name] = _convert(name, v)
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class SpeedEstimate:
    value: float
    se: float
    count: int
    horizon: float
    tainted: int = 0
    method: str = "terminal"

    def __post_init__(self):
        if self.count > 1 and not self.se >= 0:
            raise ValueError("standard error must be non-negative")


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.shape[0]))


def _map(fn: Callable, args: Sequence, workers: int) -> list:
    if workers <= 1 or len(args) < 2:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args, chunksize=max(1, len(args) // (8 * workers))))


def _front_rep(a):
    lam, horizon, key = a
    r = dyn.cp_front(lam, horizon, key)
    return math.nan if r is None else r / horizon


def cp_speed_samples(lam: float, horizon: float, reps: int, seed, workers: int = 1) -> np.ndarray:
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    return np.array(_map(_front_rep, [(lam, horizon, base + (i,)) for i in range(reps)], workers))


def _estimate(vals: np.ndarray, horizon: float, method: str, max_taint: float) -> SpeedEstimate:
    good = vals[np.isfinite(vals)]
    bad = int(vals.shape[0] - good.shape[0])
    if bad > max_taint * vals.shape[0]:
        raise HarnessFailure(f"{bad} of {vals.shape[0]} replicas tainted")
    if good.shape[0] < 2:
        raise HarnessFailure("fewer than two usable replicas")
    m, se = _mean_se(good)
    return SpeedEstimate(m, se, int(good.shape[0]), horizon, bad, method)


def estimate_cp_speed(lam: float, horizon: float, reps: int, seed, workers: int = 1) -> SpeedEstimate:
    """Mean and SE of R_h / h, R the rightmost particle from every site <= 0
    occupied."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if reps < 2:
        raise ValueError("standard error needs at least two replicas")
    return _estimate(cp_speed_samples(lam, horizon, reps, seed, workers), horizon, "terminal", 0.2)


def _barrier_rep(a):
    params, horizon, key = a
    run = dyn.run_cbp_heaviside(params, horizon, key)
    return math.nan if run.taint else run.interface.at(horizon)[0] / horizon


def _patchwork_rep(a):
    model, params, config, duration, n_patches, key = a
    run = pw.run_patchwork(model, pw.heaviside_trail(model, h_neg=config.h_neg), n_patches, params, config, key,
                           min_duration=duration)
    return run


def _renewal_summary(runs) -> rs.RenewalSummary:
    dts, dzs = [], []
    for run in runs:
        good = [r for r in run.records if not r.taint]
        res = pw.RenewalResult(run.kappas, run.censored, run.renewal_indices, run.renewal_times)
        dt, dz = res.increments(good)
        dts.append(dt)
        dzs.append(dz)
    return rs.RenewalSummary(np.concatenate(dts) if dts else np.zeros(0), np.concatenate(dzs) if dzs else np.zeros(0))


def estimate_barrier_speed(params: dyn.CbpParams, horizon: float, reps: int, seed, method: str = "terminal",
                           config: pw.PatchConfig = pw.PatchConfig(), workers: int = 1,
                           max_taint: float = 0.2) -> SpeedEstimate:
    """terminal: mean of B_h / h over direct runs; renewal: ratio of summed
    barrier increments to summed durations between renewals of patchwork
    runs of length >= h."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if reps < 2:
        raise ValueError("standard error needs at least two replicas")
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    if method == "terminal":
        vals = np.array(_map(_barrier_rep, [(params, horizon, base + (i,)) for i in range(reps)], workers))
        return _estimate(vals, horizon, "terminal", max_taint)
    if method != "renewal":
        raise ValueError(f"unknown method {method!r}")
    # the last h_neg of a run cannot be decided, so run that much longer
    dur = horizon + config.h_neg
    runs = _map(_patchwork_rep, [("cbp", params, config, dur, 1, base + (i,)) for i in range(reps)], workers)
    bad = sum(r.taint for r in runs)
    if bad > max_taint * reps:
        raise HarnessFailure(f"{bad} of {reps} patchwork runs tainted")
    summ = _renewal_summary(runs)
    if summ.count < 10:
        raise rs.InsufficientData(f"only {summ.count} renewal increments")
    mu, _ = rs.renewal_clt_estimate(summ)
    return SpeedEstimate(mu, rs.renewal_mu_se(summ), summ.count, horizon, bad, "renewal")


# ---------------------------------------------------------------------------
# assumptions


@dataclass(frozen=True)
class AssumptionReport:
    a1: str
    a1_pessimistic: str
    a2: Optional[str] = None
    a2_pessimistic: Optional[str] = None
    margins: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"A1": self.a1, "A1_3se": self.a1_pessimistic, "A2": self.a2, "A2_3se": self.a2_pessimistic,
                **{k: v for k, v in self.margins.items()}}


def _verdict(point: float, lo: float, hi: float) -> tuple[str, str]:
    """Sign of a strict inequality `margin > 0` at the point estimate and
    over the band [lo, hi]."""
    p = "holds" if point > 0 else ("fails" if point < 0 else "indeterminate")
    q = "holds" if lo > 0 else ("fails" if hi < 0 else "indeterminate")
    return p, q


def check_assumptions(params: dyn.CbpParams, alpha_hat: SpeedEstimate, b_hat: Optional[SpeedEstimate] = None,
                      a2: Optional[bool] = None) -> AssumptionReport:
    """A1: min(r0, r1) - r_left > -alpha.  A2: r1 <= r0 and B > -alpha.
    Each is reported at the point estimates and over +-3 SE."""
    if alpha_hat is None:
        raise ValueError("alpha estimate required")
    want_a2 = b_hat is not None if a2 is None else a2
    if want_a2 and b_hat is None:
        raise ValueError("A2 needs a barrier speed estimate")
    al, ase = alpha_hat.value, alpha_hat.se
    m1 = min(params.r0, params.r1) - params.r_left + al
    a1p, a1q = _verdict(m1, m1 - 3 * ase, m1 + 3 * ase)
    margins = {"A1_margin": m1}
    if not want_a2:
        return AssumptionReport(a1p, a1q, margins=margins)
    m2 = b_hat.value + al
    s2 = 3 * math.hypot(b_hat.se, ase)
    if params.r1 > params.r0:
        a2p = a2q = "fails"
    else:
        a2p, a2q = _verdict(m2, m2 - s2, m2 + s2)
    margins["A2_margin"] = m2
    return AssumptionReport(a1p, a1q, a2p, a2q, margins)


# ---------------------------------------------------------------------------
# suite results and persistence


@dataclass
class SuiteResult:
    passed: bool
    fields: dict
    files: dict
    summary: dict
    counts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunArtifacts:
    suite: str
    out: Path
    passed: bool
    verdict: str
    files: tuple
    summary: dict
    manifest: dict
    reused: bool = False


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(v) for v in r) + "\n")
    return buf.getvalue()


def _short(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def verdict_line(suite: str, passed: bool, fields: dict) -> str:
    parts = [f"SUITE {suite} {'PASS' if passed else 'FAIL'}"]
    parts += [f"{k}={_short(v)}" for k, v in fields.items()]
    return " ".join(parts)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def code_hash() -> str:
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def input_hash(config: ExperimentConfig) -> str:
    d = config.resolved()
    d.pop("out", None)
    d.pop("workers", None)
    blob = json.dumps({"config": d, "version": __version__, "code": code_hash()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        if math.isnan(o):
            return None
        if math.isinf(o):
            return "inf" if o > 0 else "-inf"
        return o
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    return o


def run_experiment(config: ExperimentConfig, reuse: bool = False) -> RunArtifacts:
    """Run a suite and publish its outputs and manifest into ``config.out``.

    With ``reuse`` an existing output directory whose manifest carries the
    same input hash (config, version and source code) is returned as is.
    """
    out = Path(config.out)
    ih = input_hash(config)
    if reuse:
        prev = _load_previous(out, ih)
        if prev is not None:
            return prev
    res = _RUNNERS[config.suite](config)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in res.files.items():
            p = out / name
            _atomic_write(p, text)
            paths.append(p)
        summary = _jsonable(res.summary)
        _atomic_write(out / "summary.json", json.dumps(summary, sort_keys=True, indent=1) + "\n")
        line = verdict_line(config.suite, res.passed, res.fields)
        manifest = {
            "suite": config.suite,
            "model": config.model,
            "params": _jsonable(dataclasses.asdict(config.params)),
            "window": _window_note(config),
            "horizons": {"h_neg": config.h_neg, "h_surv": config.h_surv,
                         "adjacency": config.patch_config.adj_horizon, "total": config.horizon},
            "reps": config.reps,
            "seed": config.seed,
            "version": __version__,
            "rng": _rng.RNG_ID,
            "config": _jsonable(config.resolved()),
            "input_hash": ih,
            "counts": _jsonable(res.counts),
            "passed": res.passed,
            "verdict": line,
            "outputs": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in paths},
        }
        _atomic_write(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    except OSError as e:
        raise OSError(f"cannot write outputs to {out}: {e}") from e
    return RunArtifacts(config.suite, out, res.passed, line, tuple(paths), summary, manifest)


def _load_previous(out: Path, ih: str) -> Optional[RunArtifacts]:
    try:
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
    if manifest.get("input_hash") != ih:
        return None
    paths = []
    for name, digest in manifest.get("outputs", {}).items():
        p = out / name
        if not p.exists() or hashlib.sha256(p.read_bytes()).hexdigest() != digest:
            return None
        paths.append(p)
    return RunArtifacts(manifest["suite"], out, bool(manifest["passed"]), manifest["verdict"], tuple(paths),
                        summary, manifest, True)


def _window_note(config: ExperimentConfig) -> dict:
    note = {"policy": "grow x1.5 on exterior dependence"}
    if config.model == "cbp":
        note["direct_start"] = list(dyn.cbp_window(config.cbp_params, config.horizon))
        note["patch_margins"] = list(config.patch_config.margins("cbp", config.lam))
    elif config.model == "mcp":
        note["direct_start"] = list(dyn.mcp_window(config.mcp_params, config.horizon))
        lam = max(config.mcp_params.lam1, config.mcp_params.lam2)
        note["patch_margins"] = list(config.patch_config.margins("mcp", lam))
    if config.suite == "rprip":
        note["rprip"] = [-config.half_width, config.half_width]
    return note


def _key(config: ExperimentConfig, arm: int = 0) -> tuple:
    return (config.seed, _CODE[config.suite], arm)


def _taint_ok(bad: int, total: int, bound: float) -> bool:
    return total > 0 and bad <= bound * total


# ---------------------------------------------------------------------------
# direct interface samples


def _direct_rep(a):
    model, params, times, key = a
    horizon = max(times)
    run = dyn.run_cbp_heaviside(params, horizon, key) if model == "cbp" else dyn.run_mcp_heaviside(params, horizon, key)
    if run.taint:
        return None
    itf = run.interface
    return [(itf.position(t), itf.gap(t), itf.at(t)) for t in times], run.regrowths


def _direct_samples(config: ExperimentConfig, times, reps: int, arm: int = 0):
    base = _key(config, arm)
    args = [(config.model, config.params, tuple(times), base + (i,)) for i in range(reps)]
    return _map(_direct_rep, args, config.workers)


# ---------------------------------------------------------------------------
# suites


def _suite_speed(c: ExperimentConfig) -> SuiteResult:
    fields, summary, files, counts = {}, {}, {}, {}
    passed = True
    if c.model == "cp":
        vals = cp_speed_samples(c.lam, c.horizon, c.reps, _key(c), c.workers)
        files["speed.csv"] = _csv(["rep", "value"], enumerate(vals))
        bad = int(np.sum(~np.isfinite(vals)))
        est = _estimate(vals, c.horizon, "terminal", 1.0)
        counts["tainted"] = bad
        passed = est.value > 0 and _taint_ok(bad, c.reps, c.taint_bound)
        fields.update(alpha=est.value, se=est.se, n=est.count, tainted=bad)
        summary["alpha"] = dataclasses.asdict(est)
        return SuiteResult(passed, fields, files, summary, counts)
    if c.model == "mcp":
        samples = _direct_samples(c, (c.horizon,), c.reps)
        vals = np.array([math.nan if s is None else s[0][0][0] / c.horizon for s in samples])
        files["speed.csv"] = _csv(["rep", "value"], enumerate(vals))
        bad = int(np.sum(~np.isfinite(vals)))
        est = _estimate(vals, c.horizon, "terminal", 1.0)
        counts["tainted"] = bad
        passed = _taint_ok(bad, c.reps, c.taint_bound)
        fields.update(mu=est.value, se=est.se, n=est.count, tainted=bad)
        summary["interface_speed"] = dataclasses.asdict(est)
        return SuiteResult(passed, fields, files, summary, counts)

    p = c.cbp_params
    methods = ("terminal", "renewal") if c.method == "both" else (c.method,)
    ests = {}
    for m in methods:
        if m == "terminal":
            base = _key(c, 0)
            vals = np.array(_map(_barrier_rep, [(p, c.horizon, base + (i,)) for i in range(c.reps)], c.workers))
            files["speed.csv"] = _csv(["rep", "value"], enumerate(vals))
            ests[m] = _estimate(vals, c.horizon, "terminal", 1.0)
        else:
            ests[m] = estimate_barrier_speed(p, c.horizon, c.reps, _key(c, 1), "renewal", c.patch_config,
                                             c.workers, max_taint=1.0)
    alpha = estimate_cp_speed(c.lam, c.horizon, c.alpha_reps, _key(c, 2), c.workers)
    report = check_assumptions(p, alpha, ests[methods[0]])
    bad = sum(e.tainted for e in ests.values())
    total = c.reps * len(methods)
    passed = _taint_ok(bad, total, c.taint_bound)
    for m, e in ests.items():
        tag = "" if len(ests) == 1 else "_" + m
        fields[f"B{tag}"] = e.value
        fields[f"se{tag}"] = e.se
        summary[m] = dataclasses.asdict(e)
    if p.r0 == p.r1:
        exact = p.r0 - p.r_left
        for m, e in ests.items():
            ok = abs(e.value - exact) < 3 * e.se if e.se > 0 else e.value == exact
            passed = passed and ok
        fields["exact"] = exact
        summary["exact_drift"] = exact
    if len(ests) == 2:
        a, b = ests["terminal"], ests["renewal"]
        z = abs(a.value - b.value) / max(math.hypot(a.se, b.se), 1e-300)
        passed = passed and z < 3
        fields["z_methods"] = z
    fields.update(alpha=alpha.value, A1=report.a1, A2=report.a2, tainted=bad)
    summary["alpha"] = dataclasses.asdict(alpha)
    summary["assumptions"] = report.to_dict()
    counts["tainted"] = bad
    return SuiteResult(passed, fields, files, summary, counts)


def _suite_tightness(c: ExperimentConfig) -> SuiteResult:
    times = c.times
    samples = _direct_samples(c, times, c.reps)
    bad = sum(s is None for s in samples)
    good = [s[0] for s in samples if s is not None]
    gaps = [np.array([g[k][1] for g in good]) for k in range(len(times))]
    missing = [int(np.sum(~np.isfinite(g))) for g in gaps]
    gaps = [g[np.isfinite(g)] for g in gaps]
    top = int(max((g.max() for g in gaps if g.size), default=1))
    L = list(range(0, top + 1))
    files, fields = {}, {}
    try:
        prof = rs.tightness_profile(gaps, L)
    except rs.InsufficientData as e:
        return SuiteResult(False, {"error": str(e).replace(" ", "_")}, {}, {"error": str(e)}, {"tainted": bad})
    files["tightness.csv"] = rs.tightness_csv(times, L, prof)
    qs, ratio = rs.quantile_ratio(gaps, 0.99)
    files["quantiles.csv"] = _csv(["t", "n", "q99", "no_particle"],
                                  [(t, g.shape[0], q, m) for t, g, q, m in zip(times, gaps, qs, missing)])
    passed = ratio < 1.5 and _taint_ok(bad, c.reps, c.taint_bound)
    fields.update(ratio=ratio, q99_min=float(qs.min()), q99_max=float(qs.max()), n=min(g.shape[0] for g in gaps),
                  tainted=bad)
    summary = {"times": list(times), "q99": qs.tolist(), "ratio": ratio, "no_particle": missing}
    return SuiteResult(passed, fields, files, summary, {"tainted": bad})


def _records_csv(model, runs) -> str:
    nx = 1 if model == "cbp" else 2
    head = ["rep", "n", "T"] + (["X"] if nx == 1 else ["X1", "X2"]) + ["D", "taint"]
    rows = []
    for rep, run in enumerate(runs):
        for n, r in enumerate(run.records):
            x = list(r.X) if len(r.X) == nx else [math.nan] * nx
            rows.append([rep, n, r.T, *x, r.D, int(r.taint)])
    return _csv(head, rows)


def _renewals_csv(runs) -> str:
    rows = []
    for rep, run in enumerate(runs):
        good = [r for r in run.records if not r.taint]
        res = pw.RenewalResult(run.kappas, run.censored, run.renewal_indices, run.renewal_times)
        dt, dz = res.increments(good)
        for k, (nk, tk) in enumerate(zip(run.renewal_indices.tolist(), run.renewal_times.tolist())):
            d1 = dt[k] if k < dt.shape[0] else math.nan
            d2 = dz[k] if k < dz.shape[0] else math.nan
            rows.append([rep, k, nk, tk, d1, d2])
    return _csv(["rep", "k", "N_k", "tau_k", "delta_tau", "delta_i"], rows)


def _patchwork_runs(c: ExperimentConfig, reps: int, n_patches: int, duration: float = 0.0, arm: int = 0):
    base = _key(c, arm)
    args = [(c.model, c.params, c.patch_config, duration, n_patches, base + (i,)) for i in range(reps)]
    return _map(_patchwork_rep, args, c.workers)


def kappa_violations(run) -> int:
    """Count failures of: kappa_m >= n > m implies kappa_m >= kappa_n;
    kappa_n = n iff D^n >= 0; renewal depths are -inf."""
    k = run.kappas
    good = [r for r in run.records if not r.taint]
    D = np.array([r.D for r in good])
    bad = 0
    known = np.nonzero(~np.isnan(k))[0]
    for m in known:
        for n in known:
            if m < n <= k[m] and not k[m] >= k[n]:
                bad += 1
    for n in known:
        if (k[n] == n) != (D[n] >= 0):
            bad += 1
    bad += int(np.sum(np.isfinite(D[run.renewal_indices])))
    return bad


def _suite_renewals(c: ExperimentConfig) -> SuiteResult:
    runs = _patchwork_runs(c, c.reps, c.patches)
    bad_runs = sum(r.taint for r in runs)
    recs = [r for run in runs for r in run.records if not r.taint]
    T = np.array([r.T for r in recs])
    D = np.array([r.D for r in recs])
    summ = _renewal_summary(runs)
    files = {"records.csv": _records_csv(c.model, runs), "renewals.csv": _renewals_csv(runs)}
    fields, summary = {}, {}
    passed = _taint_ok(bad_runs, c.reps, c.taint_bound)
    kv = sum(kappa_violations(run) for run in runs)
    passed = passed and kv == 0 and bool(np.all(T >= 1))
    M = summ.count
    fields["M"] = M
    passed = passed and M >= c.min_renewals
    reports = {}
    if M >= 20:
        for name, x in (("delta_tau", summ.delta_tau), ("delta_i", summ.delta_z)):
            rep = rs.iid_diagnostics(x)
            reports[name] = [r.to_dict() for r in rep]
            acf1, _, halves = rep
            ok = (not acf1.flagged) and halves.p is not None and halves.p > c.alpha
            passed = passed and ok
            fields[f"acf1_{name}"] = acf1.value
            fields[f"halves_p_{name}"] = halves.p
    else:
        passed = False
    try:
        tf = rs.tail_fit(T, p_grid=(1.0,))
        fields["T_r2"] = tf.r_squared
        passed = passed and tf.r_squared > 0.9 and tf.c > 0
        summary["T_fit"] = dataclasses.asdict(tf)
    except (rs.InsufficientData, rs.Degenerate) as e:
        passed = False
        summary["T_fit"] = str(e)
    Df = D[np.isfinite(D)]
    try:
        df = rs.tail_fit(Df)
        fields["D_r2"] = df.r_squared
        fields["D_p"] = df.p
        passed = passed and df.r_squared > 0.85
        summary["D_fit"] = dataclasses.asdict(df)
    except (rs.InsufficientData, rs.Degenerate) as e:
        passed = False
        summary["D_fit"] = str(e)
    frac = float(np.mean([len(run.renewal_indices) / max(1, len(run.records)) for run in runs]))
    passed = passed and frac > 0
    fields.update(nT=T.shape[0], renewal_fraction=frac, kappa_violations=kv, tainted=bad_runs)
    if M >= 2:
        mu, sigma = rs.renewal_clt_estimate(summ)
        summary.update(mu=mu, sigma=sigma, mu_se=rs.renewal_mu_se(summ))
    summary.update(iid=reports, renewals=M, patches=int(T.shape[0]), capped=int(sum(r.depth_capped for r in recs)),
                   kappa_violations=kv)
    return SuiteResult(passed, fields, files, summary, {"tainted": bad_runs})


def _suite_clt(c: ExperimentConfig) -> SuiteResult:
    times = c.times
    samples = _direct_samples(c, times, c.reps)
    bad = sum(s is None for s in samples)
    good = [s[0] for s in samples if s is not None]
    runs = _patchwork_runs(c, c.renewal_reps, c.patches, arm=1)
    bad_pw = sum(r.taint for r in runs)
    summ = _renewal_summary(runs)
    files = {"renewals.csv": _renewals_csv(runs)}
    fields, summary = {}, {}
    passed = _taint_ok(bad, c.reps, c.taint_bound) and _taint_ok(bad_pw, c.renewal_reps, c.taint_bound)
    if summ.count < 2:
        return SuiteResult(False, {"error": "no_renewals"}, files, {}, {"tainted": bad})
    mu, sigma = rs.renewal_clt_estimate(summ)
    fields.update(mu=mu, sigma_renewal=sigma, M=summ.count)
    rows, qq = [], []
    for k, t in enumerate(times):
        x = np.array([g[k][0] for g in good])
        x = x[np.isfinite(x)]
        z = (x - mu * t) / (sigma * math.sqrt(t))
        # midpoints sit on a 0.5 grid with a gap-parity ripple; smooth over the unit barrier lattice
        rep = rs.normality_test(x, lattice=1.0)
        sd_direct = float(x.std(ddof=1) / math.sqrt(t))
        rel = sd_direct / sigma - 1.0
        ok = rep.p > c.alpha and abs(rep.extra["skewness"]) < 0.2 and abs(rel) < 0.10
        passed = passed and ok
        rows.append([t, x.shape[0], float(x.mean()), float(x.std(ddof=1)), sd_direct, rep.value, rep.p,
                     rep.extra["skewness"], rep.extra["excess_kurtosis"], float(z.mean()), float(z.std(ddof=1))])
        qq += [[i, t, v] for i, v in enumerate(x)]
        tag = f"@{t:g}"
        fields[f"p{tag}"] = rep.p
        fields[f"skew{tag}"] = rep.extra["skewness"]
        fields[f"sigma_direct{tag}"] = sd_direct
    files["clt.csv"] = _csv(["t", "n", "mean", "sd", "sigma_direct", "lilliefors", "p", "skewness",
                             "excess_kurtosis", "z_mean", "z_sd"], rows)
    files["clt_samples.csv"] = _csv(["rep", "t", "i"], qq)
    fields["tainted"] = bad + bad_pw
    summary.update(mu=mu, sigma=sigma, mu_se=rs.renewal_mu_se(summ), renewals=summ.count)
    return SuiteResult(passed, fields, files, summary, {"tainted": bad, "tainted_patchwork": bad_pw})


# couple -------------------------------------------------------------------


def _couple_rep(a):
    model, params, config, t, key, fault = a
    trail = pw.heaviside_trail(model, h_neg=config.h_neg)
    ka = key[-1] % 4 + 1
    run_a = pw.run_patchwork(model, trail, ka, params, config, key + (0,))
    run_o = pw.run_patchwork(model, trail, ka + 1, params, config, key + (1,))
    if run_a.taint or run_o.taint:
        return None
    ga = run_a.trail
    variant = key[-1] % 2
    gb = ga.spliced(run_o.trail, t) if variant == 0 else ga.restricted(t)
    seed_b = key + (2,) if not fault else key + (3,)
    ra = pw.run_patch(model, ga, params, config, key + (2,))
    rb = pw.run_patch(model, gb, params, config, seed_b)
    if ra.taint or rb.taint:
        return None
    ok = pw.coupling_holds(ra, rb, t)
    return variant, ra.D, rb.D, bool(ra == rb), bool(ra.D >= t and rb.D >= t), not ok


def _random_ordered_pair(gen: np.random.Generator, span: float, params: dyn.CbpParams):
    """Window with the barrier of the larger configuration near its left end
    and enough room on the right for the barrier to drift over ``span``."""
    room = dyn._poisson_hi(params.r_right * span, 3.0)
    x_lo = -int(gen.integers(4, 9))
    x_hi = room + int(gen.integers(4, 12))
    bb = int(gen.integers(x_lo + 3, 1))
    occ_b = frozenset(int(x) for x in range(bb + 1, x_hi) if gen.random() < 0.6)
    ba = int(gen.integers(bb, bb + 3))
    occ_a = frozenset(x for x in occ_b if x > ba and gen.random() < 0.7)
    return (x_lo, x_hi), dyn.CbpConfiguration(ba, occ_a), dyn.CbpConfiguration(bb, occ_b)


def _monotone_rep(a):
    params, span, key, fault = a
    gen = _rng.generator(key + (0,))
    window, ca, cb = _random_ordered_pair(gen, span, params)
    log = ev.sample_event_log(window, (0.0, span), params.lam, key + (1,))
    plan = ev.sample_flight_plan(params.r_left, params.r0, params.r1, (0.0, span), key + (2,))
    plan_b = plan if not fault else ev.sample_flight_plan(params.r_left, params.r0, params.r1, (0.0, span), key + (3,))
    ta = dyn.evolve_cbp(ca, log, plan, params)
    tb = dyn.evolve_cbp(cb, log, plan_b, params)
    # a closed window is itself a finite system; only a barrier reaching an
    # outer column can cut the run short
    edge = [tr.barrier.min() <= log.x_lo or tr.barrier.max() >= log.x_hi for tr in (ta, tb)]
    if any(edge):
        return None
    checks = np.union1d(ta.times, tb.times)
    bad = sum(not dyn.order_leq(ta.config_at(t), tb.config_at(t)) for t in checks)
    return int(bad), int(checks.shape[0])


def monotone_violations(params: dyn.CbpParams, pairs: int, span: float, seed, fault: bool = False,
                        workers: int = 1):
    """Ordered pairs evolved under shared events; returns per-pair
    (violations, checked times) or None when a barrier reached the window edge."""
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    return _map(_monotone_rep, [(params, span, base + (i,), fault) for i in range(pairs)], workers)


def _suite_couple(c: ExperimentConfig) -> SuiteResult:
    base = _key(c, 0)
    args = [(c.model, c.params, c.patch_config, c.depth_t, base + (i,), bool(c.fault)) for i in range(c.reps)]
    res = _map(_couple_rep, args, c.workers)
    bad = sum(r is None for r in res)
    rows = [[i, *(r if r is not None else (math.nan,) * 6)] for i, r in enumerate(res)]
    files = {"couple.csv": _csv(["rep", "variant", "D_a", "D_b", "equal", "both_deep", "violation"], rows)}
    good = [r for r in res if r is not None]
    viol = sum(r[5] for r in good)
    fields = {"violations": viol, "n": len(good), "equal": sum(r[3] for r in good),
              "both_deep": sum(r[4] for r in good), "t": c.depth_t}
    passed = viol == 0 and _taint_ok(bad, c.reps, c.taint_bound)
    counts = {"tainted": bad}
    if c.model == "cbp" and c.r1 <= c.r0:
        mono = monotone_violations(c.cbp_params, c.reps, min(c.horizon, 5.0), _key(c, 1), bool(c.fault), c.workers)
        mbad = sum(m is None for m in mono)
        files["monotone.csv"] = _csv(["rep", "violations", "checked"],
                                     [[i, *(m if m is not None else (math.nan, math.nan))] for i, m in enumerate(mono)])
        mv = sum(m[0] for m in mono if m is not None)
        fields["monotone_violations"] = mv
        fields["monotone_n"] = len(mono) - mbad
        passed = passed and mv == 0
        counts["monotone_edge"] = mbad
    fields["tainted"] = bad
    return SuiteResult(passed, fields, files, dict(fields), counts)


# rprip --------------------------------------------------------------------


def rprip_observable(log: ev.EventLog, t: float, sources=(0, 1, 2, 3)) -> float:
    """Rightmost site at time t reached from the given sites at time 0."""
    d = ev.descendants(log, [(x, log.t_lo) for x in sources], t)
    return float(max(d)) if d else -math.inf


def _rprip_rep(a):
    lam, w, t, key, resample = a
    window = (-w, w)
    log = ev.sample_blocked_log(window, (0.0, t), lam, key + (_rng.POS,))
    pi = ev.extremal_path(log, range(0, log.x_hi + 1), 0.0, t, "leftmost")
    if pi is None:
        return math.nan, 1
    if not resample:
        return rprip_observable(log, t), 1
    fresh = ev.sample_blocked_log(window, (0.0, t), lam, key + (_rng.FRESH,))
    mixed = ev.resample_side(log, pi, fresh)
    pi2 = ev.extremal_path(mixed, range(0, mixed.x_hi + 1), 0.0, t, "leftmost")
    return rprip_observable(mixed, t), int(pi2 == pi)


def _suite_rprip(c: ExperimentConfig) -> SuiteResult:
    t = c.horizon
    arms = []
    for arm in (0, 1):
        base = _key(c, arm)
        arms.append(_map(_rprip_rep, [(c.lam, c.half_width, t, base + (i,), arm == 1) for i in range(c.reps)],
                         c.workers))
    rows = [[i, arm, v, m] for arm in (0, 1) for i, (v, m) in enumerate(arms[arm])]
    files = {"rprip.csv": _csv(["rep", "arm", "R", "path_kept"], rows)}
    a = np.array([v for v, _ in arms[0] if np.isfinite(v)])
    b = np.array([v for v, _ in arms[1] if np.isfinite(v)])
    kept = sum(m for _, m in arms[1])
    rep = rs.two_sample_test(a, b)
    dead = 2 * c.reps - a.shape[0] - b.shape[0]
    passed = rep.p > c.alpha
    fields = {"p": rep.p, "ks": rep.value, "n_a": a.shape[0], "n_b": b.shape[0], "path_kept": kept, "extinct": dead}
    return SuiteResult(passed, fields, files, dict(fields, test=rep.to_dict()), {"extinct": dead})


# sew-vs-direct --------------------------------------------------------------


def _sew_rep(a):
    model, params, config, t, key = a
    run = pw.run_patchwork(model, pw.heaviside_trail(model, h_neg=config.h_neg), 1, params, config, key,
                           min_duration=t)
    if run.taint:
        return math.nan
    return run.sewed.position(t)


def _suite_sew(c: ExperimentConfig) -> SuiteResult:
    t = c.horizon
    base = _key(c, 0)
    pw_vals = np.array(_map(_sew_rep, [(c.model, c.params, c.patch_config, t, base + (i,)) for i in range(c.reps)],
                            c.workers))
    direct = _direct_samples(c, (t,), c.reps, arm=1)
    dr_vals = np.array([math.nan if s is None else s[0][0][0] for s in direct])
    rows = [[i, "patchwork", v] for i, v in enumerate(pw_vals)] + [[i, "direct", v] for i, v in enumerate(dr_vals)]
    files = {"sew_vs_direct.csv": _csv(["rep", "arm", "i"], rows)}
    a = pw_vals[np.isfinite(pw_vals)]
    b = dr_vals[np.isfinite(dr_vals)]
    bad = 2 * c.reps - a.shape[0] - b.shape[0]
    rep = rs.two_sample_test(a, b)
    passed = rep.p > c.alpha and _taint_ok(bad, 2 * c.reps, c.taint_bound)
    fields = {"p": rep.p, "ks": rep.value, "mean_patchwork": float(a.mean()), "mean_direct": float(b.mean()),
              "n": int(min(a.shape[0], b.shape[0])), "tainted": bad}
    return SuiteResult(passed, fields, files, dict(fields, test=rep.to_dict()), {"tainted": bad})


# single simulations ---------------------------------------------------------


def _suite_sim(c: ExperimentConfig) -> SuiteResult:
    key = (c.seed, _CODE[c.suite], 0, 0)
    if c.suite == "sim-cp":
        path = dyn.cp_front_path(c.lam, c.horizon, key)
        if path is None:
            return SuiteResult(False, {"taint": 1}, {}, {"taint": True}, {"tainted": 1})
        files = {"front.csv": _csv(["t", "R"], zip(*path))}
        fields = {"R": path[1][-1], "t": c.horizon, "taint": 0}
        return SuiteResult(True, fields, files, dict(fields), {"tainted": 0})
    params = c.cbp_params if c.suite == "sim-cbp" else c.mcp_params
    run = (dyn.run_cbp_heaviside if c.suite == "sim-cbp" else dyn.run_mcp_heaviside)(params, c.horizon, key)
    if run.taint:
        return SuiteResult(False, {"taint": 1}, {}, {"taint": True}, {"tainted": 1})
    itf = run.interface
    a, b = itf.at(c.horizon)
    fields = {"left": a, "right": b, "i": itf.position(c.horizon), "t": c.horizon, "regrowths": run.regrowths}
    return SuiteResult(True, fields, {"interface.csv": itf.to_csv()}, dict(fields, window=list(run.window)),
                       {"tainted": 0, "regrowths": run.regrowths})


_RUNNERS = {
    "speed": _suite_speed,
    "tightness": _suite_tightness,
    "clt": _suite_clt,
    "renewals": _suite_renewals,
    "couple": _suite_couple,
    "rprip": _suite_rprip,
    "sew-vs-direct": _suite_sew,
    "sim-cp": _suite_sim,
    "sim-cbp": _suite_sim,
    "sim-mcp": _suite_sim,
}
