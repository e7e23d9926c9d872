import json
import math

import numpy as np
import pytest

from cpinterface import dynamics as dyn
from cpinterface import harness as H
from cpinterface import patchwork as pw
from cpinterface.renewal_stats import InsufficientData

SMALL = {"lambda": "3", "r_left": "0.5", "r0": "2", "r1": "1", "h_neg": "10", "h_surv": "10"}


def cfg(tmp_path, **kw):
    v = dict(SMALL)
    v["out"] = str(tmp_path / kw.pop("name", "out"))
    v.update({k: str(x) for k, x in kw.items()})
    return H.make_config(v)


# ---------------------------------------------------------------------------
# configuration


def test_parse_config_text():
    text = "# comment\nlambda = 3.5\n\nreps=10  # trailing\nt_grid = 10,20\n"
    assert H.parse_config_text(text) == {"lambda": "3.5", "reps": "10", "t_grid": "10,20"}
    with pytest.raises(H.ConfigError):
        H.parse_config_text("lambda 3")
    with pytest.raises(H.ConfigError):
        H.parse_config_text("=3")


def test_make_config_conversions():
    c = H.make_config({"lambda": "2.5", "lambda2": "4", "reps": "1e3", "t_grid": "20, 10,10", "suite": "tightness"})
    assert c.lam == 2.5 and c.lam2 == 4.0 and c.reps == 1000
    assert c.times == (10.0, 20.0)
    assert c.mcp_params == dyn.McpParams(2.5, 4.0)
    assert H.make_config({"lambda": "2"}).mcp_params == dyn.McpParams(2.0, 2.0)
    assert H.make_config({"suite": "tightness", "horizon": "40"}).times == (10.0, 20.0, 30.0, 40.0)
    assert H.make_config({"suite": "clt", "horizon": "100"}).times == (50.0, 100.0)


@pytest.mark.parametrize("values", [
    {"r0": "-1"}, {"lambda": "nan"}, {"reps": "0"}, {"reps": "2.5"}, {"horizon": "0"}, {"suite": "nope"},
    {"model": "voter"}, {"method": "fast"}, {"alpha": "1"}, {"seed": "-3"}, {"lam": "3"}, {"colour": "red"},
    {"t_grid": "10,-5"}, {"workers": "0"}, {"h_neg": "0"},
])
def test_make_config_rejects(values):
    with pytest.raises(H.ConfigError):
        H.make_config(values)


def test_resolved_roundtrip():
    c = H.make_config({"lambda": "2", "t_grid": "5,10", "suite": "clt"})
    d = c.resolved()
    assert d["lambda"] == 2.0 and d["t_grid"] == [5.0, 10.0]
    assert H.make_config({k: (",".join(map(str, v)) if isinstance(v, list) else v)
                          for k, v in d.items() if v is not None}) == c


def test_load_config_missing(tmp_path):
    with pytest.raises(H.ConfigError):
        H.load_config_file(tmp_path / "none.cfg")


def test_input_hash_ignores_out_and_workers(tmp_path):
    a = cfg(tmp_path, name="a")
    b = cfg(tmp_path, name="b", workers=3)
    assert H.input_hash(a) == H.input_hash(b)
    assert H.input_hash(a) != H.input_hash(cfg(tmp_path, seed=43))


# ---------------------------------------------------------------------------
# estimates and assumptions


def test_speed_errors():
    with pytest.raises(ValueError):
        H.estimate_cp_speed(3.0, 10.0, 1, 0)
    with pytest.raises(ValueError):
        H.estimate_barrier_speed(dyn.CbpParams(3, 0.5, 2, 1), 0.0, 10, 0)
    with pytest.raises(ValueError):
        H.estimate_barrier_speed(dyn.CbpParams(3, 0.5, 2, 1), 10.0, 10, 0, method="magic")


def test_cp_speed_supercritical():
    a = H.estimate_cp_speed(10.0, 20.0, 100, 1)
    assert a.value > 0 and a.se < a.value / 10 and a.tainted == 0


def test_cp_speed_monotone_in_lambda():
    vals = [H.estimate_cp_speed(lam, 20.0, 60, 2) for lam in (2.0, 3.0, 5.0)]
    for lo, hi in zip(vals, vals[1:]):
        assert hi.value > lo.value - 3 * math.hypot(lo.se, hi.se)


def test_cp_speed_deterministic():
    assert np.array_equal(H.cp_speed_samples(3.0, 10.0, 5, 7), H.cp_speed_samples(3.0, 10.0, 5, 7))


def test_barrier_speed_frozen_at_zero_rates():
    b = H.estimate_barrier_speed(dyn.CbpParams(3.0, 0.0, 0.0, 0.0), 10.0, 20, 1)
    assert b.value == 0.0 and b.se == 0.0


@pytest.mark.parametrize("method", ["terminal", "renewal"])
def test_free_barrier_drift(method):
    b = H.estimate_barrier_speed(dyn.CbpParams(3.0, 0.5, 2.0, 2.0), 20.0, 60, 4, method=method,
                                 config=pw.PatchConfig(h_neg=10.0, h_surv=10.0))
    assert abs(b.value - 1.5) < 3 * b.se


def test_renewal_speed_too_short():
    with pytest.raises(InsufficientData):
        H.estimate_barrier_speed(dyn.CbpParams(3.0, 0.5, 2.0, 1.0), 1.0, 2, 1, method="renewal",
                                 config=pw.PatchConfig(h_neg=1.0, h_surv=10.0))


def est(v, se=0.01):
    return H.SpeedEstimate(v, se, 100, 10.0, 0, "terminal")


def test_check_assumptions_examples():
    r = H.check_assumptions(dyn.CbpParams(3, 0.5, 2, 2), est(1.0))
    assert r.a1 == "holds" and r.a1_pessimistic == "holds" and r.margins["A1_margin"] == 2.5
    assert H.check_assumptions(dyn.CbpParams(3, 10, 0, 0), est(1.0)).a1 == "fails"
    r = H.check_assumptions(dyn.CbpParams(3, 2.0, 1.0, 1.5), est(1.0))
    assert r.a1 == "indeterminate" and r.a1_pessimistic == "indeterminate"
    r = H.check_assumptions(dyn.CbpParams(3, 2.0, 1.0, 1.5), est(1.02))
    assert r.a1 == "holds" and r.a1_pessimistic == "indeterminate"


def test_check_assumptions_a2():
    r = H.check_assumptions(dyn.CbpParams(3, 0.5, 2, 1), est(1.8), est(0.5))
    assert r.a2 == "holds" and r.a2_pessimistic == "holds"
    r = H.check_assumptions(dyn.CbpParams(3, 0.5, 1, 2), est(1.8), est(0.5))
    assert r.a2 == "fails"
    r = H.check_assumptions(dyn.CbpParams(3, 0.5, 2, 1), est(1.0), est(-3.0))
    assert r.a2 == "fails" and r.a2_pessimistic == "fails"
    with pytest.raises(ValueError):
        H.check_assumptions(dyn.CbpParams(3, 0.5, 2, 1), est(1.0), a2=True)
    with pytest.raises(ValueError):
        H.check_assumptions(dyn.CbpParams(3, 0.5, 2, 1), None)


# ---------------------------------------------------------------------------
# couplings


def test_kappa_violations_zero_on_runs():
    for i in range(5):
        run = pw.run_patchwork("cbp", pw.heaviside_trail("cbp", h_neg=10.0), 30, dyn.CbpParams(3, 0.5, 2, 1),
                               pw.PatchConfig(h_neg=10.0, h_surv=10.0), (i,))
        assert H.kappa_violations(run) == 0


def test_monotone_coupling_small():
    res = H.monotone_violations(dyn.CbpParams(3.0, 0.5, 2.0, 1.0), 40, 3.0, 21)
    done = [r for r in res if r is not None]
    assert len(done) >= 30
    assert sum(v for v, _ in done) == 0 and all(n > 0 for _, n in done)


def test_monotone_fault_detected():
    res = H.monotone_violations(dyn.CbpParams(3.0, 0.5, 2.0, 1.0), 40, 3.0, 21, fault=True)
    assert sum(r[0] for r in res if r is not None) > 0


def test_monotone_pair_is_ordered():
    g = np.random.default_rng(0)
    p = dyn.CbpParams(3.0, 0.5, 2.0, 1.0)
    for _ in range(20):
        window, lo, hi = H._random_ordered_pair(g, 3.0, p)
        assert dyn.order_leq(lo, hi)
        assert window[0] < hi.barrier <= lo.barrier < window[1]


# ---------------------------------------------------------------------------
# run_experiment


def test_verdict_line_format():
    line = H.verdict_line("speed", True, {"B": 1.5, "n": 3, "note": "x", "bad": math.nan})
    assert line == "SUITE speed PASS B=1.5 n=3 note=x bad=nan"


def test_free_barrier_suite_end_to_end(tmp_path):
    c = cfg(tmp_path, suite="speed", r1=2, horizon=20, reps=200, alpha_reps=20, seed=1)
    art = H.run_experiment(c)
    assert art.passed and art.verdict.startswith("SUITE speed PASS B=")
    m = json.loads((art.out / "manifest.json").read_text())
    assert m["config"]["r1"] == 2.0 and m["rng"] and m["input_hash"] == H.input_hash(c)
    assert set(m["outputs"]) == {p.name for p in art.files}


SMALL_SUITES = [
    dict(suite="speed", model="cp", horizon=10, reps=20),
    dict(suite="speed", model="mcp", horizon=10, reps=20),
    dict(suite="tightness", model="cbp", horizon=20, reps=100),
    dict(suite="renewals", model="cbp", reps=3, patches=40, min_renewals=5),
    dict(suite="couple", model="mcp", reps=10),
    dict(suite="rprip", model="cbp", horizon=2, reps=60, half_width=10),
    dict(suite="sew-vs-direct", model="cbp", horizon=5, reps=60),
    dict(suite="sim-cp", model="cp", horizon=5),
    dict(suite="sim-cbp", model="cbp", horizon=5),
    dict(suite="sim-mcp", model="mcp", horizon=5),
]


@pytest.mark.parametrize("values", SMALL_SUITES, ids=lambda v: f"{v['suite']}-{v['model']}")
def test_rerun_byte_identical(tmp_path, values):
    a = H.run_experiment(cfg(tmp_path, name="a", **values))
    b = H.run_experiment(cfg(tmp_path, name="b", **values))
    assert [p.name for p in a.files] == [p.name for p in b.files]
    assert any(p.suffix == ".csv" for p in a.files)
    for p, q in zip(a.files, b.files):
        assert p.read_bytes() == q.read_bytes()
    assert a.verdict == b.verdict


def test_workers_do_not_change_outputs(tmp_path):
    v = dict(suite="sew-vs-direct", model="mcp", horizon=5, reps=60)
    a = H.run_experiment(cfg(tmp_path, name="a", **v))
    b = H.run_experiment(cfg(tmp_path, name="b", workers=2, **v))
    for p, q in zip(a.files, b.files):
        assert p.read_bytes() == q.read_bytes()


def test_reuse_and_invalidation(tmp_path):
    c = cfg(tmp_path, suite="sim-cbp", horizon=5)
    first = H.run_experiment(c)
    assert not first.reused
    again = H.run_experiment(c, reuse=True)
    assert again.reused and again.verdict == first.verdict
    first.files[0].write_text("tampered\n")
    assert not H.run_experiment(c, reuse=True).reused


def test_couple_fault_fails(tmp_path):
    good = H.run_experiment(cfg(tmp_path, name="g", suite="couple", model="cbp", reps=12))
    bad = H.run_experiment(cfg(tmp_path, name="b", suite="couple", model="cbp", reps=12, fault=1))
    assert good.passed and not bad.passed


def test_sim_interface_csv(tmp_path):
    art = H.run_experiment(cfg(tmp_path, suite="sim-cbp", horizon=5))
    lines = (art.out / "interface.csv").read_text().splitlines()
    assert lines[0] == "t,B,ell" and lines[1].startswith("0.0,0,")
    art = H.run_experiment(cfg(tmp_path, name="cp", suite="sim-cp", model="cp", horizon=5))
    assert (art.out / "front.csv").read_text().splitlines()[0] == "t,R"
