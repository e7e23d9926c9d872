#!/usr/bin/env python3
"""Run the heavy acceptance experiments and cache their outputs.

Each run writes into runs/acceptance/<name>/ and is skipped when the
directory already holds a manifest with the same input hash (config,
package version and source code).  Set ACCEPTANCE_FRESH=1 to recompute.

    python3 scripts/run_acceptance.py            # all runs
    python3 scripts/run_acceptance.py c4 c7      # runs whose name starts with c4 or c7
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

from cpinterface import harness as H

ROOT = Path(__file__).resolve().parents[1] / "runs" / "acceptance"

# generic supercritical setting shared by every run; A1 and A2 hold here
BASE = {"lambda": 3.0, "r_left": 0.5, "r0": 2.0, "r1": 1.0, "h_neg": 20, "h_surv": 20}
SEEDS = (11, 12, 13, 14, 15)


def _runs():
    runs = [("c1_free_barrier", dict(suite="speed", model="cbp", r0=2.0, r1=2.0, horizon=50, reps=10000,
                                      alpha_reps=200, seed=1))]
    for model in ("cbp", "mcp"):
        for s in SEEDS:
            runs.append((f"c4_sew_{model}_{s}", dict(suite="sew-vs-direct", model=model, horizon=20, reps=2000,
                                                     seed=s)))
    for model in ("cbp", "mcp"):
        runs.append((f"c5_renewals_{model}", dict(suite="renewals", model=model, reps=100, patches=100,
                                                  min_renewals=500, seed=5)))
        runs.append((f"c7_clt_{model}", dict(suite="clt", model=model, horizon=100, reps=5000,
                                             renewal_reps=100, patches=100, seed=7)))
        runs.append((f"c8_tightness_{model}", dict(suite="tightness", model=model, horizon=100, reps=1000,
                                                   seed=8)))
        runs.append((f"c9_couple_{model}", dict(suite="couple", model=model, reps=1000, depth_t=2.0, seed=9)))
    runs.append(("c10_rprip", dict(suite="rprip", model="cbp", horizon=5, half_width=20, reps=2000, seed=10)))
    runs.append(("x_speed_methods", dict(suite="speed", model="cbp", method="both", horizon=50, reps=400,
                                         alpha_reps=200, seed=3)))
    return runs


def config_for(name: str, values: dict) -> H.ExperimentConfig:
    v = dict(BASE)
    v.update(values)
    v["out"] = str(ROOT / name)
    return H.make_config({k: str(x) for k, x in v.items()})


RUNS = [(name, config_for(name, v)) for name, v in _runs()]


TIMINGS = ROOT / "timings.json"


def timings() -> dict:
    try:
        return json.loads(TIMINGS.read_text())
    except (OSError, ValueError):
        return {}


def run(name: str, cfg: H.ExperimentConfig, fresh: bool = False) -> H.RunArtifacts:
    """Cached run; wall time of fresh computations goes to timings.json
    keyed by name and input hash."""
    t0 = time.time()
    art = H.run_experiment(cfg, reuse=not fresh)
    if not art.reused:
        t = timings()
        t[name] = {"seconds": round(time.time() - t0, 1), "input_hash": art.manifest["input_hash"]}
        ROOT.mkdir(parents=True, exist_ok=True)
        TIMINGS.write_text(json.dumps(t, sort_keys=True, indent=1) + "\n")
    return art


def main(argv) -> int:
    fresh = os.environ.get("ACCEPTANCE_FRESH") == "1"
    status = 0
    for name, cfg in RUNS:
        if argv and not any(name.startswith(a) for a in argv):
            continue
        art = run(name, cfg, fresh)
        tag = "cached" if art.reused else f"{timings()[name]['seconds']:.0f}s"
        print(f"{name:22s} {tag:>7s}  {art.verdict}", flush=True)
        status |= 0 if art.passed else 1
    return status


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
