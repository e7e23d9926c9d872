"""Command-line front end: ``cpinterface <subcommand> [--config FILE] [--key value ...]``.

Exit codes: 0 pass, 1 statistical failure, 2 usage, validation or I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import __version__
from . import harness as H
from .rng import RNG_ID

DOCS = {
    "sim-cp": "single contact-process run from every site <= 0 occupied; writes front.csv (t, R)",
    "sim-cbp": "single barrier-process run from the Heaviside start; writes interface.csv (t, B, ell)",
    "sim-mcp": "single two-type run from the Heaviside start; writes interface.csv (t, r, ell)",
    "speed": "speed estimate (cp: alpha, cbp: barrier speed with assumption check, mcp: interface speed); "
             "cbp with r0 == r1 also checks the exact drift r0 - r_left",
    "tightness": "99%% quantile of the interface gap over t_grid; writes tightness.csv and quantiles.csv",
    "clt": "normality of the interface position and agreement of direct and renewal sigma; writes clt.csv",
    "renewals": "patchwork records, renewal increments, i.i.d. diagnostics and tail fits of T and D",
    "couple": "depth-and-influence coupling of patches built on partially equal trails "
              "(cbp with r1 <= r0 also checks the monotone coupling)",
    "rprip": "law of the rightmost descendant before and after resampling right of the leftmost path",
    "sew-vs-direct": "two-sample test of the interface position from patchwork runs and direct runs",
}

_HELP = {
    "lambda": "infection rate (type 1 for mcp)",
    "lambda2": "type-2 infection rate for mcp (default: lambda)",
    "r_left": "barrier left jump rate",
    "r0": "barrier right jump rate onto an empty site",
    "r1": "barrier right jump rate onto an occupied site",
    "horizon": "time horizon",
    "reps": "replicas",
    "seed": "master seed",
    "h_neg": "negative-time horizon of a patch",
    "h_surv": "survival horizon of special sites",
    "out": "output directory",
    "method": "cbp speed method: terminal, renewal or both",
    "t_grid": "comma-separated observation times",
    "patches": "patches per patchwork run",
    "renewal_reps": "patchwork runs for the renewal sigma (clt)",
    "alpha_reps": "replicas for the contact-process speed used in the assumption check",
    "depth_t": "depth t of the trail agreement (couple)",
    "half_width": "half-width of the window (rprip)",
    "min_renewals": "minimum number of renewal increments (renewals)",
    "alpha": "significance level",
    "taint_bound": "largest tolerated fraction of tainted replicas",
    "workers": "worker processes",
    "fault": "1 perturbs the shared seed of the second arm (couple)",
}


@dataclass(frozen=True)
class CliInvocation:
    subcommand: str
    config: H.ExperimentConfig
    overrides: dict = field(default_factory=dict)
    config_path: Optional[str] = None
    reuse: bool = False


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpinterface", description=__doc__.splitlines()[0],
                epilog="\n".join(f"  {k:14s} {v}" for k, v in DOCS.items()).replace("%%", "%"),
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"cpinterface {__version__} rng={RNG_ID}")
    sub = p.add_subparsers(dest="subcommand", metavar="subcommand")
    sub.required = True
    for name, doc in DOCS.items():
        sp = sub.add_parser(name, help=doc, description=doc)
        sp.error = _Parser.error.__get__(sp)
        sp.add_argument("--config", help="flat key=value file; flags override its values")
        sp.add_argument("--reuse", action="store_true",
                        help="keep existing outputs whose manifest matches the resolved inputs")
        sp.add_argument("--model", choices=H.MODELS)
        for key in H.CONFIG_KEYS:
            if key in ("suite", "model"):
                continue
            flags = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
            sp.add_argument(*flags, dest=key, metavar="V", help=_HELP.get(key))
    return p


def parse_invocation(argv: Sequence[str]) -> CliInvocation:
    ns = _parser().parse_args(list(argv))
    values = {}
    if ns.config:
        values.update(H.load_config_file(ns.config))
    overrides = {k: v for k, v in vars(ns).items()
                 if k not in ("subcommand", "config", "reuse") and v is not None}
    values.update(overrides)
    values["suite"] = ns.subcommand
    if ns.subcommand.startswith("sim-"):
        model = ns.subcommand[4:]
        if values.get("model", model) != model:
            raise H.ConfigError(f"{ns.subcommand} runs model {model}")
        values["model"] = model
    cfg = H.make_config(values)
    return CliInvocation(ns.subcommand, cfg, overrides, ns.config, ns.reuse)


def dispatch(inv: CliInvocation, stdout=None) -> int:
    stdout = stdout or sys.stdout
    try:
        art = H.run_experiment(inv.config, reuse=inv.reuse)
    except (H.ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except H.HarnessFailure as e:
        print(f"SUITE {inv.subcommand} FAIL error={str(e).replace(' ', '_')}", file=stdout)
        return 1
    print(art.verdict, file=stdout)
    for p in art.files:
        print(f"  {p}", file=stdout)
    print(f"  {art.out / 'summary.json'}", file=stdout)
    print(f"  {art.out / 'manifest.json'}", file=stdout)
    return 0 if art.passed else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        inv = parse_invocation(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except H.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return dispatch(inv)


if __name__ == "__main__":
    sys.exit(main())
