"""Command-line front end.

Every flag can also be set through an environment variable named ``ISNC_``
plus the flag name in upper case with dashes turned into underscores
(``--pbdelay`` -> ``ISNC_PBDELAY``).  Flags given on the command line win.
Failures print one JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Sequence

from .errors import ConfigurationError, IsncError
from .experiment import SWEEPS, ExperimentConfig, ExperimentError, aggregate, run_experiment
from .generators import ClusterSpec
from .protocol import ProtocolParams

ENV_PREFIX = "ISNC_"
EXIT_CONFIG = 2
EXIT_RUN = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"3"`` means seeds 0, 1, 2; ``"1,5,9"`` lists them explicitly."""
    text = text.strip()
    try:
        if "," in text:
            seeds = tuple(int(x) for x in text.split(",") if x.strip())
        else:
            n = int(text)
            if n < 1:
                raise ConfigurationError("seed count must be >= 1")
            seeds = tuple(range(n))
    except ValueError as exc:
        raise ConfigurationError(f"bad seeds {text!r}") from exc
    if not seeds:
        raise ConfigurationError("no seeds given")
    return seeds


def parse_sweep(text: str) -> tuple[str, tuple[float, ...]]:
    if "=" not in text:
        raise ConfigurationError(f"sweep must look like name=v1,v2,... got {text!r}")
    name, vals = text.split("=", 1)
    name = name.strip()
    if name not in SWEEPS:
        raise ConfigurationError(f"unknown sweep {name!r}; choose from {', '.join(SWEEPS)}")
    try:
        values = tuple(float(v) for v in vals.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigurationError(f"bad sweep values {vals!r}") from exc
    return name, values


def parse_links(text: str) -> tuple[tuple[str, str], ...]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" not in item:
            raise ConfigurationError(f"sweep link {item!r} must be src:dst")
        a, b = item.split(":", 1)
        out.append((a, b))
    return tuple(out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="isnc", description="Delay-minimizing rate allocation with inter-session network coding.")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--topology", metavar="PATH", help="topology file (default: bundled toy network)")
    src.add_argument("--gen-clusters", metavar="SPEC",
                     help="generate a clustered overlay; SPEC is 'default' or key=value pairs, e.g. sizes=9/12/9,pruning=0.4")
    p.add_argument("--cluster-seed", type=int, default=0, help="seed of the cluster generator")
    p.add_argument("--mode", choices=("inter", "intra", "both"), default="both")
    p.add_argument("--duration", type=float, default=40.0, metavar="S", help="streaming time per run in seconds")
    p.add_argument("--seeds", default="1", help="seed count N (seeds 0..N-1) or a comma list")
    p.add_argument("--sweep", metavar="NAME=V1,V2", help=f"parameter sweep; NAME in {', '.join(SWEEPS)}")
    p.add_argument("--sweep-links", metavar="A:B,C:D", help="links re-rated by bandwidth sweeps")
    p.add_argument("--pbdelay", type=float, default=1400.0, metavar="MS", help="playback delay in ms")
    p.add_argument("--alpha", type=float, default=1.5, help="decode-time inflation for unfinished generations")
    p.add_argument("--interval", type=float, default=None, metavar="S", help="generation interval (default max N/U)")
    p.add_argument("--block", type=int, default=None, help="override every session's block size")
    p.add_argument("--focus", default=None, metavar="PREFIX", help="also report nodes whose id starts with PREFIX")
    p.add_argument("--l-max", type=int, default=30, help="protocol round cap")
    p.add_argument("--out", metavar="DIR", help="output directory for CSV files")
    p.add_argument("--trace", action="store_true", help="write control-message traces per run")
    return p


def _env_defaults(parser: argparse.ArgumentParser, environ) -> None:
    for action in parser._actions:
        if not action.option_strings or action.dest == "help":
            continue
        key = ENV_PREFIX + action.dest.upper()
        if key not in environ:
            continue
        raw = environ[key]
        if isinstance(action, argparse._StoreTrueAction):
            val = raw.strip().lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                val = action.type(raw)
            except ValueError as exc:
                raise ConfigurationError(f"bad value {raw!r} for {key}") from exc
        else:
            val = raw
        if action.choices is not None and val not in action.choices:
            raise ConfigurationError(f"{key} must be one of {list(action.choices)}")
        parser.set_defaults(**{action.dest: val})


def config_from_args(argv: Sequence[str] | None = None, environ=None) -> ExperimentConfig:
    environ = os.environ if environ is None else environ
    parser = build_parser()
    _env_defaults(parser, environ)
    a = parser.parse_args(argv)
    if a.topology and a.gen_clusters:
        raise ConfigurationError("--topology and --gen-clusters are mutually exclusive")
    clusters = None
    focus = a.focus
    if a.gen_clusters:
        spec = a.gen_clusters.strip()
        clusters = ClusterSpec() if spec in ("", "default") else ClusterSpec.parse(spec)
        if focus is None:
            focus = "c2_"
    sweep_name, sweep_values = parse_sweep(a.sweep) if a.sweep else (None, ())
    interval = a.interval
    if interval is None and clusters is not None:
        interval = 1.0
    return ExperimentConfig(
        topology=a.topology,
        clusters=clusters,
        cluster_seed=a.cluster_seed,
        modes=("inter", "intra") if a.mode == "both" else (a.mode,),
        duration=a.duration,
        seeds=parse_seeds(a.seeds),
        sweep_name=sweep_name,
        sweep_values=sweep_values,
        sweep_links=parse_links(a.sweep_links) if a.sweep_links else None,
        playback_delay_ms=a.pbdelay,
        alpha=a.alpha,
        generation_interval=interval,
        block=a.block,
        focus=focus,
        out=a.out,
        trace=a.trace,
        protocol=ProtocolParams(l_max=a.l_max),
    )


def _num(v: float) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4f}"


def print_table(rows, sweep: str | None, stream=None) -> None:
    stream = stream or sys.stdout
    head = f"{'mode':<6} {sweep or 'point':>14} {'runs':>4} {'delay_s':>9} {'decoded%':>9} {'focus%':>8}"
    print(head, file=stream)
    for r in rows:
        val = "-" if r["value"] is None else f"{r['value']:g}"
        print(
            f"{r['mode']:<6} {val:>14} {r['runs']:>4} {_num(r['delay_mean']):>9} "
            f"{_num(r['decoded_mean']):>9} {_num(r['focus_decoded_mean']):>8}",
            file=stream,
        )


def _fail(kind: str, message: str, code: int, where=None) -> int:
    rec = {"error": kind, "message": message}
    if where is not None:
        rec["where"] = where
    print(json.dumps(rec, sort_keys=True, default=str), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = config_from_args(argv)
        summaries = run_experiment(cfg)
    except ExperimentError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_RUN, exc.where)
    except (ConfigurationError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_CONFIG)
    except (IsncError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_RUN)
    print_table(aggregate(summaries), cfg.sweep_name)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
