"""Command line: ``v2xsim run``, ``v2xsim compare`` and ``v2xsim scenarios``.

Environment overrides for the default link and protocol parameters (flags
win over the environment):

    V2XSIM_BANDWIDTH_MHZ   total bandwidth shared by the ego's links
    V2XSIM_TX_POWER_DBM    transmit power
    V2XSIM_PACKET_LOSS     packet loss probability
    V2XSIM_P_THRE          packing threshold
    V2XSIM_SIGMA_F         request-map focus radius (m)
    V2XSIM_WORKERS         worker processes
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .experiment import SWEEP_AXES, ExperimentConfig, compare_methods, run_experiment, write_output
from .scenario import BUNDLED, ScenarioError
from .sim import METHODS, ConfigError

_ENV_LINK = {"V2XSIM_BANDWIDTH_MHZ": ("bandwidth_hz", 1e6), "V2XSIM_TX_POWER_DBM": ("tx_power_dbm", 1.0)}
_ENV_SIM = {"V2XSIM_PACKET_LOSS": "packet_loss", "V2XSIM_P_THRE": "p_thre", "V2XSIM_SIGMA_F": "sigma_f_m"}


def parse_seeds(text):
    """``"0,1,2"``, ``"0-9"`` or a mix of both."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                if hi < lo:
                    raise ConfigError(f"bad seed range {part!r}")
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigError(f"seeds must be non-negative integers or ranges, got {part!r}") from None
    if not seeds:
        raise ConfigError("no seeds given")
    return seeds


def parse_values(text):
    if text is None:
        return ()
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"sweep values must be numbers, got {text!r}") from None


def _env_float(name):
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return None
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"environment variable {name} must be a number, got {raw!r}") from None


def env_overrides():
    link, sim = {}, {}
    for name, (key, scale) in _ENV_LINK.items():
        v = _env_float(name)
        if v is not None:
            link[key] = v * scale
    for name, key in _ENV_SIM.items():
        v = _env_float(name)
        if v is not None:
            sim[key] = v
    return link, sim


def _common(p):
    p.add_argument("--scenario", required=True, help=f"bundled name ({', '.join(BUNDLED)}) or JSON path")
    p.add_argument("--sweep", choices=SWEEP_AXES, default=None, help="parameter axis to sweep")
    p.add_argument("--values", default=None, help="comma-separated sweep values")
    p.add_argument("--seeds", default="0", help="e.g. 0,1,2 or 0-19")
    p.add_argument("--out", default="-", help="output file, '-' for stdout")
    p.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default 1)")
    p.add_argument("--log-dir", default=None, help="write per-run latency/volume/trajectory logs here")


def build_parser():
    ap = argparse.ArgumentParser(prog="v2xsim", description="V2X collaborative perception simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one method over seeds and an optional sweep")
    _common(run)
    run.add_argument("--method", default="dpp_apc", help=f"one of {', '.join(METHODS)}")
    cmp_ = sub.add_parser("compare", help="paired comparison of several methods")
    _common(cmp_)
    cmp_.add_argument("--methods", required=True, help="comma-separated methods; deltas are against the first")
    sub.add_parser("scenarios", help="list bundled scenarios")
    return ap


def _config(args, method):
    link, sim = env_overrides()
    workers = args.workers
    if workers is None:
        w = _env_float("V2XSIM_WORKERS")
        workers = int(w) if w is not None else 1
    return ExperimentConfig(
        scenario=args.scenario, method=method, sweep=args.sweep, values=parse_values(args.values),
        seeds=tuple(parse_seeds(args.seeds)), out=args.out, fmt=args.fmt, link=link, sim=sim,
        workers=workers, log_dir=args.log_dir,
    )


def _fail(kind, message, code=2):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if e.code in (0, None):
            return 0
        return _fail("usage", "invalid command line arguments; see --help")
    try:
        if args.command == "scenarios":
            sys.stdout.write("\n".join(BUNDLED) + "\n")
            return 0
        if args.command == "run":
            cfg = _config(args, args.method)
            rows = run_experiment(cfg)
        else:
            methods = [m for m in args.methods.split(",") if m.strip()]
            cfg = _config(args, methods[0] if methods else "")
            rows = compare_methods(cfg, methods)
        text = write_output(rows, cfg.out, cfg.fmt)
        if cfg.out in (None, "-"):
            sys.stdout.write(text)
        return 0
    except (ConfigError, ScenarioError) as e:
        return _fail("config", str(e))
    except OSError as e:
        return _fail("io", str(e), code=3)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
