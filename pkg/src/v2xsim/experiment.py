"""Sweeps over seeds and one parameter axis, with mean and CI aggregation."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import mean_ci
from .scenario import Scenario, load_scenario
from .sim import ConfigError, EpisodeResult, canonical_method, run_episode

FIELDS = ("method", "axis", "axis_value", "seed", "metric", "value", "ci_low", "ci_high")

SWEEP_AXES = ("bandwidth", "uniform_latency", "sigma_p", "sigma_r", "packet_loss", "jitter",
              "p_thre", "sigma_F")


def axis_overrides(axis, value):
    """Scenario section overrides for one sweep point."""
    v = float(value)
    if axis == "bandwidth":  # MHz
        if v <= 0:
            raise ConfigError(f"bandwidth must be positive, got {value}")
        return {"link": {"bandwidth_hz": v * 1e6, "mode": "dsrc"}}
    if axis == "uniform_latency":  # ms; every other latency component zeroed
        if v < 0:
            raise ConfigError(f"uniform_latency must be >= 0, got {value}")
        return {"link": {"mode": "cv2x", "cv2x_tx_ms": [v, v], "ext_ms": [0.0, 0.0], "asyn_ms": [0.0, 0.0],
                         "dm_ms": [0.0, 0.0], "queue_ms": [0.0, 0.0]}}
    if axis == "jitter":  # ms, symmetric asynchrony range
        return {"link": {"asyn_ms": [-abs(v), abs(v)]}}
    if axis in ("sigma_p", "sigma_r"):
        if v < 0:
            raise ConfigError(f"{axis} must be >= 0, got {value}")
        return {"sim": {axis: v}}
    if axis == "packet_loss":
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"packet_loss must be in [0, 1], got {value}")
        return {"sim": {"packet_loss": v}}
    if axis == "p_thre":
        return {"sim": {"p_thre": v}}
    if axis == "sigma_F":
        if v <= 0:
            raise ConfigError(f"sigma_F must be positive, got {value}")
        return {"sim": {"sigma_f_m": v}}
    raise ConfigError(f"unknown sweep axis {axis!r}; valid: {', '.join(SWEEP_AXES)}")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    method: str = "dpp_apc"
    sweep: str | None = None
    values: tuple = ()
    seeds: tuple = (0,)
    out: str | None = None
    fmt: str = "csv"
    link: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    workers: int = 1
    log_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", canonical_method(self.method))
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.fmt not in ("csv", "json"):
            raise ConfigError(f"format must be 'csv' or 'json', got {self.fmt!r}")
        if self.sweep is not None:
            if self.sweep not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {self.sweep!r}; valid: {', '.join(SWEEP_AXES)}")
            if not self.values:
                raise ConfigError(f"sweep {self.sweep!r} needs at least one value")
            for v in self.values:
                axis_overrides(self.sweep, v)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def _points(cfg: ExperimentConfig):
    if cfg.sweep is None:
        return [("none", "", {})]
    return [(cfg.sweep, v, axis_overrides(cfg.sweep, v)) for v in cfg.values]


def _scenario_for(cfg: ExperimentConfig, over) -> Scenario:
    sc = load_scenario(cfg.scenario)
    base = {}
    if cfg.link:
        base["link"] = dict(cfg.link)
    if cfg.sim:
        base["sim"] = dict(cfg.sim)
    for key, vals in over.items():
        base.setdefault(key, {}).update(vals)
    return sc.with_overrides(**base)


def _job(args):
    scenario, method, seed, want_logs = args
    return run_episode(scenario, method, seed, collect_logs=want_logs)


def _fmt_value(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


def _run_points(cfg: ExperimentConfig, method):
    jobs, keys = [], []
    for axis, value, over in _points(cfg):
        sc = _scenario_for(cfg, over)
        for seed in cfg.seeds:
            jobs.append((sc, method, seed, cfg.log_dir is not None))
            keys.append((axis, value, seed))
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    if cfg.log_dir is not None:
        for (axis, value, seed), r in zip(keys, results):
            write_logs(r, Path(cfg.log_dir) / f"{method}_{axis}_{_fmt_value(value)}_seed{seed}")
    return list(zip(keys, results))


def _rows_for(method, keyed):
    rows = []
    by_point = {}
    for (axis, value, seed), r in keyed:
        for name in sorted(r.metrics):
            v = float(r.metrics[name])
            rows.append({"method": method, "axis": axis, "axis_value": value, "seed": seed,
                         "metric": name, "value": v, "ci_low": v, "ci_high": v})
            by_point.setdefault((axis, value), {}).setdefault(name, []).append(v)
    for (axis, value), per_metric in by_point.items():
        for name in sorted(per_metric):
            vals = [x for x in per_metric[name] if math.isfinite(x)]
            m, lo, hi = mean_ci(vals)
            rows.append({"method": method, "axis": axis, "axis_value": value, "seed": "all",
                         "metric": name, "value": m, "ci_low": lo, "ci_high": hi})
    return rows


def run_experiment(cfg: ExperimentConfig, return_results=False):
    """Run every (sweep value, seed) on a fresh world; per-seed rows then mean +- CI rows."""
    keyed = _run_points(cfg, cfg.method)
    rows = _rows_for(cfg.method, keyed)
    if return_results:
        return rows, [r for _, r in keyed]
    return rows


def compare_methods(cfg: ExperimentConfig, methods, return_results=False):
    """Same seeds and sweep points for every method; adds per-seed deltas against the first method."""
    methods = [canonical_method(m) for m in methods]
    if len(methods) < 2:
        raise ConfigError("compare needs at least two methods")
    rows, results = [], {}
    for m in methods:
        keyed = _run_points(cfg, m)
        results[m] = keyed
        rows += _rows_for(m, keyed)
    ref = methods[0]
    ref_by_key = {k: r for k, r in results[ref]}
    for m in methods[1:]:
        deltas = []
        for key, r in results[m]:
            base = ref_by_key[key]
            axis, value, seed = key
            for name in sorted(r.metrics):
                d = float(r.metrics[name]) - float(base.metrics[name])
                deltas.append({"method": f"{m}-{ref}", "axis": axis, "axis_value": value, "seed": seed,
                               "metric": name, "value": d, "ci_low": d, "ci_high": d})
        rows += deltas
    if return_results:
        return rows, {m: [r for _, r in kv] for m, kv in results.items()}
    return rows


def render(rows, fmt="csv"):
    if fmt == "json":
        clean = [{k: (_fmt_value(v) if isinstance(v, float) and not math.isfinite(v) else v)
                  for k, v in r.items()} for r in rows]
        return json.dumps(clean, indent=1, sort_keys=False) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in rows:
        w.writerow([_fmt_value(r[f]) for f in FIELDS])
    return buf.getvalue()


def write_output(rows, out, fmt="csv"):
    text = render(rows, fmt)
    if out in (None, "-"):
        return text
    p = Path(out)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    return text


def _write_csv(path: Path, rows):
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt_value(v) for k, v in r.items()})


def write_logs(result: EpisodeResult, directory):
    """Latency, volume, trajectory and prediction-error CSVs plus detection JSON lines."""
    d = Path(directory)
    os.makedirs(d, exist_ok=True)
    _write_csv(d / "latency.csv", result.latency_rows)
    _write_csv(d / "volume.csv", result.volume_rows)
    _write_csv(d / "trajectory.csv", result.trajectory_rows)
    _write_csv(d / "prediction.csv", result.prediction_rows)
    with (d / "detections.jsonl").open("w") as fh:
        for row in result.detection_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
