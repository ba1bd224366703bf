"""Command line entry point.

Subcommands::

    sgmcmc run --config exp.yaml [--seed S] [--out-dir D] [--replications R]
    sgmcmc sweep --config exp.yaml --grid sampler.W=1,2,4,8 [--grid ...]
    sgmcmc formula --P 16 --r 0.6 [--W-max 16]
    sgmcmc validate --config exp.yaml | --template KIND

Exit codes: 0 success, 2 invalid configuration, 3 numerical divergence,
4 file input/output error, 1 anything else.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .analysis import write_csv, write_summary_csv
from .experiments import KINDS, ConfigError, ExperimentConfig, default_config, load_config, run_pipeline
from .contour import ThetaInvariantError
from .kernels import DivergenceError
from .schedule import expected_round_trip_time, optimal_window

__all__ = ["EXIT_CONFIG", "EXIT_DIVERGENCE", "EXIT_IO", "RunRecord", "main", "read_config", "run_experiment", "sweep"]

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


class RunRecord(dict):
    """JSON-serialisable record of one run.

    Holds the validated configuration (``config``), the metrics, the wall
    time, the package version and the seed.  Passing the record file back as
    ``--config`` reproduces the run, since the CSV outputs depend only on the
    configuration.
    """

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self, indent=2, sort_keys=True, default=_json_default) + "\n")
        return path


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _finite(x: Optional[float]):
    # JSON has no infinities; keep them readable.
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else str(x)


def read_config(path) -> ExperimentConfig:
    """Load a YAML (or JSON, which YAML accepts) config or a saved run record."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    if isinstance(raw, dict) and "config" in raw and "metrics" in raw:
        raw = raw["config"]
    return load_config(raw if raw is not None else {})


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunRecord:
    """Run one experiment, write its CSVs and ``run_record.json`` into ``out_dir``."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    result = run_pipeline(cfg)
    wall = time.perf_counter() - start
    write_summary_csv(out / "summary.csv", result.metrics)
    for name, (header, rows) in sorted(result.tables.items()):
        write_csv(out / name, header, rows)
    record = RunRecord(
        config=cfg.to_dict(),
        metrics={r.metric: {"value": _finite(r.value), "stderr": _finite(r.stderr), "replications": r.replications} for r in result.metrics},
        wall_time=wall,
        version=__version__,
        seed=cfg.seed,
    )
    record.save(out / "run_record.json")
    return record


def _parse_value(text: str) -> Any:
    return yaml.safe_load(text)


def parse_grid(specs: Sequence[str]) -> dict[str, list]:
    """Parse ``key=v1,v2`` strings into ``{key: [v1, v2]}`` with YAML scalars."""
    grid: dict[str, list] = {}
    for spec in specs:
        key, sep, values = spec.partition("=")
        if not sep or not key or not values:
            raise ConfigError(spec, "grid entries look like section.key=v1,v2")
        grid[key.strip()] = [_parse_value(v) for v in values.split(",")]
    return grid


def sweep(cfg: ExperimentConfig, grid: dict[str, list], out_dir=None) -> list[dict]:
    """Run the Cartesian product of ``grid`` over ``cfg``.

    Cell ``i`` (in row-major order of the grid) uses seed ``cfg.seed + i`` and
    writes into ``out_dir/cell_<i>``.  ``sweep.csv`` gets one row per cell and
    metric.  An empty grid runs the base configuration once.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    keys = list(grid)
    cells = list(itertools.product(*(grid[k] for k in keys))) if keys else [()]
    configs = []
    for i, values in enumerate(cells):
        overrides = dict(zip(keys, values))
        overrides["seed"] = cfg.seed + i
        configs.append((i, overrides, cfg.with_overrides(overrides)))
    rows, summary = [], []
    for i, overrides, cell in configs:
        rec = run_experiment(cell, out / f"cell_{i}")
        summary.append({"cell": i, "overrides": overrides, "metrics": rec["metrics"]})
        for metric, m in rec["metrics"].items():
            rows.append([i, cell.seed, *[overrides[k] for k in keys], metric, m["value"], m["stderr"]])
    write_csv(out / "sweep.csv", ["cell", "seed", *keys, "metric", "value", "stderr"], rows)
    return summary


def formula_table(P: int, r: float, w_max: int) -> list[list]:
    return [[W, expected_round_trip_time(P, W, r)] for W in range(1, w_max + 1)]


# ---------------------------------------------------------------------------
# argparse plumbing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="YAML experiment file or a run_record.json")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--out-dir", help="override the output directory")
    p.add_argument("--replications", type=int, help="override the number of replications")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (results do not depend on it)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgmcmc", description="Stochastic-gradient MCMC experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    _common(run)
    sw = sub.add_parser("sweep", help="run a grid of experiments")
    _common(sw)
    sw.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2", help="grid axis, repeatable")
    fm = sub.add_parser("formula", help="expected round-trip time per window size")
    fm.add_argument("--P", type=int, required=True, help="number of chains")
    fm.add_argument("--r", type=float, required=True, help="rejection rate in [0, 1)")
    fm.add_argument("--W-max", type=int, default=16)
    va = sub.add_parser("validate", help="check a config or print a default template")
    group = va.add_mutually_exclusive_group(required=True)
    group.add_argument("--config")
    group.add_argument("--template", choices=KINDS)
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.replications is not None:
        over["replications"] = args.replications
    if args.out_dir is not None:
        over["out_dir"] = args.out_dir
    return cfg.with_overrides(over) if over else cfg


def _set_threads(n: int) -> None:
    if n < 1:
        raise ConfigError("--threads", "must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _print_metrics(metrics: dict) -> None:
    for name, m in metrics.items():
        se = "" if m["stderr"] is None else f" +- {m['stderr']:.4g}"
        v = m["value"]
        print(f"{name:32s} {v:.6g}{se}" if isinstance(v, float) else f"{name:32s} {v}{se}")


def _dispatch(args) -> int:
    if args.command == "formula":
        if args.P < 2 or not 0 <= args.r < 1 or args.W_max < 1:
            raise ConfigError("formula", "need P >= 2, 0 <= r < 1 and W-max >= 1")
        for W, t in formula_table(args.P, args.r, args.W_max):
            print(f"W={W:3d}  E[T]={t:.4f}")
        print(f"optimal W = {optimal_window(args.P, args.r)}")
        return EXIT_OK
    if args.command == "validate":
        if args.template:
            print(yaml.safe_dump(default_config(args.template).to_dict(), sort_keys=False), end="")
            return EXIT_OK
        cfg = read_config(args.config)
        print(f"ok: {cfg.kind}")
        return EXIT_OK
    _set_threads(args.threads)
    cfg = _apply_overrides(read_config(args.config), args)
    if args.command == "run":
        rec = run_experiment(cfg)
        _print_metrics(rec["metrics"])
        print(f"wrote {cfg.out_dir}")
        return EXIT_OK
    summary = sweep(cfg, parse_grid(args.grid))
    print(f"{len(summary)} cells written to {cfg.out_dir}/sweep.csv")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ThetaInvariantError) as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
