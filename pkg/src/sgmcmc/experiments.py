"""Experiment pipelines and their configuration schema.

Each experiment kind has a schema of sections (``target``, ``noise``,
``sampler``) with typed defaults.  :func:`load_config` validates a raw
mapping against the schema, rejecting unknown keys with their dotted path,
and :func:`run_pipeline` executes the experiment and returns metric rows and
CSV tables.  The command line in :mod:`sgmcmc.cli` is a thin wrapper around
these functions, and the acceptance tests call the same pipelines.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

import numpy as np
from scipy.special import erf, ndtr

from .analysis import ReferenceDensity, SummaryRow, kl_estimate, mode_mass, replicate_variance
from .contour import ContourConfig, PartitionSpec, StepSize, contour_run, quadrature_theta_star
from .kernels import sgld_run
from .replica import ResgldConfig, VRConfig, resgld_posterior_run, resgld_run, vr_variance_probe
from .schedule import (
    DEOConfig,
    deo_sgd_run,
    expected_round_trip_time,
    optimal_window,
    simulate_index_process,
)
from .targets import (
    BENCHMARK_SETTINGS,
    NoiseSpec,
    gauss_mix_1d,
    gauss_mix_posterior,
    lattice25,
    make_benchmark,
)

__all__ = [
    "KINDS",
    "SCHEMA",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentOutput",
    "Field",
    "bootstrap_ratio_quantile",
    "default_config",
    "load_config",
    "run_pipeline",
]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Field:
    """One configuration key.

    ``kind`` is one of ``int``, ``float``, ``bool``, ``str``, ``floats``
    (list of numbers), ``int_or_auto`` and ``opt_float`` (number or null).
    """

    default: Any
    kind: str
    choices: Optional[tuple] = None
    minimum: Optional[float] = None
    positive: bool = False

    def coerce(self, path: str, value: Any) -> Any:
        k = self.kind
        if k == "bool":
            if not isinstance(value, bool):
                raise ConfigError(path, f"expected true/false, got {value!r}")
            return value
        if k == "int" or (k == "int_or_auto" and value != "auto"):
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                what = 'an integer or "auto"' if k == "int_or_auto" else "an integer"
                raise ConfigError(path, f"expected {what}, got {value!r}")
            value = int(value)
        elif k == "int_or_auto":
            return value
        elif k in ("float", "opt_float"):
            if value is None and k == "opt_float":
                return None
            if isinstance(value, bool) or not isinstance(value, (int, float, np.number)):
                raise ConfigError(path, f"expected a number, got {value!r}")
            value = float(value)
            if math.isnan(value):
                raise ConfigError(path, "NaN is not allowed")
        elif k == "str":
            if not isinstance(value, str):
                raise ConfigError(path, f"expected a string, got {value!r}")
            if self.choices and value not in self.choices:
                raise ConfigError(path, f"must be one of {list(self.choices)}, got {value!r}")
            return value
        elif k == "floats":
            if not isinstance(value, (list, tuple)) or not value:
                raise ConfigError(path, f"expected a non-empty list of numbers, got {value!r}")
            out = []
            for i, v in enumerate(value):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{path}[{i}]", f"expected a number, got {v!r}")
                out.append(float(v))
            return out
        else:  # pragma: no cover - schema typo
            raise AssertionError(k)
        if self.positive and not value > 0:
            raise ConfigError(path, f"must be positive, got {value!r}")
        if self.minimum is not None and value < self.minimum:
            raise ConfigError(path, f"must be at least {self.minimum}, got {value!r}")
        return value


def _f(default, **kw) -> Field:
    return Field(default, "float", **kw)


def _i(default, **kw) -> Field:
    return Field(default, "int", **kw)


def _b(default) -> Field:
    return Field(default, "bool")


def _s(default, choices=None) -> Field:
    return Field(default, "str", choices=tuple(choices) if choices else None)


def _l(default) -> Field:
    return Field(list(default), "floats")


_NOISE = {"energy_std": _f(0.0, minimum=0.0), "gradient_std": _f(0.0, minimum=0.0)}
_OMEGA = ("omega_a", "omega_alpha", "omega_b", "omega_cap")

SCHEMA: Mapping[str, Mapping[str, Mapping[str, Field]]] = {
    "resgld_mixture": {
        "target": {"weights": _l((0.4, 0.6)), "means": _l((-3.0, 2.0)), "stds": _l((0.7, 0.5)), "boundary": _f(-0.5)},
        "noise": {"energy_std": _f(2.0, minimum=0.0), "gradient_std": _f(0.0, minimum=0.0)},
        "sampler": {
            "temperatures": _l((1.0, 10.0)),
            "lr": _f(0.03, positive=True),
            "iterations": _i(100_000, positive=True),
            "F": _f(1.0, positive=True),
            "naive_baseline": _b(True),
            "sigma_estimator": _s("energy", ("energy", "difference", "fixed")),
            "sigma2_init": _f(100.0, minimum=0.0),
            "sa_period": _i(100, positive=True),
            "sa_draws": _i(10, minimum=2),
            "smoothing": _s("robbins_monro", ("robbins_monro", "fixed")),
            "gamma": _f(1.0, positive=True),
            "swap_scheme": _s("ADJ", ("ADJ", "SEO", "DEO")),
            "thin": _i(10, positive=True),
        },
    },
    "vr_posterior": {
        "target": {
            "n_data": _i(100_000, minimum=2),
            "phi": _f(20.0),
            "sigma": _f(5.0, positive=True),
            "beta_true": _f(-5.0),
            "data_seed": _i(2021, minimum=0),
        },
        "sampler": {
            "temperatures": _l((10.0, 1000.0)),
            "eta": _f(1e-7, positive=True),
            "iterations": _i(2000, positive=True),
            "batch_size": _i(1000, positive=True),
            "period": _i(40, positive=True),
            "F": _f(1.0, positive=True),
            "adaptive_coefficient": _b(False),
            "coefficient_gamma": _f(0.1, positive=True),
            "sa_draws": _i(10, minimum=2),
            "gamma": _f(0.3, positive=True),
            "plain_baseline": _b(True),
            "probe_iterations": _i(400, positive=True),
            "probe_batches": _i(20, minimum=2),
        },
    },
    "deo_lattice": {
        "noise": {"energy_std": _f(2.0, minimum=0.0), "gradient_std": _f(2.0, minimum=0.0)},
        "sampler": {
            "chains": _i(16, minimum=2),
            "eta_low": _f(0.003, positive=True),
            "eta_high": _f(0.6, positive=True),
            "target_swap": _f(0.4, positive=True),
            "W": Field("auto", "int_or_auto", minimum=1),
            "scheme": _s("DEO_W", ("DEO", "DEO_W")),
            "gate_mode": _s("window", ("window", "literal")),
            "iterations": _i(20_000, positive=True),
            "gamma": _f(0.03, positive=True),
            "tau1": _f(1.0, minimum=0.0),
            "thin": _i(10, positive=True),
            "deo1_baseline": _b(True),
            "tail_fraction": _f(0.25, positive=True),
            "kl_cells": _i(200, minimum=2),
        },
    },
    "roundtrip_oracle": {
        "sampler": {
            "P": _i(16, minimum=2),
            "r": _f(0.6, minimum=0.0),
            "W": Field("auto", "int_or_auto", minimum=1),
            "round_trips": _i(10_000, positive=True),
            "systems": _i(64, minimum=2),
        },
    },
    "csgld_mixture": {
        "target": {"weights": _l((0.5, 0.5)), "means": _l((-2.0, 2.0)), "stds": _l((1.0, 1.0))},
        "noise": dict(_NOISE),
        "sampler": {
            "flavor": _s("icsgld", ("csgld", "icsgld")),
            "chains": _i(5, positive=True),
            "m": _i(24, minimum=2),
            "du": _f(0.25, positive=True),
            "u_low": _f(1.6),
            "zeta": _f(1.0, positive=True),
            "tau": _f(1.0, positive=True),
            "lr": _f(0.01, positive=True),
            "iterations": _i(20_000, positive=True),
            "omega_a": _f(0.1, positive=True),
            "omega_alpha": _f(0.6, positive=True),
            "omega_b": _f(0.0, minimum=0.0),
            "omega_cap": _f(math.inf, positive=True),
            "index_energy": _s("exact", ("exact", "noisy")),
            "single_chain_baseline": _b(True),
            "init_low": _f(-4.0),
            "init_high": _f(4.0),
            "bootstrap": _i(2000, minimum=100),
        },
    },
    "icsgld_lattice": {
        "noise": dict(_NOISE),
        "sampler": {
            "chains": _i(5, positive=True),
            "m": _i(100, minimum=2),
            "du": _f(0.125, positive=True),
            "u_low": _f(-4.0),
            "zeta": _f(0.75, positive=True),
            "tau": _f(1.0, positive=True),
            "lr": _f(3e-3, positive=True),
            "iterations": _i(80_000, positive=True),
            "omega_a": _f(1.0, positive=True),
            "omega_alpha": _f(0.6, positive=True),
            "omega_b": _f(100.0, minimum=0.0),
            "omega_cap": _f(3e-3, positive=True),
            "index_energy": _s("noisy", ("exact", "noisy")),
            "init_low": _f(-4.0),
            "init_high": _f(4.0),
            "thin": _i(10, positive=True),
            "kl_cells": _i(200, minimum=2),
        },
    },
    "awsgld_cdf": {
        "noise": {"energy_std": _f(0.0, minimum=0.0), "gradient_std": _f(0.1, minimum=0.0)},
        "sampler": {
            "m": _i(1000, minimum=2),
            "du": _f(0.01, positive=True),
            "zeta": _f(1.0, positive=True),
            "tau": _f(1.0, positive=True),
            "lr": _f(0.01, positive=True),
            "iterations": _i(1_000_000, positive=True),
            "omega_a": _f(0.02, positive=True),
            "omega_alpha": _f(0.6, positive=True),
            "omega_b": _f(100.0, minimum=0.0),
            "omega_cap": _f(math.inf, positive=True),
            "index_energy": _s("exact", ("exact", "noisy")),
            "sgld_baseline": _b(True),
            "thin": _i(10, positive=True),
            "theta_snapshots": _i(10, positive=True),
        },
    },
    "awsgld_benchmark": {
        "target": {"name": _s("Griewank", tuple(BENCHMARK_SETTINGS))},
        "noise": dict(_NOISE),
        "sampler": {
            "m": _i(100, minimum=2),
            "du": Field(None, "opt_float"),
            "zeta": Field(None, "opt_float"),
            "lr": Field(None, "opt_float"),
            "tau": Field(None, "opt_float"),
            "rho": Field(None, "opt_float"),
            "iterations": _i(100_000, positive=True),
            "omega_a": _f(100.0, positive=True),
            "omega_alpha": _f(0.75, positive=True),
            "omega_b": _f(1000.0, minimum=0.0),
            "omega_cap": _f(math.inf, positive=True),
            "low_tau_factor": _f(0.1, positive=True),
            "sgld_baselines": _b(True),
        },
    },
}

KINDS = tuple(SCHEMA)
_TOP = {"experiment", "seed", "replications", "out_dir"}
# the variance comparison needs several independent replications
_DEFAULT_REPLICATIONS = {"csgld_mixture": 20}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    replications: int = 1
    out_dir: str = "runs/out"
    sections: dict = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.sections[section][key]

    def to_dict(self) -> dict:
        """Plain mapping that :func:`load_config` accepts back unchanged."""
        out = {"experiment": self.kind, "seed": self.seed, "replications": self.replications, "out_dir": self.out_dir}
        for name, sec in self.sections.items():
            out[name] = copy.deepcopy(sec)
        return out

    def with_overrides(self, overrides: Mapping[str, Any]) -> "ExperimentConfig":
        """Apply dotted-path overrides (``"sampler.W": 4``) and revalidate."""
        raw = self.to_dict()
        for path, value in overrides.items():
            parts = path.split(".")
            if len(parts) == 1:
                raw[parts[0]] = value
            elif len(parts) == 2:
                if parts[0] not in raw or not isinstance(raw[parts[0]], dict):
                    raise ConfigError(path, "unknown section")
                raw[parts[0]][parts[1]] = value
            else:
                raise ConfigError(path, "expected 'key' or 'section.key'")
        return load_config(raw)


def default_config(kind: str) -> ExperimentConfig:
    if kind not in SCHEMA:
        raise ConfigError("experiment", f"unknown experiment {kind!r}; choose from {list(KINDS)}")
    return load_config({"experiment": kind})


def load_config(raw: Mapping[str, Any]) -> ExperimentConfig:
    """Validate a raw mapping (parsed YAML) into an :class:`ExperimentConfig`."""
    if not isinstance(raw, Mapping):
        raise ConfigError("<root>", "configuration must be a mapping")
    kind = raw.get("experiment")
    if kind is None:
        raise ConfigError("experiment", "missing experiment kind")
    if kind not in SCHEMA:
        raise ConfigError("experiment", f"unknown experiment {kind!r}; choose from {list(KINDS)}")
    schema = SCHEMA[kind]
    for key in raw:
        if key not in _TOP and key not in schema:
            raise ConfigError(str(key), f"unknown key for experiment {kind!r}")
    seed = Field(0, "int", minimum=0).coerce("seed", raw.get("seed", 0))
    reps = Field(1, "int", minimum=1).coerce("replications", raw.get("replications", _DEFAULT_REPLICATIONS.get(kind, 1)))
    out_dir = Field("runs/out", "str").coerce("out_dir", raw.get("out_dir", f"runs/{kind}"))
    sections = {}
    for name, fields in schema.items():
        given = raw.get(name, {}) or {}
        if not isinstance(given, Mapping):
            raise ConfigError(name, "section must be a mapping")
        for key in given:
            if key not in fields:
                raise ConfigError(f"{name}.{key}", "unknown key")
        sections[name] = {
            key: f.coerce(f"{name}.{key}", given[key]) if key in given else copy.deepcopy(f.default)
            for key, f in fields.items()
        }
    cfg = ExperimentConfig(kind, seed, reps, out_dir, sections)
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: ExperimentConfig) -> None:
    s = cfg.sections
    if "target" in s and "weights" in s["target"]:
        t = s["target"]
        if not len(t["weights"]) == len(t["means"]) == len(t["stds"]):
            raise ConfigError("target", "weights, means and stds must have equal length")
        if any(w <= 0 for w in t["weights"]) or any(v <= 0 for v in t["stds"]):
            raise ConfigError("target", "weights and stds must be positive")
    sp = s.get("sampler", {})
    if "temperatures" in sp:
        t = sp["temperatures"]
        if len(t) < 2 or any(b <= a for a, b in zip(t, t[1:])) or t[0] <= 0:
            raise ConfigError("sampler.temperatures", "need at least two positive increasing temperatures")
    if cfg.kind == "vr_posterior" and len(sp["temperatures"]) != 2:
        raise ConfigError("sampler.temperatures", "the posterior experiment runs exactly two chains")
    if cfg.kind == "deo_lattice":
        if sp["eta_high"] < sp["eta_low"]:
            raise ConfigError("sampler.eta_high", "must be at least eta_low")
        if not sp["target_swap"] < 1:
            raise ConfigError("sampler.target_swap", "must lie in (0, 1)")
        if not sp["tail_fraction"] <= 1:
            raise ConfigError("sampler.tail_fraction", "must lie in (0, 1]")
    if cfg.kind == "roundtrip_oracle" and not sp["r"] < 1:
        raise ConfigError("sampler.r", "rejection rate must lie in [0, 1)")
    if cfg.kind == "csgld_mixture":
        if sp["flavor"] == "csgld" and sp["chains"] != 1:
            raise ConfigError("sampler.chains", "csgld runs a single chain; use flavor icsgld for interacting chains")
        if sp["init_high"] <= sp["init_low"]:
            raise ConfigError("sampler.init_high", "must exceed init_low")
        if sp["single_chain_baseline"] and cfg.replications < 2:
            raise ConfigError("replications", "the single-chain comparison needs at least two replications")
    if cfg.kind == "awsgld_benchmark" and sp["m"] not in (10, 100) and (sp["du"] is None or sp["zeta"] is None):
        raise ConfigError("sampler.m", "tabulated du and zeta exist for m = 10 or 100 only; set sampler.du and sampler.zeta")


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------


@dataclass
class ExperimentOutput:
    """Metric rows plus named CSV tables ``{filename: (header, rows)}``."""

    metrics: list[SummaryRow]
    tables: dict = field(default_factory=dict)

    def metric(self, name: str) -> float:
        for row in self.metrics:
            if row.metric == name:
                return row.value
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {r.metric: {"value": r.value, "stderr": r.stderr, "replications": r.replications} for r in self.metrics}


def _mean_se(values) -> tuple[float, Optional[float]]:
    v = np.asarray(values, dtype=float)
    if v.size < 2 or not np.all(np.isfinite(v)):
        return float(v.mean()), None
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def _noise(sec: Mapping) -> NoiseSpec:
    return NoiseSpec.gaussian(sec["energy_std"], sec["gradient_std"])


def _omega(sp: Mapping) -> StepSize:
    return StepSize(sp["omega_a"], sp["omega_alpha"], sp["omega_b"], sp["omega_cap"])


def bootstrap_ratio_quantile(num, den, q: float = 0.05, n_boot: int = 2000, seed: int = 0) -> float:
    """Lower ``q`` quantile of ``replicate_variance(num) / replicate_variance(den)``.

    Replications are resampled with replacement independently in each group.
    A value above one rejects equal variances in favour of ``num`` being
    larger at level ``q`` (one-sided percentile bootstrap).
    """
    a, b = np.asarray(num, dtype=float), np.asarray(den, dtype=float)
    rng = np.random.default_rng(seed)
    ratios = np.empty(n_boot)
    for i in range(n_boot):
        va = replicate_variance(a[rng.integers(0, a.shape[0], a.shape[0])])
        vb = replicate_variance(b[rng.integers(0, b.shape[0], b.shape[0])])
        ratios[i] = va / vb if vb > 0 else math.inf
    return float(np.quantile(ratios, q))


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


def _mixture_true_mass(t: Mapping) -> np.ndarray:
    b = t["boundary"]
    low = sum(w * float(ndtr((b - mu) / s)) for w, mu, s in zip(t["weights"], t["means"], t["stds"]))
    return np.array([low, 1.0 - low])


def _resgld_mixture(cfg: ExperimentConfig) -> ExperimentOutput:
    t, sp = cfg.sections["target"], cfg.sections["sampler"]
    model = gauss_mix_1d(t["weights"], t["means"], t["stds"])
    truth = _mixture_true_mass(t)
    noise = _noise(cfg.sections["noise"])

    def run(F: float):
        rc = ResgldConfig(
            model,
            noise,
            temperatures=tuple(sp["temperatures"]),
            learning_rates=sp["lr"],
            n_iter=sp["iterations"],
            F=F,
            sigma_estimator=sp["sigma_estimator"],
            sigma2_init=sp["sigma2_init"],
            sa_period=sp["sa_period"],
            sa_draws=sp["sa_draws"],
            smoothing=sp["smoothing"],
            gamma=sp["gamma"],
            swap_scheme=sp["swap_scheme"],
            thin=sp["thin"],
            replications=cfg.replications,
            seed=cfg.seed,
            log_swaps=True,
        )
        res = resgld_run(rc)
        err = np.array([np.abs(mode_mass(res.samples[r, :, 0], [t["boundary"]]) - truth).max() for r in range(cfg.replications)])
        return res, err

    res, err = run(sp["F"])
    R = cfg.replications
    rows = [
        SummaryRow("true_mass_low", float(truth[0]), None, R),
        SummaryRow("mode_mass_error", *_mean_se(err), R),
        SummaryRow("swap_rate", *_mean_se(res.swap_rate[:, 0]), R),
        SummaryRow("sigma2", *_mean_se(res.sigma2[:, 0]), R),
    ]
    per_rep = [[r, "corrected", float(err[r]), float(res.swap_rate[r, 0])] for r in range(R)]
    if sp["naive_baseline"]:
        nres, nerr = run(math.inf)
        rows += [
            SummaryRow("naive_mode_mass_error", *_mean_se(nerr), R),
            SummaryRow("naive_swap_rate", *_mean_se(nres.swap_rate[:, 0]), R),
            SummaryRow("naive_worse_fraction", float(np.mean(nerr > err)), None, R),
        ]
        per_rep += [[r, "naive", float(nerr[r]), float(nres.swap_rate[r, 0])] for r in range(R)]
    n_keep = res.samples.shape[1]
    samples = ([r, i * sp["thin"] + sp["thin"], float(res.samples[r, i, 0])] for r in range(R) for i in range(n_keep))
    tables = {
        "samples.csv": (["replication", "iteration", "x"], list(samples)),
        "swaps.csv": (["iteration", "pair", "energy_low", "energy_high", "sigma2", "probability", "accepted"], res.swap_log),
        "replications.csv": (["replication", "variant", "mode_mass_error", "swap_rate"], per_rep),
    }
    return ExperimentOutput(rows, tables)


def _vr_posterior(cfg: ExperimentConfig) -> ExperimentOutput:
    t, sp = cfg.sections["target"], cfg.sections["sampler"]
    model = gauss_mix_posterior(t["n_data"], t["phi"], t["sigma"], t["beta_true"], t["data_seed"])
    var_vr, var_plain = vr_variance_probe(
        model,
        period=sp["period"],
        eta=sp["eta"],
        tau=sp["temperatures"][0],
        batch_size=sp["batch_size"],
        n_iter=sp["probe_iterations"],
        n_batches=sp["probe_batches"],
        seed=cfg.seed,
    )
    rows = [
        SummaryRow("energy_variance_vr", var_vr),
        SummaryRow("energy_variance_plain", var_plain),
        SummaryRow("variance_ratio", var_vr / var_plain if var_plain > 0 else math.inf),
    ]
    tables = {}
    variants = [("vr", True)] + ([("plain", False)] if sp["plain_baseline"] else [])
    trace_rows = []
    for name, vr in variants:
        vc = VRConfig(
            temperatures=tuple(sp["temperatures"]),
            eta=sp["eta"],
            n_iter=sp["iterations"],
            batch_size=sp["batch_size"],
            period=sp["period"],
            F=sp["F"],
            variance_reduction=vr,
            adaptive_coefficient=sp["adaptive_coefficient"] and vr,
            coefficient_gamma=sp["coefficient_gamma"],
            sa_draws=sp["sa_draws"],
            gamma=sp["gamma"],
            seed=cfg.seed,
        )
        res = resgld_posterior_run(model, vc)
        rows += [
            SummaryRow(f"{name}_swaps", float(res.swap_accepts)),
            SummaryRow(f"{name}_sigma2_final", float(res.sigma2_trace[-1])),
            SummaryRow(f"{name}_posterior_mean", float(res.samples.mean())),
        ]
        trace_rows += [
            [name, k + 1, float(res.samples[k]), float(res.sigma2_trace[k]), float(res.coefficient_trace[k])]
            for k in range(res.samples.size)
        ]
    tables["samples.csv"] = (["variant", "iteration", "beta", "sigma2", "coefficient"], trace_rows)
    return ExperimentOutput(rows, tables)


def _deo_config(cfg: ExperimentConfig, scheme: str) -> DEOConfig:
    sp = cfg.sections["sampler"]
    gamma = sp["gamma"]
    return DEOConfig(
        lattice25(),
        _noise(cfg.sections["noise"]),
        chains=sp["chains"],
        eta_low=sp["eta_low"],
        eta_high=sp["eta_high"],
        target=sp["target_swap"],
        window=sp["W"],
        scheme=scheme,
        gate_mode=sp["gate_mode"],
        n_iter=sp["iterations"],
        gamma=lambda k: gamma,
        tau1=sp["tau1"],
        thin=sp["thin"],
        seed=cfg.seed,
    )


def _deo_lattice(cfg: ExperimentConfig) -> ExperimentOutput:
    sp = cfg.sections["sampler"]
    res = deo_sgd_run(_deo_config(cfg, sp["scheme"]))
    acc = res.acceptance_rates(sp["tail_fraction"])
    n = sp["iterations"]
    ref = ReferenceDensity.from_model(lattice25(), 1.0, cells=sp["kl_cells"])
    kl = kl_estimate(res.samples, ref, max_outside=0.01)
    rows = [
        SummaryRow("window", float(res.W)),
        SummaryRow("round_trips", float(res.round_trips)),
        SummaryRow("round_trips_per_1000", 1000.0 * res.round_trips / n),
        SummaryRow("acceptance_min", float(acc.min())),
        SummaryRow("acceptance_max", float(acc.max())),
        SummaryRow("acceptance_mean", float(acc.mean())),
        SummaryRow("correction_final", float(res.correction_trace[-1]) if res.correction_trace.size else 0.0),
        SummaryRow("kl", kl),
    ]
    if sp["deo1_baseline"] and sp["scheme"] != "DEO":
        base = deo_sgd_run(_deo_config(cfg, "DEO"))
        rows += [
            SummaryRow("deo1_round_trips", float(base.round_trips)),
            SummaryRow("round_trip_ratio", res.round_trips / max(base.round_trips, 1)),
        ]
    P = sp["chains"]
    stride = n // res.eta_trace.shape[0] if res.eta_trace.shape[0] else 1
    ladder = [[(i + 1) * stride, *map(float, res.eta_trace[i]), float(res.correction_trace[i])] for i in range(res.eta_trace.shape[0])]
    tables = {
        "samples.csv": (["iteration", "x1", "x2"], [[(i + 1) * sp["thin"], float(a), float(b)] for i, (a, b) in enumerate(res.samples)]),
        "ladder.csv": (["iteration", *[f"eta_{p}" for p in range(P)], "correction"], ladder),
        "acceptance.csv": (["pair", "acceptance", "swaps"], [[q, float(acc[q]), int(res.swaps[q])] for q in range(P - 1)]),
        "round_trips.csv": (["particle", "round_trips"], [[i, int(c)] for i, c in enumerate(res.log.counts)]),
    }
    return ExperimentOutput(rows, tables)


def _roundtrip_oracle(cfg: ExperimentConfig) -> ExperimentOutput:
    sp = cfg.sections["sampler"]
    P, r = sp["P"], sp["r"]
    W = optimal_window(P, r) if sp["W"] == "auto" else sp["W"]
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0, 1)))
    sim = simulate_index_process(P, W, r, sp["round_trips"], rng, n_systems=sp["systems"])
    formula = expected_round_trip_time(P, W, r)
    z = (sim.mean - formula) / sim.stderr if sim.stderr > 0 else (0.0 if sim.mean == formula else math.inf)
    rows = [
        SummaryRow("W", float(W)),
        SummaryRow("optimal_window", float(optimal_window(P, r))),
        SummaryRow("formula_round_trip_time", formula),
        SummaryRow("simulated_round_trip_time", sim.mean, sim.stderr, sp["systems"]),
        SummaryRow("z_score", float(z)),
        SummaryRow("round_trips_observed", float(sim.n_round_trips)),
    ]
    return ExperimentOutput(rows, {})


def _csgld_mixture(cfg: ExperimentConfig) -> ExperimentOutput:
    t, sp = cfg.sections["target"], cfg.sections["sampler"]
    model = gauss_mix_1d(t["weights"], t["means"], t["stds"])
    part = PartitionSpec(sp["m"], sp["du"], sp["u_low"], zeta=sp["zeta"], tau=sp["tau"])
    theta_star = quadrature_theta_star(model, part, sp["flavor"])

    def run(chains: int, n_iter: int, stream: int):
        cc = ContourConfig(
            model,
            sp["flavor"],
            part,
            lr=sp["lr"],
            n_iter=n_iter,
            omega=_omega(sp),
            noise=_noise(cfg.sections["noise"]),
            chains=chains,
            replications=cfg.replications,
            index_energy=sp["index_energy"],
            init_box=(sp["init_low"], sp["init_high"]),
            check_every=1000,
            seed=cfg.seed + stream,
        )
        return contour_run(cc)

    P, R = sp["chains"], cfg.replications
    main = run(P, sp["iterations"], 0)
    bias = np.abs(main.theta - theta_star).max(axis=1)
    rows = [SummaryRow("theta_sup_error", *_mean_se(bias), R), SummaryRow("min_multiplier", main.min_multiplier, None, R)]
    theta_rows = [["main", r, i, float(main.theta[r, i]), float(theta_star[i])] for r in range(R) for i in range(sp["m"])]
    if R >= 2:
        rows.append(SummaryRow("theta_variance", replicate_variance(main.theta), None, R))
    if sp["single_chain_baseline"]:
        # Same total number of sampler steps on one chain; a separate seed block keeps the runs independent.
        single = run(1, P * sp["iterations"], 10_000)
        v_single, v_main = replicate_variance(single.theta), replicate_variance(main.theta)
        omega = _omega(sp)
        theory = P * omega(P * sp["iterations"]) / omega(sp["iterations"])
        rows += [
            SummaryRow("single_theta_variance", v_single, None, R),
            SummaryRow("variance_ratio", v_single / v_main if v_main > 0 else math.inf, None, R),
            SummaryRow("variance_ratio_theory", theory),
            SummaryRow("variance_ratio_boot_q05", bootstrap_ratio_quantile(single.theta, main.theta, 0.05, sp["bootstrap"], cfg.seed), None, R),
        ]
        theta_rows += [["single", r, i, float(single.theta[r, i]), float(theta_star[i])] for r in range(R) for i in range(sp["m"])]
    tables = {"theta.csv": (["run", "replication", "subregion", "theta", "theta_star"], theta_rows)}
    return ExperimentOutput(rows, tables)


def _lattice_modes_visited(samples: np.ndarray, radius: float = 0.25) -> int:
    x = samples.reshape(-1, 2)
    centre = np.rint(x)
    near = (np.abs(centre) <= 2).all(axis=1) & (np.hypot(*(x - centre).T) <= radius)
    keys = {(int(a), int(b)) for a, b in centre[near]}
    return len(keys)


def _icsgld_lattice(cfg: ExperimentConfig) -> ExperimentOutput:
    sp = cfg.sections["sampler"]
    model = lattice25()
    part = PartitionSpec(sp["m"], sp["du"], sp["u_low"], zeta=sp["zeta"], tau=sp["tau"])
    cc = ContourConfig(
        model,
        "icsgld",
        part,
        lr=sp["lr"],
        n_iter=sp["iterations"],
        omega=_omega(sp),
        noise=_noise(cfg.sections["noise"]),
        chains=sp["chains"],
        replications=cfg.replications,
        index_energy=sp["index_energy"],
        init_box=(sp["init_low"], sp["init_high"]),
        sample_thin=sp["thin"],
        check_every=1000,
        seed=cfg.seed,
    )
    res = contour_run(cc)
    R = cfg.replications
    visited = [_lattice_modes_visited(res.samples[:, r]) for r in range(R)]
    ref = ReferenceDensity.from_model(model, sp["tau"], cells=sp["kl_cells"])
    # Importance-weighted histogram of the flattened samples restores the original target.
    kls = []
    for r in range(R):
        x = res.samples[:, r].reshape(-1, 2)
        w = res.theta_at_index[:, r].reshape(-1) ** sp["zeta"]
        inside = (np.abs(x) <= 4).all(axis=1)
        hist, _ = np.histogramdd(x[inside], bins=ref.edges, weights=w[inside])
        p = hist / hist.sum() + 1e-8
        p /= p.sum()
        q = ref.cell_mass + 1e-8
        q /= q.sum()
        kls.append(float(max(0.0, np.sum(p * np.log(p / q)))))
    rows = [
        SummaryRow("modes_visited", *_mean_se(visited), R),
        SummaryRow("weighted_kl", *_mean_se(kls), R),
        SummaryRow("min_multiplier", res.min_multiplier, None, R),
    ]
    tables = {
        "theta.csv": (["replication", "subregion", "theta"], [[r, i, float(res.theta[r, i])] for r in range(R) for i in range(sp["m"])]),
        "samples.csv": (
            ["replication", "iteration", "chain", "x1", "x2", "theta_at_index"],
            [
                [r, int(res.sample_iters[i]), p, float(res.samples[i, r, p, 0]), float(res.samples[i, r, p, 1]), float(res.theta_at_index[i, r, p])]
                for r in range(min(R, 1))
                for i in range(res.samples.shape[0])
                for p in range(sp["chains"])
            ],
        ),
    }
    return ExperimentOutput(rows, tables)


def gaussian_energy_cdf(u) -> np.ndarray:
    """``P(x^2 / 2 <= u)`` for a standard normal ``x``."""
    u = np.asarray(u, dtype=float)
    return np.where(u > 0, erf(np.sqrt(np.maximum(u, 0.0))), 0.0)


def _awsgld_cdf(cfg: ExperimentConfig) -> ExperimentOutput:
    sp = cfg.sections["sampler"]
    model = gauss_mix_1d((1.0,), (0.0,), (1.0,), normalize=False)
    noise = _noise(cfg.sections["noise"])
    part = PartitionSpec(sp["m"], sp["du"], 0.0, zeta=sp["zeta"], tau=sp["tau"])
    n = sp["iterations"]
    stride = max(1, n // sp["theta_snapshots"])
    cc = ContourConfig(
        model,
        "awsgld",
        part,
        lr=sp["lr"],
        n_iter=n,
        omega=_omega(sp),
        noise=noise,
        replications=cfg.replications,
        index_energy=sp["index_energy"],
        x0=[0.0],
        theta_stride=stride,
        sample_thin=sp["thin"],
        check_every=100,
        seed=cfg.seed,
    )
    res = contour_run(cc)
    upper = np.append(part.boundaries, np.inf)
    oracle = gaussian_energy_cdf(upper)
    R = cfg.replications
    sup = np.abs(res.theta - oracle).max(axis=1)
    rows = [SummaryRow("sup_error", *_mean_se(sup), R)]
    grid = part.boundaries
    f_aw = np.array([np.searchsorted(np.sort(res.energies[:, r, 0]), grid, side="right") / res.energies.shape[0] for r in range(R)])
    cdf_rows = []
    if sp["sgld_baseline"]:
        base = sgld_run(model, noise, sp["lr"], sp["tau"], n, replications=R, seed=cfg.seed, x0=[0.0], thin=sp["thin"])
        f_sg = np.array([np.searchsorted(np.sort(base.energies[:, r]), grid, side="right") / base.energies.shape[0] for r in range(R)])
        gap = (f_aw - f_sg).min(axis=1)
        rows += [
            SummaryRow("dominance_min_gap", *_mean_se(gap), R),
            SummaryRow("dominance_holds_fraction", float(np.mean(gap >= 0)), None, R),
            SummaryRow("sgld_cdf_sup_error", *_mean_se(np.abs(f_sg - gaussian_energy_cdf(grid)).max(axis=1)), R),
        ]
    else:
        f_sg = np.full_like(f_aw, np.nan)
    for i, u in enumerate(grid):
        cdf_rows.append([float(u), float(oracle[i]), float(res.theta[0, i]), float(f_aw[0, i]), float(f_sg[0, i])])
    trace_rows = [
        [int(it), r, i, float(res.theta_trace[s, r, i])]
        for s, it in enumerate(res.theta_iters)
        for r in range(R)
        for i in range(sp["m"])
    ]
    tables = {
        "energy_cdf.csv": (["u", "oracle_cdf", "theta", "awsgld_empirical_cdf", "sgld_empirical_cdf"], cdf_rows),
        "theta_trace.csv": (["iteration", "replication", "subregion", "theta"], trace_rows),
    }
    return ExperimentOutput(rows, tables)


def _hit_mean(h: np.ndarray) -> float:
    return float(h.mean()) if np.all(h >= 0) else math.inf


def _awsgld_benchmark(cfg: ExperimentConfig) -> ExperimentOutput:
    name = cfg.sections["target"]["name"]
    sp = cfg.sections["sampler"]
    model = make_benchmark(name)
    md = model.metadata
    m = sp["m"]
    du = sp["du"] if sp["du"] is not None else md[f"du_{m}"]
    zeta = sp["zeta"] if sp["zeta"] is not None else md[f"zeta_{m}"]
    lr = sp["lr"] if sp["lr"] is not None else md["lr"]
    tau = sp["tau"] if sp["tau"] is not None else md["tau"]
    rho = sp["rho"] if sp["rho"] is not None else md["rho"]
    threshold = md["u_min"] + rho
    noise = _noise(cfg.sections["noise"])
    R, n = cfg.replications, sp["iterations"]
    cc = ContourConfig(
        model,
        "awsgld",
        PartitionSpec(m, du, md["u_min"], zeta=zeta, tau=tau),
        lr=lr,
        n_iter=n,
        omega=_omega(sp),
        noise=noise,
        replications=R,
        index_energy="noisy",
        init_box=md["box"],
        stop_threshold=threshold,
        check_every=100,
        seed=cfg.seed,
    )
    aw = contour_run(cc).hitting
    hits = {"awsgld": aw}
    if sp["sgld_baselines"]:
        for label, t in (("sgld_low", tau * sp["low_tau_factor"]), ("sgld_high", tau)):
            hits[label] = sgld_run(model, noise, lr, t, n, replications=R, seed=cfg.seed, init_box=md["box"], stop_threshold=threshold).hitting
    rows = []
    for label, h in hits.items():
        rows += [
            SummaryRow(f"{label}_mean_hitting", _hit_mean(h), _mean_se(h)[1] if np.all(h >= 0) else None, R),
            SummaryRow(f"{label}_hit_fraction", float(np.mean(h >= 0)), None, R),
        ]
    if sp["sgld_baselines"]:
        low = _hit_mean(hits["sgld_low"])
        rows.append(SummaryRow("speedup_vs_low", _hit_mean(aw) / low if math.isfinite(low) else 0.0, None, R))
    table = [[label, r, int(h[r])] for label, h in hits.items() for r in range(R)]
    return ExperimentOutput(rows, {"hitting.csv": (["method", "replication", "hitting_iteration"], table)})


_PIPELINES: Mapping[str, Callable[[ExperimentConfig], ExperimentOutput]] = {
    "resgld_mixture": _resgld_mixture,
    "vr_posterior": _vr_posterior,
    "deo_lattice": _deo_lattice,
    "roundtrip_oracle": _roundtrip_oracle,
    "csgld_mixture": _csgld_mixture,
    "icsgld_lattice": _icsgld_lattice,
    "awsgld_cdf": _awsgld_cdf,
    "awsgld_benchmark": _awsgld_benchmark,
}


def run_pipeline(cfg: ExperimentConfig) -> ExperimentOutput:
    """Run the experiment described by ``cfg`` and return its outputs."""
    return _PIPELINES[cfg.kind](cfg)
