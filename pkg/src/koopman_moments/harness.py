"""End-to-end experiment runner and command line interface.

A run samples initial states, rolls out the system, lifts the trajectories,
fits the requested predictors and writes one directory per predictor::

    <out>/config.json
    <out>/summary.json
    <out>/<method>/A.csv
    <out>/<method>/diagnostics.json
    <out>/<method>/mu.csv
    <out>/<method>/sigma_trace.csv
    <out>/<method>/recursion_defects.csv

Every number is written with 17 significant digits and nothing depends on
wall-clock time, so two runs with the same configuration are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DataMatrices, assemble, build_ensemble, sample_initial_states
from .dictionary import dictionary_size, monomial_dictionary
from .dynamics import (
    DEFAULT_POLYNOMIAL_TERMS,
    duffing_system,
    identity_system,
    polynomial_map_system,
)
from .errors import ConfigError, HorizonError, NumericalError
from .moments import (
    MomentReport,
    empirical_moments,
    recursion_check_mean,
    recursion_check_variance,
    sigma_approximation_gap,
)
from .predictors import Method, Predictor, fit

log = logging.getLogger(__name__)

SYSTEMS = ("duffing", "identity", "custom-polynomial-map")
PREDICTORS = tuple(m.value for m in Method)
DEFAULT_SEED = 2024

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tuple(v) for v in value)
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of one experiment; the defaults reproduce the Duffing study."""

    system: str = "duffing"
    dt: float = 0.1
    substeps: int = 10
    degree: int = 10
    samples: int = 10000
    horizon: int = 5
    seed: int = DEFAULT_SEED
    lower: tuple = (-1.0, -1.0)
    upper: tuple = (1.0, 1.0)
    out: str | None = None
    predictors: tuple = PREDICTORS
    map_terms: tuple = DEFAULT_POLYNOMIAL_TERMS
    export_ensemble: bool = False

    def __post_init__(self):
        for name in ("lower", "upper", "predictors", "map_terms"):
            object.__setattr__(self, name, _tuple(getattr(self, name)))
        if isinstance(self.predictors, str):
            object.__setattr__(self, "predictors", (self.predictors,))

    @property
    def state_dim(self) -> int:
        if self.system == "custom-polynomial-map":
            return len(self.map_terms)
        return len(self.lower)

    @property
    def dictionary_size(self) -> int:
        return dictionary_size(self.state_dim, self.degree)

    def validate(self) -> "ExperimentConfig":
        """Raise :class:`ConfigError` describing the first violated constraint."""
        if self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}; choose from {SYSTEMS}")
        for name in ("substeps", "degree", "samples", "horizon"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not (isinstance(self.dt, (int, float)) and np.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be positive, got {self.dt!r}")
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ConfigError("lower and upper bounds must have the same, nonzero length")
        if any(not (lo < hi) for lo, hi in zip(self.lower, self.upper)):
            raise ConfigError(f"degenerate domain {self.lower} x {self.upper}")
        if self.system == "duffing" and len(self.lower) != 2:
            raise ConfigError("the Duffing oscillator has a 2-dimensional state")
        if self.system == "custom-polynomial-map" and len(self.lower) != len(self.map_terms):
            raise ConfigError("domain bounds must match the polynomial map's dimension")
        if not self.predictors:
            raise ConfigError("at least one predictor must be requested")
        unknown = [p for p in self.predictors if p not in PREDICTORS]
        if unknown:
            raise ConfigError(f"unknown predictor(s) {unknown}; choose from {PREDICTORS}")
        m = self.dictionary_size
        if self.samples < m:
            raise ConfigError(f"samples={self.samples} is below the dictionary size m={m}")
        if "unbiased" in self.predictors and self.horizon > m:
            raise ConfigError(f"the unbiased predictor needs m >= N, "
                              f"got m={m}, N={self.horizon}")
        return self

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - names
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**payload)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(payload)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def make_system(self):
        if self.system == "duffing":
            return duffing_system(self.dt, self.substeps, self.lower, self.upper)
        if self.system == "identity":
            return identity_system(len(self.lower), self.lower, self.upper)
        return polynomial_map_system(self.map_terms, self.lower, self.upper)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    data: DataMatrices
    predictors: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def prepare_data(config: ExperimentConfig) -> DataMatrices:
    system = config.make_system()
    initials = sample_initial_states(config.lower, config.upper, config.samples, config.seed)
    ensemble = build_ensemble(system, initials, config.horizon, seed=config.seed)
    if config.export_ensemble and config.out is not None:
        Path(config.out).mkdir(parents=True, exist_ok=True)
        ensemble.to_csv(Path(config.out) / "ensemble.csv")
    return assemble(monomial_dictionary(config.state_dim, config.degree), ensemble)


def _predictor_summary(pred: Predictor, report: MomentReport) -> dict:
    unbiased = pred.method is Method.UNBIASED_MULTI_STEP
    var_defects = recursion_check_variance(report, pred, require_unbiased=unbiased)
    mean_defects = recursion_check_mean(report, pred)
    return {
        "norm_mu": report.norm_mu.tolist(),
        "scaled_norm_mu": report.scaled_norm_mu.tolist(),
        "tr_sigma": report.tr_sigma.tolist(),
        "tr_omega": report.tr_omega.tolist(),
        "sigma_gap": sigma_approximation_gap(report).tolist(),
        "mean_defects": mean_defects.tolist(),
        "variance_defects": var_defects.tolist(),
        "diagnostics": pred.diagnostics,
    }


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run the full pipeline; writes the output tree when ``config.out`` is set.

    Raises
    ------
    ConfigError
        Before any computation if the configuration is invalid.
    NumericalError
        If a rollout diverges or a fit meets a rank-deficient matrix.
    """
    config.validate()
    data = prepare_data(config)
    result = ExperimentResult(config, data)
    for name in config.predictors:
        try:
            pred = fit(name, data)
        except (NumericalError, HorizonError) as exc:
            raise type(exc)(f"fitting {name!r}: {exc}") from exc
        log.info("fitted %s predictor (objective %.3e)", name, pred.diagnostics["objective"])
        result.predictors[name] = pred
        result.reports[name] = empirical_moments(pred, data)

    per_pred = {name: _predictor_summary(result.predictors[name], result.reports[name])
                for name in config.predictors}
    N = data.horizon
    result.summary = {
        "config": config.to_dict(),
        "data": {"m": data.n_features, "L": data.n_samples, "N": N,
                 "rank_G0": data.rank_G0},
        "predictors": per_pred,
        "bias_table": [{"t": t, **{k: v["norm_mu"][t - 1] for k, v in per_pred.items()}}
                       for t in range(1, N + 1)],
        "variance_table": [{"t": t, **{k: v["tr_sigma"][t - 1] for k, v in per_pred.items()}}
                           for t in range(1, N + 1)],
    }
    if config.out is not None:
        write_outputs(result, Path(config.out))
    return result


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[0]] + [_fmt(v) for v in row[1:]])


def write_outputs(result: ExperimentResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    result.config.dump(out / "config.json")
    (out / "summary.json").write_text(
        json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    for name, pred in result.predictors.items():
        report = result.reports[name]
        info = result.summary["predictors"][name]
        d = out / name
        d.mkdir(exist_ok=True)
        pred.to_csv(d / "A.csv", seed=result.config.seed)
        (d / "diagnostics.json").write_text(pred.diagnostics_json() + "\n")
        m = report.mu.shape[1]
        _write_rows(d / "mu.csv",
                    ["t", "norm_mu", "scaled_norm_mu"] + [f"mu_{k + 1}" for k in range(m)],
                    [[t, report.norm_mu[t - 1], report.scaled_norm_mu[t - 1],
                      *report.mu_at(t)] for t in range(1, report.horizon + 1)])
        gap = info["sigma_gap"]
        _write_rows(d / "sigma_trace.csv", ["t", "tr_sigma", "tr_omega_prev", "gap"],
                    [[t, report.tr_sigma[t - 1], report.tr_omega[t - 1], gap[t - 1]]
                     for t in range(1, report.horizon + 1)])
        _write_rows(d / "recursion_defects.csv", ["t", "mean_defect", "variance_defect"],
                    [[t, info["mean_defects"][t - 1], info["variance_defects"][t - 1]]
                     for t in range(1, report.horizon)])


def compare_summary(bundle) -> list[dict]:
    """Tabulate ``||mu_t||`` and ``tr Sigma_t`` side by side for all predictors.

    ``bundle`` may be an :class:`ExperimentResult`, a summary dict, or the path
    of an output directory.  Each row also holds, for every ordered pair of
    predictors, the relative differences ``|a - b| / |b|``.
    """
    if isinstance(bundle, ExperimentResult):
        summary = bundle.summary
    elif isinstance(bundle, (str, Path)):
        summary = json.loads((Path(bundle) / "summary.json").read_text())
    else:
        summary = bundle
    preds = summary.get("predictors", {})
    if len(preds) < 2:
        raise ValueError(f"need outputs of at least two predictors, found {sorted(preds)}")
    names = list(preds)
    N = len(next(iter(preds.values()))["tr_sigma"])
    rows = []
    for t in range(1, N + 1):
        row = {"t": t}
        for n in names:
            row[f"norm_mu[{n}]"] = preds[n]["norm_mu"][t - 1]
            row[f"tr_sigma[{n}]"] = preds[n]["tr_sigma"][t - 1]
        for a in names:
            for b in names:
                if a == b:
                    continue
                ref = preds[b]["tr_sigma"][t - 1]
                diff = abs(preds[a]["tr_sigma"][t - 1] - ref)
                row[f"rel_tr_sigma[{a}|{b}]"] = diff / ref if ref else float("inf")
        rows.append(row)
    return rows


def format_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    keys = [k for k in rows[0] if not k.startswith("rel_")]
    lines = ["  ".join(f"{k:>22}" for k in keys)]
    for row in rows:
        lines.append("  ".join(f"{row[k]:>22d}" if k == "t" else f"{row[k]:>22.4e}"
                               for k in keys))
    return "\n".join(lines)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopman-moments",
        description="Fit lifted linear predictors and analyse their multi-step residuals.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write its output tree")
    run.add_argument("--config", help="JSON config file; flags override its values")
    run.add_argument("--system", choices=SYSTEMS)
    run.add_argument("--dt", type=float)
    run.add_argument("--substeps", type=int)
    run.add_argument("--degree", type=int)
    run.add_argument("--samples", type=int)
    run.add_argument("--horizon", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--predictors",
                     help=f"comma-separated subset of {','.join(PREDICTORS)}")
    run.add_argument("--export-ensemble", action="store_true", default=None)
    run.add_argument("-v", "--verbose", action="store_true")

    cmp = sub.add_parser("compare", help="tabulate a finished run")
    cmp.add_argument("out", help="output directory of a run")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    payload = ExperimentConfig.load(args.config).to_dict() if args.config else {}
    overrides = {k: getattr(args, k) for k in
                 ("system", "dt", "substeps", "degree", "samples", "horizon", "seed", "out",
                  "export_ensemble")
                 if getattr(args, k) is not None}
    if args.predictors is not None:
        overrides["predictors"] = tuple(p.strip() for p in args.predictors.split(",")
                                        if p.strip())
    payload.update(overrides)
    return ExperimentConfig.from_dict(payload)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "compare":
        try:
            print(format_table(compare_summary(args.out)))
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        return EXIT_OK

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        if config.out is None:
            config = dataclasses.replace(config, out="results")
        result = run_experiment(config)
    except (ConfigError, HorizonError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if len(result.predictors) >= 2:
        print(format_table(compare_summary(result)))
    print(f"wrote {config.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
