"""Batch command-line front end.

``spatialtreat <subcommand>`` loads delimited-text inputs, runs one
estimation pipeline, and writes delimited-text outputs plus a run manifest
into ``--out-dir``. Subcommands:

=================  ==========================================================
``estimate``       effect curve over distance bins (``--method`` selects the
                   estimator; realized-design methods get conservative SEs)
``aggregate``      aggregate per-location effects (both aggregation routes)
``parametric``     weighted least squares effect curve + one-step aggregate
``oracle``         exact moments of an estimator over the full design
``permute``        sharp-null permutation test of an estimator
``observational``  propensity -> overlap/match -> doubly robust pipeline
``simulate``       draw a synthetic study to files from a config
=================  ==========================================================

Exit codes: 0 success, 2 invalid inputs or configuration (named cause),
1 estimator failure at runtime. The manifest records the resolved value of
every setting, a hash of that resolution, the seed, and library versions —
but no timestamps, so reruns with identical inputs are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import BinPartition, tau_aatt1, tau_aatt2
from .data import (
    load_study,
    load_synthetic_study,
    parse_config,
    save_effects_csv,
    save_individuals_csv,
    save_locations_csv,
)
from .errors import (
    EstimationError,
    SpatialTreatError,
    UnsupportedDesignError,
    ValidationError,
    ConfigError,
)
from .estimators import effect_curve, inner_outer_ring, tau_att, tau_att_eq, tau_w
from .geometry import DistanceBin
from .interference import tau_additive, tau_nearest, tau_single_region
from .observational import (
    doubly_robust_tau,
    fit_outcome_model,
    fit_propensity,
    overlap_and_match,
)
from .oracle import exact_moments, permutation_test
from .parametric import (
    BasisSpec,
    build_design_rows,
    fit_aatt_regression,
    fit_wls,
    plug_in_aatt,
)
from .simulate import SIMULATION_DEFAULTS, simulate
from .variance import conservative_variance
from .weighting import custom_weights

METHODS = (
    "att",
    "att-eq",
    "weighted",
    "additive",
    "nearest",
    "single-region",
    "inner-outer",
    "dr",
)
DEFAULT_BINS = "0:0.25:0.025"


# ---------------------------------------------------------------------------
# Argument parsing and settings resolution
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatialtreat",
        description="Estimate effects of treatments at geographic locations.",
    )
    parser.add_argument("--version", action="version", version=f"spatialtreat {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser, *, data: bool = True) -> None:
        if data:
            p.add_argument("--individuals", help="individuals CSV (id,region,x,y,outcome,...)")
            p.add_argument("--locations", help="candidate locations CSV (id,region,x,y,...)")
        p.add_argument("--config", help="key-value config file")
        p.add_argument("--bins", help="distance bins as lo:hi:step")
        p.add_argument("--dmax", type=float, help="largest distance with a nonzero effect")
        p.add_argument("--seed", type=int, help="random seed (default 0)")
        p.add_argument("--out-dir", default=".", help="output directory (default: .)")

    p = sub.add_parser("estimate", help="effect curve over distance bins")
    common(p)
    p.add_argument("--method", choices=METHODS, help="estimator (default att)")
    p.add_argument("--weights", help="custom weights CSV for --method weighted")

    p = sub.add_parser("aggregate", help="aggregate per-location effects")
    common(p)

    p = sub.add_parser("parametric", help="weighted least squares effect curve")
    common(p)

    p = sub.add_parser("oracle", help="exact moments over the assignment design")
    common(p)
    p.add_argument("--effects", help="per-pair effects CSV (individual,location,effect)")
    p.add_argument("--method", choices=METHODS, help="estimator (default att)")

    p = sub.add_parser("permute", help="sharp-null permutation test")
    common(p)
    p.add_argument("--method", choices=METHODS, help="test statistic (default att)")

    p = sub.add_parser("observational", help="propensity, matching, doubly robust")
    common(p)

    p = sub.add_parser("simulate", help="draw a synthetic study to files")
    common(p, data=False)
    return parser


def resolve_settings(args: argparse.Namespace) -> dict[str, str]:
    """Merge config-file keys and command-line flags; flags win."""
    settings: dict[str, str] = {}
    if args.config:
        settings.update(parse_config(args.config))
    for key in ("bins", "dmax", "seed", "method", "weights"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = str(value)
    settings.setdefault("seed", "0")
    if args.subcommand in ("estimate", "oracle", "permute"):
        settings.setdefault("method", "att")
        if settings["method"] not in METHODS:
            raise ConfigError(f"config key 'method' must be one of {METHODS}")
    if args.subcommand != "simulate":
        settings.setdefault("bins", DEFAULT_BINS)
    else:
        for key, value in SIMULATION_DEFAULTS.items():
            settings.setdefault(key, value)
    return settings


def parse_bins(spec: str) -> tuple[DistanceBin, ...]:
    """Turn ``lo:hi:step`` into adjacent half-open distance bins."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"bins must be written lo:hi:step, got {spec!r}")
    try:
        lo, hi, step = (float(v) for v in parts)
    except ValueError:
        raise ConfigError(f"bins must be numeric lo:hi:step, got {spec!r}") from None
    if step <= 0 or hi <= lo:
        raise ConfigError(f"bins need hi > lo and step > 0, got {spec!r}")
    count = (hi - lo) / step
    if abs(count - round(count)) > 1e-9:
        raise ConfigError(f"bin step {step} does not evenly divide [{lo}, {hi}]")
    return tuple(
        DistanceBin(lo + (k + 0.5) * step, step / 2.0) for k in range(int(round(count)))
    )


def restrict_bins(bins: tuple[DistanceBin, ...], dmax: float | None) -> tuple[DistanceBin, ...]:
    if dmax is None:
        return bins
    kept = tuple(b for b in bins if b.center + b.half_width <= dmax + 1e-12)
    if not kept:
        raise ConfigError(f"no bins at or below dmax={dmax}")
    return kept


# ---------------------------------------------------------------------------
# Manifest and output helpers
# ---------------------------------------------------------------------------


def write_manifest(
    out_dir: Path, subcommand: str, settings: dict[str, str], inputs: dict[str, str]
) -> None:
    lines = [f"setting {k} {settings[k]}" for k in sorted(settings)]
    digest = hashlib.sha256("\n".join(lines).encode()).hexdigest()
    header = [
        f"subcommand {subcommand}",
        f"config_hash {digest}",
        f"seed {settings.get('seed', '0')}",
        f"package spatialtreat {__version__}",
        f"python {platform.python_version()}",
        f"numpy {np.__version__}",
    ]
    header.extend(f"input {k} {v}" for k, v in sorted(inputs.items()))
    (out_dir / "run_manifest.txt").write_text("\n".join(header + lines) + "\n")


def write_rows(path: Path, header: str, rows: list[str]) -> None:
    path.write_text("\n".join([header] + rows) + "\n")


def _fmt(value: float) -> str:
    return repr(float(value))


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required for this subcommand")


def _load(args: argparse.Namespace, settings: dict[str, str]):
    _require(args, "individuals", "locations")
    config = dict(settings)
    return load_study(args.individuals, args.locations, config)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def run_estimate(args: argparse.Namespace, settings: dict[str, str], out_dir: Path) -> None:
    study = _load(args, settings)
    method = settings["method"]
    bins = restrict_bins(parse_bins(settings["bins"]), _get_dmax(settings))

    if method in ("att", "att-eq"):
        def cons(st, table):
            try:
                return conservative_variance(st, table).total
            except (UnsupportedDesignError, EstimationError):
                return None

        curve = effect_curve(study, bins, scheme=method, variance_fn=cons)
        curve.save(out_dir / "effect_curve.csv")
    elif method == "weighted":
        if "weights" not in settings:
            raise ConfigError("--method weighted needs --weights pointing to a weights CSV")
        table = custom_weights(study, _read_weights(settings["weights"]))
        value = tau_w(study, table)
        write_rows(
            out_dir / "effect_curve.csv",
            "estimate,total_weight",
            [f"{_fmt(value)},{_fmt(table.total)}"],
        )
    elif method == "inner-outer":
        inner, outer = bins[0], bins[-1]
        if len(bins) < 2:
            raise ConfigError("--method inner-outer needs at least two bins")
        isolation = float(settings.get("isolation", 2.0 * (outer.center + outer.half_width)))
        value = inner_outer_ring(study, inner, outer, isolation)
        write_rows(
            out_dir / "effect_curve.csv",
            "inner_center,outer_center,isolation,estimate",
            [f"{_fmt(inner.center)},{_fmt(outer.center)},{_fmt(isolation)},{_fmt(value)}"],
        )
    else:
        fn = {
            "additive": tau_additive,
            "nearest": lambda st, b: tau_nearest(st, "att", b),
            "single-region": tau_single_region,
            "dr": lambda st, b: doubly_robust_tau(st, b),
        }[method]
        rows = [
            f"{_fmt(b.center)},{_fmt(b.half_width)},{_fmt(fn(study, b))}" for b in bins
        ]
        write_rows(out_dir / "effect_curve.csv", "d_center,h,estimate", rows)


def _read_weights(path: str) -> dict[tuple[str, str], float]:
    import csv

    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        needed = {"individual", "location", "weight"}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise ValidationError(f"weights file {path} needs columns individual,location,weight")
        out = {}
        for row in reader:
            out[(row["individual"].strip(), row["location"].strip())] = float(row["weight"])
    return out


def _get_dmax(settings: dict[str, str]) -> float | None:
    raw = settings.get("dmax")
    if raw is None:
        return None
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"dmax must be a number, got {raw!r}") from None


def run_aggregate(args: argparse.Namespace, settings: dict[str, str], out_dir: Path) -> None:
    study = _load(args, settings)
    lo, hi, step = (float(v) for v in settings["bins"].split(":"))
    dmax = _get_dmax(settings)
    partition = BinPartition.from_range(lo, dmax if dmax is not None else hi, step)
    result = tau_aatt2(study, partition)
    result.save(out_dir / "aggregate_bins.csv")
    route_one = tau_aatt1(study)
    write_rows(
        out_dir / "aggregate_summary.csv",
        "route,estimate",
        [
            f"treated-vs-control-totals,{_fmt(route_one)}",
            f"bin-weighted-curve,{_fmt(result.estimate)}",
        ],
    )


def run_parametric(args: argparse.Namespace, settings: dict[str, str], out_dir: Path) -> None:
    study = _load(args, settings)
    dmax = _get_dmax(settings)
    if dmax is None:
        raise ConfigError("parametric fitting needs --dmax (the zero-effect distance)")
    degree = int(settings.get("degree", "2"))
    spec = BasisSpec.polynomial(
        dmax,
        effect_degree=degree,
        control_degree=int(settings.get("control_degree", str(degree))),
        restricted=settings.get("restricted", "true").strip().lower() != "false",
    )
    rows = build_design_rows(study, spec)
    fit = fit_wls(rows)
    Path(out_dir / "parametric_coefficients.csv").write_text(fit.coefficients_csv_text())
    bins = restrict_bins(parse_bins(settings["bins"]), dmax)
    curve_points = [b.center for b in bins]
    Path(out_dir / "parametric_curve.csv").write_text(fit.curve_csv_text(curve_points))
    if spec.restricted:
        aatt, one_step_fit = fit_aatt_regression(study, spec)
        two_step = plug_in_aatt(rows, fit)
        write_rows(
            out_dir / "parametric_summary.csv",
            "quantity,value",
            [
                f"aatt_one_step,{_fmt(aatt)}",
                f"aatt_plug_in,{_fmt(two_step)}",
                f"max_abs_residual,{_fmt(one_step_fit.max_abs_residual)}",
            ],
        )
    else:
        write_rows(
            out_dir / "parametric_summary.csv",
            "quantity,value",
            [f"max_abs_residual,{_fmt(fit.max_abs_residual)}"],
        )


def _bin_estimator(method: str, bin_: DistanceBin):
    return {
        "att": lambda st: tau_att(st, bin_),
        "att-eq": lambda st: tau_att_eq(st, bin_),
        "additive": lambda st: tau_additive(st, bin_),
        "nearest": lambda st: tau_nearest(st, "att", bin_),
        "single-region": lambda st: tau_single_region(st, bin_),
        "dr": lambda st: doubly_robust_tau(st, bin_),
    }.get(method)


def run_oracle(args: argparse.Namespace, settings: dict[str, str], out_dir: Path) -> None:
    _require(args, "individuals", "locations", "effects")
    synthetic = load_synthetic_study(args.individuals, args.locations, args.effects, dict(settings))
    method = settings["method"]
    bins = restrict_bins(parse_bins(settings["bins"]), _get_dmax(settings))
    rows = []
    for b in bins:
        estimator = _bin_estimator(method, b)
        if estimator is None:
            raise ConfigError(f"oracle does not support method {method!r}")
        report = exact_moments(synthetic, estimator)
        rows.append(
            f"{_fmt(b.center)},{_fmt(b.half_width)},{_fmt(report.mean)},"
            f"{_fmt(report.variance)},{_fmt(report.sd)},{_fmt(report.excluded_mass)}"
        )
    write_rows(
        out_dir / "oracle_moments.csv", "d_center,h,mean,variance,sd,excluded_mass", rows
    )


def run_permute(args: argparse.Namespace, settings: dict[str, str], out_dir: Path) -> None:
    study = _load(args, settings)
    method = settings["method"]
    bins = restrict_bins(parse_bins(settings["bins"]), _get_dmax(settings))
    statistic = _bin_estimator(method, bins[0])
    if statistic is None:
        raise ConfigError(f"permute does not support method {method!r}")
    report = permutation_test(study, statistic, seed=int(settings["seed"]))
    write_rows(
        out_dir / "permutation.csv",
        "observed,p_value,method,draws",
        [
            f"{_fmt(report.observed)},{_fmt(report.p_value)},"
            f"{report.method},{report.n_draws}"
        ],
    )


def run_observational(args: argparse.Namespace, settings: dict[str, str], out_dir: Path) -> None:
    study = _load(args, settings)
    covariates = tuple(
        name.strip() for name in settings.get("covariates", "").split(",") if name.strip()
    )
    flags = {s.id: s.id in study.xi(s.region) for s in study.locations}
    model = fit_propensity(study.locations, covariates, treated=flags)
    write_rows(
        out_dir / "propensity.csv",
        "term,coefficient",
        [f"{name},{_fmt(value)}" for name, value in model.coefficients.items()]
        + [f"converged,{model.converged}", f"separated,{model.separated}"],
    )

    caliper = float(settings.get("caliper", "0.5"))
    match = overlap_and_match(study.locations, model, caliper, treated=flags)
    write_rows(
        out_dir / "matches.csv",
        "treated,control,logit_gap",
        [f"{t},{c},{_fmt(gap)}" for t, c, gap in match.pairs],
    )
    hist_rows = [
        f"{_fmt(edge)},{t},{c}"
        for edge, t, c in zip(
            match.report.bin_edges,
            match.report.treated_histogram,
            match.report.control_histogram,
        )
    ]
    write_rows(
        out_dir / "overlap.csv",
        "bin_lower,treated_count,control_count",
        hist_rows
        + [
            f"min,{_fmt(match.report.treated_range[0])},{_fmt(match.report.control_range[0])}",
            f"max,{_fmt(match.report.treated_range[1])},{_fmt(match.report.control_range[1])}",
        ],
    )

    bins = restrict_bins(parse_bins(settings["bins"]), _get_dmax(settings))
    edges = [bins[0].center - bins[0].half_width] + [
        b.center + b.half_width for b in bins
    ]
    outcome_covariates = tuple(
        name.strip()
        for name in settings.get("outcome_covariates", "").split(",")
        if name.strip()
    )
    mu = fit_outcome_model(study, edges, outcome_covariates)
    rows = []
    for b in bins:
        value = doubly_robust_tau(study, b, model, mu)
        rows.append(f"{_fmt(b.center)},{_fmt(b.half_width)},{_fmt(value)}")
    write_rows(out_dir / "dr_curve.csv", "d_center,h,estimate", rows)


def run_simulate(args: argparse.Namespace, settings: dict[str, str], out_dir: Path) -> None:
    from dataclasses import replace

    config = {k: v for k, v in settings.items() if k in SIMULATION_DEFAULTS or k == "treated_regions"}
    synthetic = simulate(config, seed=int(settings["seed"]))
    study = synthetic.study
    covariate_names = tuple(sorted({k for i in study.individuals for k in i.covariates}))
    save_individuals_csv(study.individuals, out_dir / "individuals.csv", covariate_names)
    flagged = tuple(
        replace(s, treated=s.id in study.xi(s.region)) for s in study.locations
    )
    pi_values = None
    if config.get("within") == "independent":
        pi_values = {(s.region, s.id): float(config["pi"]) for s in study.locations}
    save_locations_csv(flagged, out_dir / "locations.csv", pi_values=pi_values)
    save_effects_csv(synthetic.effects, out_dir / "effects.csv")
    (out_dir / "study_config.txt").write_text(_round_trip_config(study, config))


def _round_trip_config(study, config: dict[str, str]) -> str:
    """A `key = value` config that loads the saved files back as this study."""
    lines = ["metric = euclidean", f"rule = {config.get('rule', 'additive')}"]
    if config.get("within") == "independent":
        lines.append("design = independent")
    else:
        if config.get("across", "cr") == "cr":
            lines.append("design = completely-randomized")
            lines.append(f"treated_regions = {study.design.across.n_treated}")
        else:
            lines.append("design = bernoulli")
            lines.append(f"pi = {config.get('pi', '0.5')}")
        if config.get("within", "single") == "fixed":
            lines.append("within = fixed-k")
            lines.append(f"fixed_k = {config.get('k', '1')}")
        else:
            lines.append("within = single")
    return "\n".join(lines) + "\n"


RUNNERS = {
    "estimate": run_estimate,
    "aggregate": run_aggregate,
    "parametric": run_parametric,
    "oracle": run_oracle,
    "permute": run_permute,
    "observational": run_observational,
    "simulate": run_simulate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = resolve_settings(args)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        RUNNERS[args.subcommand](args, settings, out_dir)
        inputs = {
            name: str(getattr(args, name))
            for name in ("individuals", "locations", "effects", "config", "weights")
            if getattr(args, name, None)
        }
        write_manifest(out_dir, args.subcommand, settings, inputs)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        name = getattr(exc, "filename", None)
        print(f"error: cannot read {name or exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 1
    except SpatialTreatError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
