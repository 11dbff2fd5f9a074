"""Observed and synthetic study data.

A :class:`Study` is the unit every estimator consumes: individuals with
outcomes, candidate treatment locations, the assignment design, the
realized assignment, and a precomputed within-region distance matrix.
Cross-region distances are never stored — treatment effects are assumed
confined to regions, and the missing entries make a forbidden query a
loud failure rather than a silent number.

A :class:`SyntheticStudy` wraps a study with a full potential-outcome
rule (baseline plus per-location effects combined additively, by nearest
realized location, or by explicit lookup table), which is what the
randomization oracle enumerates against.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path

from .design import (
    Assignment,
    Design,
    design_from_config,
    validate_assignment,
)
from .errors import (
    ConfigError,
    CrossRegionDistanceError,
    DuplicateIdError,
    EmptyRegionError,
    IncompleteOracleError,
    ParseError,
    UnknownRegionError,
    ValidationError,
)
from .geometry import (
    ClusterMembership,
    DistanceMetric,
    Euclidean,
    GreatCircle,
    Location,
)


@dataclass(frozen=True)
class Individual:
    """An outcome unit: residence location, outcome, optional extras."""

    id: str
    region: str
    location: Location
    outcome: float
    pre_outcome: float | None = None
    covariates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not math.isfinite(self.outcome):
            raise ValidationError(f"individual {self.id!r}: outcome must be finite")
        if self.pre_outcome is not None and not math.isfinite(self.pre_outcome):
            raise ValidationError(f"individual {self.id!r}: pre-period outcome must be finite")

    def covariate(self, name: str) -> float:
        try:
            return self.covariates[name]
        except KeyError:
            raise ValidationError(
                f"individual {self.id!r} has no covariate {name!r}"
            ) from None


@dataclass(frozen=True)
class CandidateLocation:
    """A location where treatment could occur; only some are realized."""

    id: str
    region: str
    location: Location
    treated: bool | None = None
    covariates: Mapping[str, float] = field(default_factory=dict)

    def covariate(self, name: str) -> float:
        try:
            return self.covariates[name]
        except KeyError:
            raise ValidationError(
                f"location {self.id!r} has no covariate {name!r}"
            ) from None


class Study:
    """Validated, immutable study data with a within-region distance matrix."""

    def __init__(
        self,
        individuals: tuple[Individual, ...] | list[Individual],
        locations: tuple[CandidateLocation, ...] | list[CandidateLocation],
        design: Design,
        assignment: Assignment,
        metric: DistanceMetric,
        _distances: dict[tuple[str, str], float] | None = None,
    ):
        self._individuals = tuple(individuals)
        self._locations = tuple(locations)
        self._design = design
        self._assignment = assignment
        self._metric = metric
        self._validate()
        self._index(_distances)

    # -- validation ---------------------------------------------------------

    def _validate(self) -> None:
        ind_ids = [i.id for i in self._individuals]
        if len(set(ind_ids)) != len(ind_ids):
            counts = Counter(ind_ids)
            dupes = sorted(x for x, n in counts.items() if n > 1)
            raise DuplicateIdError(f"duplicate individual ids: {dupes}")
        loc_ids = [s.id for s in self._locations]
        if len(set(loc_ids)) != len(loc_ids):
            counts = Counter(loc_ids)
            dupes = sorted(x for x, n in counts.items() if n > 1)
            raise DuplicateIdError(f"duplicate location ids: {dupes}")
        loc_regions = {s.region for s in self._locations}
        for i in self._individuals:
            if i.region not in loc_regions:
                raise UnknownRegionError(
                    f"individual {i.id!r} references region {i.region!r} "
                    "with no candidate locations"
                )
        ind_regions = {i.region for i in self._individuals}
        for region in sorted(loc_regions - ind_regions):
            raise EmptyRegionError(f"region {region!r} has no individuals")
        if set(self._design.regions) != loc_regions:
            raise ValidationError(
                f"design regions {sorted(self._design.regions)} do not match "
                f"data regions {sorted(loc_regions)}"
            )
        for region in loc_regions:
            data_locs = {s.id for s in self._locations if s.region == region}
            if set(self._design.region_locations(region)) != data_locs:
                raise ValidationError(
                    f"design locations for region {region!r} do not match the data"
                )
        validate_assignment(self._design, self._assignment)

    def _index(self, distances: dict[tuple[str, str], float] | None = None) -> None:
        self._individual_by_id = {i.id: i for i in self._individuals}
        self._location_by_id = {s.id: s for s in self._locations}
        by_region_i: dict[str, list[Individual]] = {}
        for i in self._individuals:
            by_region_i.setdefault(i.region, []).append(i)
        by_region_s: dict[str, list[CandidateLocation]] = {}
        for s in self._locations:
            by_region_s.setdefault(s.region, []).append(s)
        self._individuals_by_region = {j: tuple(v) for j, v in by_region_i.items()}
        self._locations_by_region = {j: tuple(v) for j, v in by_region_s.items()}
        if distances is not None:
            self._distances = distances
            return
        self._distances = {}
        for j, locs in self._locations_by_region.items():
            for s in locs:
                for i in self._individuals_by_region[j]:
                    self._distances[(s.id, i.id)] = self._metric.distance(
                        s.location, i.location
                    )

    # -- accessors ----------------------------------------------------------

    @property
    def individuals(self) -> tuple[Individual, ...]:
        return self._individuals

    @property
    def locations(self) -> tuple[CandidateLocation, ...]:
        return self._locations

    @property
    def design(self) -> Design:
        return self._design

    @property
    def assignment(self) -> Assignment:
        return self._assignment

    @property
    def metric(self) -> DistanceMetric:
        return self._metric

    @property
    def regions(self) -> tuple[str, ...]:
        return self._design.regions

    def individual(self, ind_id: str) -> Individual:
        try:
            return self._individual_by_id[ind_id]
        except KeyError:
            raise ValidationError(f"unknown individual {ind_id!r}") from None

    def location(self, loc_id: str) -> CandidateLocation:
        try:
            return self._location_by_id[loc_id]
        except KeyError:
            raise ValidationError(f"unknown location {loc_id!r}") from None

    def individuals_in(self, region: str) -> tuple[Individual, ...]:
        return self._individuals_by_region.get(region, ())

    def locations_in(self, region: str) -> tuple[CandidateLocation, ...]:
        return self._locations_by_region.get(region, ())

    def treated(self, region: str) -> bool:
        return self._assignment.treated(region)

    def xi(self, region: str) -> frozenset[str]:
        return self._assignment.xi(region)

    def distance(self, loc_id: str, ind_id: str) -> float:
        """Distance d(s, r_i); only within-region pairs exist."""
        try:
            return self._distances[(loc_id, ind_id)]
        except KeyError:
            pass
        s = self.location(loc_id)
        i = self.individual(ind_id)
        raise CrossRegionDistanceError(
            f"location {loc_id!r} (region {s.region!r}) and individual "
            f"{ind_id!r} (region {i.region!r}) are in different regions"
        )

    # -- derived studies ----------------------------------------------------

    def with_outcomes(
        self, outcomes: Mapping[str, float], assignment: Assignment | None = None
    ) -> "Study":
        """Copy of the study with outcomes (and optionally the assignment) replaced."""
        individuals = tuple(
            replace(i, outcome=float(outcomes[i.id])) if i.id in outcomes else i
            for i in self._individuals
        )
        return Study(
            individuals,
            self._locations,
            self._design,
            assignment if assignment is not None else self._assignment,
            self._metric,
            _distances=self._distances,
        )

    def with_assignment(self, assignment: Assignment) -> "Study":
        return Study(
            self._individuals,
            self._locations,
            self._design,
            assignment,
            self._metric,
            _distances=self._distances,
        )


def arcsinh_transform(study: Study) -> Study:
    """Replace outcomes (and pre-period outcomes) by arcsinh(y) = ln(y + √(y²+1)).

    A log-like transform that is defined at zero, so count outcomes with
    many zeros keep their full support.
    """
    individuals = tuple(
        replace(
            i,
            outcome=math.asinh(i.outcome),
            pre_outcome=None if i.pre_outcome is None else math.asinh(i.pre_outcome),
        )
        for i in study.individuals
    )
    return Study(individuals, study.locations, study.design, study.assignment, study.metric)


# ---------------------------------------------------------------------------
# Synthetic studies (potential-outcome oracles)
# ---------------------------------------------------------------------------

COMBINATION_RULES = ("additive", "nearest", "table")


@dataclass(frozen=True)
class SyntheticStudy:
    """A study plus the complete potential-outcome rule Y_i(S).

    ``study`` holds outcomes realized at ``study.assignment``. Potential
    outcomes are stored as a baseline Y_i(0), per-(individual, location)
    effects, and a combination rule:

    * ``"additive"`` — Y_i(S) = Y_i(0) + Σ_{s∈S} τ_i(s)
    * ``"nearest"``  — Y_i(S) = Y_i(0) + τ_i(nearest realized s)
    * ``"table"``    — explicit lookup keyed by (region, realized set)
    """

    study: Study
    baseline: Mapping[str, float]
    effects: Mapping[tuple[str, str], float]
    rule: str = "additive"
    table: Mapping[tuple[str, frozenset[str]], Mapping[str, float]] | None = None

    def __post_init__(self) -> None:
        if self.rule not in COMBINATION_RULES:
            raise ValidationError(f"unknown combination rule {self.rule!r}")
        if self.rule == "table" and self.table is None:
            raise ValidationError("table rule needs a lookup table")
        missing = [i.id for i in self.study.individuals if i.id not in self.baseline]
        if missing:
            raise ValidationError(f"baseline missing for individuals: {missing}")
        for (ind_id, loc_id) in self.effects:
            i = self.study.individual(ind_id)
            s = self.study.location(loc_id)
            if i.region != s.region:
                raise ValidationError(
                    f"effect for cross-region pair ({ind_id!r}, {loc_id!r})"
                )
        if self.rule == "nearest":
            self._check_tie_consistency()

    def _check_tie_consistency(self) -> None:
        # Under the nearest-location rule, equidistant locations must carry
        # the same effect for the individual, otherwise the rule is ambiguous.
        for i in self.study.individuals:
            by_dist: dict[float, set[float]] = {}
            for s in self.study.locations_in(i.region):
                d = self.study.distance(s.id, i.id)
                by_dist.setdefault(d, set()).add(self.effect(i.id, s.id))
            for d, values in by_dist.items():
                if len(values) > 1:
                    raise ValidationError(
                        f"individual {i.id!r}: equidistant locations at {d} "
                        "carry different effects under the nearest-location rule"
                    )

    def effect(self, ind_id: str, loc_id: str) -> float:
        """Single-location effect τ_i(s) = Y_i({s}) − Y_i(0)."""
        if self.rule == "table":
            return self.potential_outcome(ind_id, frozenset({loc_id})) - self.baseline[ind_id]
        return self.effects.get((ind_id, loc_id), 0.0)

    def potential_outcome(self, ind_id: str, realized: frozenset[str]) -> float:
        """Y_i(S) for the realized set S of the individual's region."""
        base = self.baseline[ind_id]
        region = self.study.individual(ind_id).region
        in_region = realized & set(s.id for s in self.study.locations_in(region))
        if self.rule == "table":
            key = (region, frozenset(in_region))
            assert self.table is not None
            try:
                return self.table[key][ind_id]
            except KeyError:
                raise IncompleteOracleError(
                    f"outcome table missing entry for region {region!r}, "
                    f"set {sorted(in_region)}, individual {ind_id!r}"
                ) from None
        if not in_region:
            return base
        if self.rule == "additive":
            return base + math.fsum(
                self.effects.get((ind_id, s), 0.0) for s in sorted(in_region)
            )
        nearest = min(
            sorted(in_region), key=lambda s: self.study.distance(s, ind_id)
        )
        return base + self.effects.get((ind_id, nearest), 0.0)


def make_synthetic_study(
    skeleton: Study,
    baseline: Mapping[str, float],
    effects: Mapping[tuple[str, str], float],
    rule: str = "additive",
    table: Mapping[tuple[str, frozenset[str]], Mapping[str, float]] | None = None,
) -> SyntheticStudy:
    """Build a synthetic study, realizing outcomes at the skeleton's assignment."""
    synthetic = SyntheticStudy(skeleton, dict(baseline), dict(effects), rule, table)
    realized = realize_outcomes(synthetic, skeleton.assignment)
    return replace(synthetic, study=realized)


def realize_outcomes(synthetic: SyntheticStudy, assignment: Assignment) -> Study:
    """The study observed under ``assignment``: Y_i = Y_i(ξ_{j(i)})."""
    validate_assignment(synthetic.study.design, assignment)
    outcomes = {
        i.id: synthetic.potential_outcome(i.id, assignment.xi(i.region))
        for i in synthetic.study.individuals
    }
    return synthetic.study.with_outcomes(outcomes, assignment=assignment)


# ---------------------------------------------------------------------------
# File loading
# ---------------------------------------------------------------------------

_RESERVED_INDIVIDUAL = ("id", "region", "x", "y", "outcome", "pre_outcome")
_RESERVED_LOCATION = ("id", "region", "x", "y", "treated", "g", "pi")


def parse_config(source: Mapping[str, str] | str | Path) -> dict[str, str]:
    """Parse a ``key = value`` config file (or pass a mapping through)."""
    if isinstance(source, Mapping):
        return {str(k): str(v) for k, v in source.items()}
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    config: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        config[key.strip()] = value.strip()
    return config


def _metric_from_config(config: Mapping[str, str]) -> DistanceMetric:
    name = config.get("metric", "euclidean").strip().lower()
    if name == "euclidean":
        return Euclidean()
    if name in ("great-circle", "great_circle", "haversine"):
        return GreatCircle()
    if name in ("cluster", "cluster-membership"):
        return ClusterMembership()
    raise ConfigError(f"unknown metric {name!r}")


def _parse_float(value: str, where: str) -> float:
    try:
        parsed = float(value)
    except ValueError:
        raise ParseError(f"{where}: cannot parse {value!r} as a number") from None
    if math.isnan(parsed):
        raise ParseError(f"{where}: value is NaN")
    return parsed


def _read_rows(path: str | Path, required: tuple[str, ...]) -> list[dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: missing header row")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: missing required columns {missing}")
        return [dict(row) for row in reader]


def _load_individuals(path: str | Path) -> list[Individual]:
    rows = _read_rows(path, ("id", "region", "x", "y", "outcome"))
    individuals = []
    for n, row in enumerate(rows, 2):  # header is line 1
        where = f"{path} row {n}"
        covariates = {
            k: _parse_float(v, f"{where} column {k!r}")
            for k, v in row.items()
            if k not in _RESERVED_INDIVIDUAL and v not in (None, "")
        }
        pre = row.get("pre_outcome")
        individuals.append(
            Individual(
                id=row["id"].strip(),
                region=row["region"].strip(),
                location=Location(
                    _parse_float(row["x"], f"{where} column 'x'"),
                    _parse_float(row["y"], f"{where} column 'y'"),
                ),
                outcome=_parse_float(row["outcome"], f"{where} column 'outcome'"),
                pre_outcome=None if pre in (None, "") else _parse_float(pre, f"{where} column 'pre_outcome'"),
                covariates=covariates,
            )
        )
    return individuals


def _load_locations(
    path: str | Path,
) -> tuple[list[CandidateLocation], dict[tuple[str, str], float], dict[tuple[str, str], float]]:
    rows = _read_rows(path, ("id", "region", "x", "y"))
    locations: list[CandidateLocation] = []
    g_values: dict[tuple[str, str], float] = {}
    pi_values: dict[tuple[str, str], float] = {}
    for n, row in enumerate(rows, 2):
        where = f"{path} row {n}"
        covariates = {
            k: _parse_float(v, f"{where} column {k!r}")
            for k, v in row.items()
            if k not in _RESERVED_LOCATION and v not in (None, "")
        }
        loc_id = row["id"].strip()
        region = row["region"].strip()
        treated_raw = row.get("treated")
        treated = None
        if treated_raw not in (None, ""):
            if treated_raw.strip() not in ("0", "1"):
                raise ParseError(f"{where}: treated flag must be 0 or 1, got {treated_raw!r}")
            treated = treated_raw.strip() == "1"
        if row.get("g") not in (None, ""):
            g_values[(region, loc_id)] = _parse_float(row["g"], f"{where} column 'g'")
        if row.get("pi") not in (None, ""):
            pi_values[(region, loc_id)] = _parse_float(row["pi"], f"{where} column 'pi'")
        locations.append(
            CandidateLocation(
                id=loc_id,
                region=region,
                location=Location(
                    _parse_float(row["x"], f"{where} column 'x'"),
                    _parse_float(row["y"], f"{where} column 'y'"),
                ),
                treated=treated,
                covariates=covariates,
            )
        )
    return locations, g_values, pi_values


def load_study(
    individuals_path: str | Path,
    locations_path: str | Path,
    config: Mapping[str, str] | str | Path,
) -> Study:
    """Load and validate a study from delimited-text files.

    The individuals file needs columns ``id,region,x,y,outcome`` (optional
    ``pre_outcome``, further columns are covariates). The locations file
    needs ``id,region,x,y`` (optional ``treated``, ``g``, ``pi``; further
    columns are covariates). The config selects design and metric.
    """
    cfg = parse_config(config)
    individuals = _load_individuals(individuals_path)
    locations, g_values, pi_values = _load_locations(locations_path)
    region_locations: dict[str, tuple[str, ...]] = {}
    for s in locations:
        region_locations.setdefault(s.region, ())
        region_locations[s.region] = region_locations[s.region] + (s.id,)
    design = design_from_config(cfg, region_locations, g_values, pi_values)
    realized: dict[str, set[str]] = {j: set() for j in region_locations}
    for s in locations:
        if s.treated:
            realized[s.region].add(s.id)
    assignment = Assignment({j: frozenset(v) for j, v in realized.items()})
    return Study(
        tuple(individuals), tuple(locations), design, assignment, _metric_from_config(cfg)
    )


def load_synthetic_study(
    individuals_path: str | Path,
    locations_path: str | Path,
    effects_path: str | Path,
    config: Mapping[str, str] | str | Path,
) -> SyntheticStudy:
    """Load a synthetic study; the individuals' outcome column is the baseline.

    Effects come from a third file with header ``individual,location,effect``;
    the config key ``rule`` selects ``additive`` (default) or ``nearest``.
    """
    cfg = parse_config(config)
    skeleton = load_study(individuals_path, locations_path, cfg)
    rows = _read_rows(effects_path, ("individual", "location", "effect"))
    effects: dict[tuple[str, str], float] = {}
    for n, row in enumerate(rows, 2):
        where = f"{effects_path} row {n}"
        key = (row["individual"].strip(), row["location"].strip())
        if key in effects:
            raise DuplicateIdError(f"{where}: duplicate effect entry for {key}")
        effects[key] = _parse_float(row["effect"], f"{where} column 'effect'")
    baseline = {i.id: i.outcome for i in skeleton.individuals}
    rule = cfg.get("rule", "additive").strip().lower()
    return make_synthetic_study(skeleton, baseline, effects, rule=rule)


# ---------------------------------------------------------------------------
# File writing (simulation output, proposals)
# ---------------------------------------------------------------------------


def save_individuals_csv(
    individuals: tuple[Individual, ...], path: str | Path, covariate_names: tuple[str, ...] = ()
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        has_pre = any(i.pre_outcome is not None for i in individuals)
        header = ["id", "region", "x", "y", "outcome"]
        if has_pre:
            header.append("pre_outcome")
        header.extend(covariate_names)
        writer.writerow(header)
        for i in individuals:
            row = [i.id, i.region, repr(i.location.x), repr(i.location.y), repr(i.outcome)]
            if has_pre:
                row.append("" if i.pre_outcome is None else repr(i.pre_outcome))
            row.extend(repr(i.covariates[name]) for name in covariate_names)
            writer.writerow(row)


def save_locations_csv(
    locations: tuple[CandidateLocation, ...],
    path: str | Path,
    g_values: Mapping[tuple[str, str], float] | None = None,
    pi_values: Mapping[tuple[str, str], float] | None = None,
    covariate_names: tuple[str, ...] = (),
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        header = ["id", "region", "x", "y", "treated"]
        if g_values:
            header.append("g")
        if pi_values:
            header.append("pi")
        header.extend(covariate_names)
        writer.writerow(header)
        for s in locations:
            row = [
                s.id,
                s.region,
                repr(s.location.x),
                repr(s.location.y),
                "" if s.treated is None else ("1" if s.treated else "0"),
            ]
            if g_values:
                row.append(repr(g_values.get((s.region, s.id), 0.0)))
            if pi_values:
                row.append(repr(pi_values.get((s.region, s.id), 0.0)))
            row.extend(repr(s.covariates[name]) for name in covariate_names)
            writer.writerow(row)


def save_effects_csv(
    effects: Mapping[tuple[str, str], float], path: str | Path
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["individual", "location", "effect"])
        for (ind_id, loc_id), value in sorted(effects.items()):
            writer.writerow([ind_id, loc_id, repr(value)])
