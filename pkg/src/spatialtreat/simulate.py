"""Seed-deterministic synthetic study generation from a small config.

:func:`simulate` draws a complete :class:`~spatialtreat.data.SyntheticStudy`
— regions, candidate locations, individuals, an assignment design, baseline
outcomes, and a distance-decay effect surface — from a flat key-value config.
The same config and seed always produce the same study, so simulated
fixtures are reproducible inputs for the estimators and the enumeration
oracle alike.

Config keys (all optional, defaults in parentheses):

=====================  ===========================================================
``regions`` (4)        number of regions
``locations`` (2)      candidate locations per region
``individuals`` (8)    individuals per region
``extent`` (1.0)       side of the square each region's points are drawn from
``effect`` (1.0)       effect amplitude at distance zero
``decay`` (0.25)       effect decay length: tau_i(s) = effect * exp(-d / decay)
``noise`` (0.5)        standard deviation of baseline outcomes
``across`` (cr)        region-treatment law: ``cr`` or ``bernoulli``
``pi`` (0.5)           region treatment probability (bernoulli across)
``treated_regions``    treated-region count for ``cr`` (default: half, at least 1)
``within`` (single)    within-region law: ``single``, ``fixed``, or ``independent``
``k`` (1)              realized locations per treated region (``fixed``)
``rule`` (additive)    effect combination: ``additive`` or ``nearest``
=====================  ===========================================================

``within: independent`` draws each location independently with probability
``pi`` and requires a single region (no separate region stage).
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

from .data import (
    CandidateLocation,
    Individual,
    Study,
    SyntheticStudy,
    make_synthetic_study,
    parse_config,
)
from .design import (
    BernoulliAcross,
    CompletelyRandomized,
    Design,
    FixedK,
    IndependentLocations,
    SingleLocation,
    sample_assignment,
)
from .errors import ConfigError
from .geometry import Euclidean, Location

__all__ = ["simulate", "SIMULATION_DEFAULTS"]

SIMULATION_DEFAULTS: Mapping[str, str] = {
    "regions": "4",
    "locations": "2",
    "individuals": "8",
    "extent": "1.0",
    "effect": "1.0",
    "decay": "0.25",
    "noise": "0.5",
    "across": "cr",
    "pi": "0.5",
    "within": "single",
    "k": "1",
    "rule": "additive",
}


def _as_int(config: Mapping[str, str], key: str, minimum: int) -> int:
    raw = config[key]
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r} must be an integer, got {raw!r}") from None
    if value < minimum:
        raise ConfigError(f"config key {key!r} must be at least {minimum}, got {value}")
    return value


def _as_float(config: Mapping[str, str], key: str, minimum: float | None = None) -> float:
    raw = config[key]
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r} must be a number, got {raw!r}") from None
    if minimum is not None and value < minimum:
        raise ConfigError(f"config key {key!r} must be at least {minimum}, got {value}")
    return value


def simulate(
    config: Mapping[str, str] | str | Path | None = None,
    seed: int | None = 0,
) -> SyntheticStudy:
    """Draw a synthetic study from ``config`` with a fixed random seed.

    ``config`` may be a mapping, a path to a key-value text file, or None for
    all defaults; unknown keys are rejected so typos fail loudly. Outcomes
    are realized at a freshly sampled assignment from the configured design.
    """
    settings = dict(SIMULATION_DEFAULTS)
    if config is not None:
        parsed = parse_config(config) if not isinstance(config, Mapping) else dict(config)
        parsed.pop("seed", None)
        unknown = set(parsed) - set(SIMULATION_DEFAULTS) - {"treated_regions"}
        if unknown:
            raise ConfigError(
                "unknown config keys: " + ", ".join(sorted(unknown))
            )
        settings.update({k: str(v) for k, v in parsed.items()})

    n_regions = _as_int(settings, "regions", 1)
    n_locations = _as_int(settings, "locations", 1)
    n_individuals = _as_int(settings, "individuals", 1)
    extent = _as_float(settings, "extent", 1e-9)
    effect = _as_float(settings, "effect")
    decay = _as_float(settings, "decay", 1e-9)
    noise = _as_float(settings, "noise", 0.0)
    pi = _as_float(settings, "pi")
    if not 0.0 < pi < 1.0:
        raise ConfigError(f"config key 'pi' must lie in (0, 1), got {pi}")
    rule = settings["rule"]
    if rule not in ("additive", "nearest"):
        raise ConfigError(f"config key 'rule' must be additive or nearest, got {rule!r}")

    rng = np.random.default_rng(seed)
    regions = [f"r{j}" for j in range(1, n_regions + 1)]

    locations: list[CandidateLocation] = []
    individuals: list[Individual] = []
    baseline: dict[str, float] = {}
    effects: dict[tuple[str, str], float] = {}
    within: dict[str, SingleLocation | FixedK | IndependentLocations] = {}

    for region in regions:
        region_locs = []
        for k in range(1, n_locations + 1):
            loc_id = f"{region}s{k}"
            point = Location(*(float(v) * extent for v in rng.random(2)))
            locations.append(CandidateLocation(loc_id, region, point))
            region_locs.append(loc_id)
        within[region] = _within_law(settings, region_locs, pi)
        for k in range(1, n_individuals + 1):
            ind_id = f"{region}i{k}"
            point = Location(*(float(v) * extent for v in rng.random(2)))
            individuals.append(Individual(ind_id, region, point, 0.0))
            baseline[ind_id] = float(rng.normal(0.0, noise)) if noise > 0 else 0.0
            for loc in locations:
                if loc.region != region:
                    continue
                d = Euclidean().distance(point, loc.location)
                effects[(ind_id, loc.id)] = effect * float(np.exp(-d / decay))

    design = Design(_across_law(settings, regions, pi), within)
    assignment = sample_assignment(design, rng)
    skeleton = Study(individuals, locations, design, assignment, Euclidean())
    return make_synthetic_study(skeleton, baseline, effects, rule=rule)


def _within_law(settings: Mapping[str, str], region_locs: list[str], pi: float):
    mode = settings["within"]
    if mode == "single":
        share = 1.0 / len(region_locs)
        return SingleLocation({s: share for s in region_locs})
    if mode == "fixed":
        k = _as_int(settings, "k", 1)
        if k > len(region_locs):
            raise ConfigError(
                f"config key 'k' is {k} but regions have only {len(region_locs)} locations"
            )
        return FixedK(tuple(region_locs), k)
    if mode == "independent":
        return IndependentLocations({s: pi for s in region_locs})
    raise ConfigError(
        f"config key 'within' must be single, fixed, or independent, got {mode!r}"
    )


def _across_law(settings: Mapping[str, str], regions: list[str], pi: float):
    if settings["within"] == "independent":
        if len(regions) != 1:
            raise ConfigError("within=independent requires exactly one region")
        return None
    mode = settings["across"]
    if mode == "cr":
        if len(regions) < 2:
            raise ConfigError("across=cr needs at least 2 regions")
        default_treated = max(1, min(len(regions) - 1, len(regions) // 2))
        treated = (
            _as_int(settings, "treated_regions", 1)
            if "treated_regions" in settings
            else default_treated
        )
        if treated >= len(regions):
            raise ConfigError(
                f"treated_regions must be below the region count {len(regions)}"
            )
        return CompletelyRandomized(len(regions), treated)
    if mode == "bernoulli":
        return BernoulliAcross({r: pi for r in regions})
    raise ConfigError(f"config key 'across' must be cr or bernoulli, got {mode!r}")


