"""Estimators that stay valid when several locations realize per region.

With more than one realized location in a region, an individual's outcome
mixes the effects of all of them, so per-location effects need an
assumption to be separable: either effects add across realized locations,
or only the nearest realized location matters.  A third estimator handles
the single-region setting where locations are treated independently and
the contrast of interest is the marginal effect of one more location.
"""

from __future__ import annotations

from math import comb, fsum

from .data import Study
from .design import (
    FixedK,
    IndependentLocations,
    marginal_prob,
    region_pi,
)
from .errors import (
    EstimandNotIdentifiedError,
    NoControlUnitsError,
    NoTreatedUnitsError,
    OverlapError,
    UnsupportedDesignError,
    ZeroWeightError,
)
from .weighting import SupportsContains, WeightTable, scheme_weights


class UndefinedEffect:
    """Typed value for per-pair effects that no assignment can reveal."""

    _instance: "UndefinedEffect | None" = None

    def __new__(cls) -> "UndefinedEffect":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNDEFINED"


UNDEFINED = UndefinedEffect()


def _fixed_count_law(study: Study, region: str, context: str) -> FixedK:
    law = study.design.law(region)
    if not isinstance(law, FixedK):
        raise UnsupportedDesignError(
            f"{context} requires a fixed equiprobable realized count per "
            f"treated region; region {region!r} uses {type(law).__name__}"
        )
    return law


def _region_pi_strict(study: Study, region: str, context: str) -> float:
    pi = region_pi(study.design, region)
    if not 0.0 < pi < 1.0:
        raise OverlapError(
            f"{context} needs region treatment probability strictly inside "
            f"(0, 1); region {region!r} has {pi}"
        )
    return pi


def tau_additive_unit(study: Study, ind_id: str, loc_id: str) -> float:
    """Unbiased per-pair effect estimate when effects add across realized
    locations.

    Combines three inverse-probability terms: the outcome when ``loc_id``
    is realized, minus the outcome in treated regions where it is not
    (which still carries the other realized effects), minus the control
    outcome, with the middle term weighted so that the other locations'
    effects cancel exactly in expectation.
    """
    ind = study.individual(ind_id)
    region = ind.region
    law = _fixed_count_law(study, region, "the additive-effects estimator")
    n_realized = law.n_treated
    n_candidates = len(law.locations)
    if loc_id not in law.locations:
        raise UnsupportedDesignError(
            f"region {region!r} has no candidate location {loc_id!r}"
        )
    if n_realized == n_candidates and n_candidates > 1:
        raise EstimandNotIdentifiedError(
            f"region {region!r} always realizes all {n_candidates} candidate "
            f"locations; no assignment separates the effect of {loc_id!r}"
        )
    pi = _region_pi_strict(study, region, "the additive-effects estimator")
    # Unbiasedness fixes the split between the treated-but-unrealized and
    # control comparison terms: the former picks up (n_realized - 1) of the
    # n_realized realized-location effects present in the first term.
    a = (n_realized - 1) / n_realized
    y = ind.outcome
    xi = study.xi(region)
    p_in = marginal_prob(study.design, region, loc_id)
    value = (1.0 if loc_id in xi else 0.0) / p_in * y
    if a > 0.0:
        p_out_treated = pi * (1.0 - n_realized / n_candidates)
        hit = 1.0 if (xi and loc_id not in xi) else 0.0
        value -= a * hit / p_out_treated * y
    value -= (1.0 - a) * (0.0 if xi else 1.0) / (1.0 - pi) * y
    return value


def tau_additive(study: Study, bin_: SupportsContains) -> float:
    """Average effect at distance under additive interference: realization-
    probability-weighted mean of the per-pair estimates over in-bin pairs."""
    num = []
    den = []
    for region in study.design.regions:
        for loc in study.locations_in(region):
            weight = marginal_prob(study.design, region, loc.id)
            if weight == 0.0:
                continue
            for ind in study.individuals_in(region):
                if not bin_.contains(study.distance(loc.id, ind.id)):
                    continue
                den.append(weight)
                num.append(weight * tau_additive_unit(study, ind.id, loc.id))
    total = fsum(den)
    if total == 0.0:
        raise ZeroWeightError("no (individual, location) pair in the distance bin")
    return fsum(num) / total


def nearest_event_probability(study: Study, ind_id: str, loc_id: str) -> float:
    """Probability that ``loc_id`` is realized and is weakly nearest to the
    individual among all realized locations (ties count as nearest)."""
    ind = study.individual(ind_id)
    region = ind.region
    law = _fixed_count_law(study, region, "the nearest-location estimator")
    if loc_id not in law.locations:
        raise UnsupportedDesignError(
            f"region {region!r} has no candidate location {loc_id!r}"
        )
    pi = region_pi(study.design, region)
    d_own = study.distance(loc_id, ind.id)
    weakly_farther = sum(
        1
        for other in law.locations
        if other != loc_id and study.distance(other, ind.id) >= d_own
    )
    if weakly_farther < law.n_treated - 1:
        return 0.0
    favorable = comb(weakly_farther, law.n_treated - 1)
    return pi * favorable / comb(len(law.locations), law.n_treated)


def tau_nearest_unit(study: Study, ind_id: str, loc_id: str) -> float | UndefinedEffect:
    """Per-pair effect estimate when only the nearest realized location
    matters.

    Returns the typed ``UNDEFINED`` value when the location is never the
    individual's nearest realized one, in which case no assignment can
    reveal its effect on this individual.
    """
    ind = study.individual(ind_id)
    region = ind.region
    p_event = nearest_event_probability(study, ind_id, loc_id)
    if p_event == 0.0:
        return UNDEFINED
    pi = _region_pi_strict(study, region, "the nearest-location estimator")
    xi = study.xi(region)
    d_own = study.distance(loc_id, ind.id)
    event = loc_id in xi and all(
        study.distance(other, ind.id) >= d_own for other in xi
    )
    y = ind.outcome
    value = (1.0 if event else 0.0) / p_event * y
    value -= (0.0 if xi else 1.0) / (1.0 - pi) * y
    return value


def tau_nearest(
    study: Study,
    weights: WeightTable | str,
    bin_: SupportsContains | None = None,
) -> float:
    """Weighted average of nearest-location per-pair estimates.

    ``weights`` is a weight table, or a scheme name (with ``bin_``) passed
    through the standard weighting constructors.  Every weighted pair must
    have a defined per-pair estimate; pairs whose effect no assignment can
    reveal are reported rather than silently averaged.
    """
    if isinstance(weights, str):
        if bin_ is None:
            raise ZeroWeightError("a distance bin is required with a scheme name")
        weights = scheme_weights(study, weights, bin_)
    pairs = weights.nonzero()
    if not pairs:
        raise ZeroWeightError("the weight table has no nonzero entries")
    values: dict[tuple[str, str], float] = {}
    unidentified: list[tuple[str, str]] = []
    for ind_id, loc_id in pairs:
        value = tau_nearest_unit(study, ind_id, loc_id)
        if isinstance(value, UndefinedEffect):
            unidentified.append((ind_id, loc_id))
        else:
            values[(ind_id, loc_id)] = value
    if unidentified:
        listed = ", ".join(f"({i}, {s})" for i, s in sorted(unidentified))
        raise EstimandNotIdentifiedError(
            f"weights fall on pairs whose effect is never revealed: {listed}; "
            f"restrict the weighting to identified pairs"
        )
    total = fsum(weights.get(i, s) for i, s in pairs)
    return fsum(weights.get(i, s) * values[(i, s)] for i, s in pairs) / total


def tau_single_region(
    study: Study,
    bin_: SupportsContains,
    probabilities: dict[str, float] | None = None,
) -> float:
    """Marginal effect of one more treatment location in a single region
    with independently assigned locations.

    Contrasts the in-bin outcome mean around realized locations with a
    weighted mean around unrealized ones, each unrealized location weighted
    by its assignment odds — the probability ratio between the realized
    assignment with that location added and the realized assignment itself.
    ``probabilities`` substitutes estimated conditional realization
    probabilities for the design's known ones.
    """
    regions = study.design.regions
    if len(regions) != 1:
        raise UnsupportedDesignError(
            f"the marginal-location estimator works on a single region; "
            f"the design has {len(regions)}"
        )
    region = regions[0]
    if probabilities is None:
        law = study.design.law(region)
        if not isinstance(law, IndependentLocations):
            raise UnsupportedDesignError(
                "the marginal-location estimator requires independently "
                "assigned locations (or explicit probabilities)"
            )
        probabilities = dict(law.pi)
    xi = study.xi(region)
    t_num: list[float] = []
    t_den = 0
    c_num: list[float] = []
    c_den: list[float] = []
    for loc in study.locations_in(region):
        in_bin = [
            ind
            for ind in study.individuals_in(region)
            if bin_.contains(study.distance(loc.id, ind.id))
        ]
        if not in_bin:
            continue
        try:
            p = probabilities[loc.id]
        except KeyError:
            raise OverlapError(
                f"no realization probability for location {loc.id!r}"
            ) from None
        if not 0.0 < p < 1.0:
            raise OverlapError(
                f"location {loc.id!r} has realization probability {p} but "
                f"individuals in the bin; its marginal effect has no overlap"
            )
        if loc.id in xi:
            t_den += len(in_bin)
            t_num.extend(ind.outcome for ind in in_bin)
        else:
            odds = p / (1.0 - p)
            c_den.append(odds * len(in_bin))
            c_num.extend(odds * ind.outcome for ind in in_bin)
    if t_den == 0:
        raise NoTreatedUnitsError("no individuals in the bin around realized locations")
    control_total = fsum(c_den)
    if control_total == 0.0:
        raise NoControlUnitsError(
            "no individuals in the bin around unrealized locations"
        )
    return fsum(t_num) / t_den - fsum(c_num) / control_total
