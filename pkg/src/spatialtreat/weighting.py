"""Weight schemes over (individual, candidate location) pairs.

Estimands at distance d average single-location effects τ_i(s) with
nonnegative weights w_i(s).  Two built-in schemes:

* ATT weights        w_i(s) = π_j · g_j(s) · 1{d(s, r_i) ∈ bin} — each
  *exposed individual* counts in proportion to how likely its exposure
  was, so locations with many nearby individuals dominate.
* ATT-eq weights     divide the ATT weight at (j, s) by the number of
  in-bin individuals there, so each *location* counts equally no matter
  how many individuals sit in its ring.

Both sum over individuals to π_j g_j(s) at every location that has at
least one in-bin individual, which is what makes inverse-probability
estimators of these estimands unbiased.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

from .data import Study
from .design import conditional_location_prob, region_pi
from .errors import NegativeWeightError, OverlapError, ValidationError


class SupportsContains:
    """Anything with ``contains(distance) -> bool`` can act as a bin."""

    def contains(self, distance: float) -> bool:  # pragma: no cover - protocol
        raise NotImplementedError


@dataclass(frozen=True)
class WeightTable:
    """Weights w_i(s) on within-region (individual, location) pairs.

    Pairs absent from ``weights`` carry weight zero.  ``empty_locations``
    lists (region, location) pairs that a bin-based scheme skipped because
    no individual fell in the bin there — those locations drop out of the
    estimand, which is worth surfacing.
    """

    weights: Mapping[tuple[str, str], float]
    label: str = "custom"
    empty_locations: tuple[tuple[str, str], ...] = field(default=())

    def get(self, ind_id: str, loc_id: str) -> float:
        return self.weights.get((ind_id, loc_id), 0.0)

    @property
    def total(self) -> float:
        """D = Σ_i Σ_s w_i(s), the estimand's normalization."""
        return math.fsum(self.weights.values())

    def nonzero(self) -> tuple[tuple[str, str], ...]:
        return tuple(sorted(k for k, v in self.weights.items() if v != 0.0))


def check_overlap(study: Study, weights: WeightTable) -> None:
    """Weights must only touch pairs observable in both arms.

    Rejects weight on regions that are always or never treated, and on
    locations with zero assignment probability — in either case one arm
    of the weighted contrast can never be observed.
    """
    seen_regions: set[str] = set()
    for (ind_id, loc_id), w in sorted(weights.weights.items()):
        if w == 0.0:
            continue
        region = study.individual(ind_id).region
        if region not in seen_regions:
            seen_regions.add(region)
            pi = region_pi(study.design, region)
            if not 0.0 < pi < 1.0:
                raise OverlapError(
                    f"region {region!r} has treatment probability {pi}; weighted "
                    "pairs there can never be observed in both arms"
                )
        if conditional_location_prob(study.design, region, loc_id) == 0.0:
            raise OverlapError(
                f"location {loc_id!r} has zero assignment probability but "
                f"carries weight on individual {ind_id!r}"
            )


def scheme_weights(study: Study, scheme: str, bin_: SupportsContains) -> WeightTable:
    """Resolve a scheme name (``"att"`` or ``"att-eq"``) to its weight table."""
    if scheme == "att":
        return att_weights(study, bin_)
    if scheme == "att-eq":
        return att_eq_weights(study, bin_)
    raise ValidationError(f"unknown weighting scheme {scheme!r}")


def in_bin_counts(study: Study, bin_: SupportsContains) -> dict[tuple[str, str], int]:
    """Number of individuals of region j within the bin of location s."""
    counts: dict[tuple[str, str], int] = {}
    for region in study.regions:
        for s in study.locations_in(region):
            counts[(region, s.id)] = sum(
                1
                for i in study.individuals_in(region)
                if bin_.contains(study.distance(s.id, i.id))
            )
    return counts


def att_weights(study: Study, bin_: SupportsContains) -> WeightTable:
    """w_i(s) = π_j g_j(s) for in-bin pairs: individuals weighted by exposure probability."""
    weights: dict[tuple[str, str], float] = {}
    empty: list[tuple[str, str]] = []
    for region in study.regions:
        pi = region_pi(study.design, region)
        for s in study.locations_in(region):
            g = conditional_location_prob(study.design, region, s.id)
            hit = False
            for i in study.individuals_in(region):
                if bin_.contains(study.distance(s.id, i.id)):
                    weights[(i.id, s.id)] = pi * g
                    hit = True
            if not hit:
                empty.append((region, s.id))
    return WeightTable(weights, label="att", empty_locations=tuple(sorted(empty)))


def att_eq_weights(study: Study, bin_: SupportsContains) -> WeightTable:
    """ATT weights divided by the in-bin count, so each location counts once."""
    counts = in_bin_counts(study, bin_)
    weights: dict[tuple[str, str], float] = {}
    empty: list[tuple[str, str]] = []
    for region in study.regions:
        pi = region_pi(study.design, region)
        for s in study.locations_in(region):
            n = counts[(region, s.id)]
            if n == 0:
                empty.append((region, s.id))
                continue
            g = conditional_location_prob(study.design, region, s.id)
            for i in study.individuals_in(region):
                if bin_.contains(study.distance(s.id, i.id)):
                    weights[(i.id, s.id)] = pi * g / n
    return WeightTable(weights, label="att-eq", empty_locations=tuple(sorted(empty)))


def custom_weights(
    study: Study,
    weights: Mapping[tuple[str, str], float] | Callable[[str, str, float], float],
    allow_negative: bool = False,
    label: str = "custom",
) -> WeightTable:
    """Validate user-supplied weights against the study.

    A mapping must key on existing within-region (individual, location)
    pairs; a callable is evaluated as ``f(ind_id, loc_id, distance)`` on
    every within-region pair.  Negative weights are rejected unless
    explicitly allowed — the estimators' unbiasedness does not need
    nonnegativity, but a sign slip in a weight rule usually is a bug.
    """
    table: dict[tuple[str, str], float] = {}
    if callable(weights):
        for region in study.regions:
            for s in study.locations_in(region):
                for i in study.individuals_in(region):
                    value = float(weights(i.id, s.id, study.distance(s.id, i.id)))
                    if value != 0.0:
                        table[(i.id, s.id)] = value
    else:
        for (ind_id, loc_id), value in weights.items():
            i = study.individual(ind_id)
            s = study.location(loc_id)
            if i.region != s.region:
                raise ValidationError(
                    f"weight on cross-region pair ({ind_id!r}, {loc_id!r})"
                )
            table[(ind_id, loc_id)] = float(value)
    if not allow_negative:
        bad = sorted(k for k, v in table.items() if v < 0)
        if bad:
            raise NegativeWeightError(
                f"negative weights on pairs {bad[:5]}{'...' if len(bad) > 5 else ''}; "
                "pass allow_negative=True if intended"
            )
    return WeightTable(table, label=label)
