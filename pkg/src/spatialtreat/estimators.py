"""Nonparametric point estimators for treatment effects at a distance.

The workhorse is :func:`tau_w`: a difference of two inverse-probability
weighted (Hajek) averages, one over individuals exposed to a realized
treatment location and one over individuals in control regions.  The
built-in ATT and ATT-eq estimators are `tau_w` under the corresponding
weight tables; `treated_mean`/`control_mean` are its two arms under ATT
weights.

For synthetic data with known potential outcomes the module also builds
the *demeaned* estimator, which centers each arm at the estimand's true
arm mean.  It is exactly unbiased over the assignment distribution and
is the reference point for the exact variance formulas.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path

from .data import Study, SyntheticStudy
from .design import conditional_location_prob, region_pi, require_single_location
from .errors import (
    ConfigError,
    EmptyNeighborhoodError,
    EmptyRingError,
    MissingPreOutcomeError,
    NoControlUnitsError,
    NoIsolatedLocationsError,
    NoTreatedUnitsError,
    ValidationError,
    ZeroWeightError,
)
from .weighting import (
    SupportsContains,
    WeightTable,
    att_eq_weights,
    att_weights,
    check_overlap,
)


def _arm_totals(study: Study, weights: WeightTable) -> tuple[float, float, float, float]:
    """Realized weighted sums: (treated Σwι y, Σwι, control Σwι y, Σwι)."""
    t_num: list[float] = []
    t_den: list[float] = []
    c_num: list[float] = []
    c_den: list[float] = []
    for (ind_id, loc_id), w in weights.weights.items():
        if w == 0.0:
            continue
        i = study.individual(ind_id)
        region = i.region
        pi = region_pi(study.design, region)
        if study.treated(region):
            if loc_id in study.xi(region):
                g = conditional_location_prob(study.design, region, loc_id)
                iota = 1.0 / (g * pi)
                t_num.append(w * iota * i.outcome)
                t_den.append(w * iota)
        else:
            iota = 1.0 / (1.0 - pi)
            c_num.append(w * iota * i.outcome)
            c_den.append(w * iota)
    return math.fsum(t_num), math.fsum(t_den), math.fsum(c_num), math.fsum(c_den)


def tau_w(study: Study, weights: WeightTable) -> float:
    """General weighted estimator: difference of per-arm Hajek averages.

    Each (individual, location) pair enters the treated arm with the
    stochastic weight 1{s ∈ ξ}·W/(g π) and the control arm with
    (1−W)/(1−π), both scaled by w_i(s); each arm is normalized by its
    realized total weight.
    """
    if weights.total == 0.0 and not any(weights.weights.values()):
        raise ZeroWeightError(f"weight table {weights.label!r} is empty")
    check_overlap(study, weights)
    t_num, t_den, c_num, c_den = _arm_totals(study, weights)
    if t_den == 0.0:
        raise NoTreatedUnitsError(
            f"no realized treated weight under scheme {weights.label!r}"
        )
    if c_den == 0.0:
        raise NoControlUnitsError(
            f"no realized control weight under scheme {weights.label!r}"
        )
    return t_num / t_den - c_num / c_den


def treated_mean(study: Study, bin_: SupportsContains) -> float:
    """Plain average outcome of individuals in the bin of a realized location."""
    values = []
    for region in study.regions:
        if not study.treated(region):
            continue
        for loc_id in sorted(study.xi(region)):
            for i in study.individuals_in(region):
                if bin_.contains(study.distance(loc_id, i.id)):
                    values.append(i.outcome)
    if not values:
        raise NoTreatedUnitsError(f"no treated individuals in bin {bin_}")
    return math.fsum(values) / len(values)


def control_mean(study: Study, bin_: SupportsContains) -> float:
    """Control analog: individuals in control regions, weighted πg/(1−π) per in-bin candidate location."""
    num = []
    den = []
    for region in study.regions:
        if study.treated(region):
            continue
        pi = region_pi(study.design, region)
        base = pi / (1.0 - pi)
        for s in study.locations_in(region):
            g = conditional_location_prob(study.design, region, s.id)
            for i in study.individuals_in(region):
                if bin_.contains(study.distance(s.id, i.id)):
                    num.append(base * g * i.outcome)
                    den.append(base * g)
    total = math.fsum(den)
    if total == 0.0:
        raise NoControlUnitsError(f"no control weight in bin {bin_}")
    return math.fsum(num) / total


def tau_att(study: Study, bin_: SupportsContains) -> float:
    """ATT estimator at the bin: tau_w under exposure-probability weights."""
    return tau_w(study, att_weights(study, bin_))


def tau_att_eq(study: Study, bin_: SupportsContains) -> float:
    """ATT-eq estimator at the bin: tau_w under per-location-equalized weights."""
    return tau_w(study, att_eq_weights(study, bin_))


# ---------------------------------------------------------------------------
# Estimands and the demeaned (exactly unbiased) estimator
# ---------------------------------------------------------------------------


def arm_means(synthetic: SyntheticStudy, weights: WeightTable) -> tuple[float, float]:
    """True weighted arm means (μ_t, μ_c) of the estimand.

    μ_t averages single-location potential outcomes Y_i(s), μ_c averages
    baselines Y_i(0), both with weights w_i(s)/D.
    """
    total = weights.total
    if total == 0.0:
        raise ZeroWeightError("estimand undefined: total weight is zero")
    t_terms = []
    c_terms = []
    for (ind_id, loc_id), w in weights.weights.items():
        if w == 0.0:
            continue
        t_terms.append(w * synthetic.potential_outcome(ind_id, frozenset({loc_id})))
        c_terms.append(w * synthetic.baseline[ind_id])
    return math.fsum(t_terms) / total, math.fsum(c_terms) / total


def tau_w_estimand(synthetic: SyntheticStudy, weights: WeightTable) -> float:
    """The target τ_w = Σ w_i(s)·(Y_i(s) − Y_i(0)) / Σ w_i(s)."""
    mu_t, mu_c = arm_means(synthetic, weights)
    return mu_t - mu_c




@dataclass(frozen=True)
class DemeanedEstimator:
    """Exactly unbiased estimator built around the true arm means.

    τ̃ = (μ_t − μ_c)
        + (1/D) Σ_j (W_j/π_j) Σ_{s∈ξ_j} (1/g_j(s)) Σ_i w_i(s)·(Y_i − μ_t)
        − (1/D) Σ_j ((1−W_j)/(1−π_j)) Σ_s Σ_i w_i(s)·(Y_i − μ_c)

    Both correction terms have expectation zero under the design, so the
    estimator's mean is the estimand itself and its exact variance is
    available in closed form.
    """

    weights: WeightTable
    mu_t: float
    mu_c: float

    @property
    def estimand(self) -> float:
        return self.mu_t - self.mu_c

    def tau(self, study: Study) -> float:
        total = self.weights.total
        t_terms = []
        c_terms = []
        for (ind_id, loc_id), w in self.weights.weights.items():
            if w == 0.0:
                continue
            i = study.individual(ind_id)
            region = i.region
            pi = region_pi(study.design, region)
            if study.treated(region):
                if loc_id in study.xi(region):
                    g = conditional_location_prob(study.design, region, loc_id)
                    t_terms.append(w * (i.outcome - self.mu_t) / (pi * g))
            else:
                c_terms.append(w * (i.outcome - self.mu_c) / (1.0 - pi))
        return self.estimand + (math.fsum(t_terms) - math.fsum(c_terms)) / total


def make_demeaned_estimator(
    synthetic: SyntheticStudy, weights: WeightTable
) -> DemeanedEstimator:
    """Center the weighted estimator at the true arm means of ``synthetic``."""
    require_single_location(synthetic.study.design, "the demeaned estimator")
    check_overlap(synthetic.study, weights)
    mu_t, mu_c = arm_means(synthetic, weights)
    return DemeanedEstimator(weights=weights, mu_t=mu_t, mu_c=mu_c)


# ---------------------------------------------------------------------------
# Panel differencing
# ---------------------------------------------------------------------------


def difference_outcomes(study: Study) -> Study:
    """Replace each outcome by its post-minus-pre difference."""
    missing = [i.id for i in study.individuals if i.pre_outcome is None]
    if missing:
        raise MissingPreOutcomeError(
            f"individuals without pre-period outcomes: {missing[:5]}"
            f"{'...' if len(missing) > 5 else ''}"
        )
    outcomes = {i.id: i.outcome - i.pre_outcome for i in study.individuals}  # type: ignore[operator]
    return study.with_outcomes(outcomes)


def with_pre_proxy(study: Study, radius: float) -> Study:
    """Impute each individual's pre-period outcome from nearby individuals.

    The proxy is the unweighted mean of pre-period outcomes of *other*
    individuals within ``radius`` (any region — pre-period outcomes carry
    no treatment exposure), so it never uses the individual's own pre
    value, the assignment, or post outcomes.
    """
    if radius <= 0:
        raise ValidationError("proxy radius must be positive")
    new_pre: dict[str, float] = {}
    for i in study.individuals:
        values = [
            other.pre_outcome
            for other in study.individuals
            if other.id != i.id
            and other.pre_outcome is not None
            and study.metric.distance(i.location, other.location) <= radius
        ]
        if not values:
            raise EmptyNeighborhoodError(
                f"individual {i.id!r} has no neighbors with pre-period "
                f"outcomes within radius {radius}"
            )
        new_pre[i.id] = math.fsum(values) / len(values)
    individuals = tuple(
        replace(i, pre_outcome=new_pre[i.id]) for i in study.individuals
    )
    return Study(individuals, study.locations, study.design, study.assignment, study.metric)


# ---------------------------------------------------------------------------
# Inner-vs-outer ring contrast around isolated realized locations
# ---------------------------------------------------------------------------

RING_WEIGHTINGS = ("pooled", "per-location-fixed-effect", "equal-per-location")


def inner_outer_ring(
    study: Study,
    inner: SupportsContains,
    outer: SupportsContains,
    isolation: float,
    weighting: str = "pooled",
) -> float:
    """Difference between inner-ring and outer-ring outcomes at isolated locations.

    Only realized treatment locations whose nearest *other* realized
    location (in any region) is farther than ``isolation`` enter, so the
    outer ring is plausibly unaffected.  ``weighting`` picks how
    locations pool: ``"pooled"`` compares the two pooled means,
    ``"per-location-fixed-effect"`` matches each location's outer mass to
    its share of inner individuals, ``"equal-per-location"`` averages the
    per-location contrasts.
    """
    if weighting not in RING_WEIGHTINGS:
        raise ConfigError(f"unknown ring weighting {weighting!r}")
    realized = [
        (region, loc_id)
        for region in study.regions
        if study.treated(region)
        for loc_id in sorted(study.xi(region))
    ]
    if not realized:
        raise NoTreatedUnitsError("no realized treatment locations")
    isolated: list[tuple[str, str]] = []
    for region, loc_id in realized:
        here = study.location(loc_id).location
        nearest_other = min(
            (
                study.metric.distance(here, study.location(other).location)
                for other_region, other in realized
                if (other_region, other) != (region, loc_id)
            ),
            default=math.inf,
        )
        if nearest_other > isolation:
            isolated.append((region, loc_id))
    if not isolated:
        raise NoIsolatedLocationsError(
            f"no realized location is farther than {isolation} from every other"
        )

    inner_rings: dict[str, list[float]] = {}
    outer_rings: dict[str, list[float]] = {}
    for region, loc_id in isolated:
        inner_rings[loc_id] = [
            i.outcome
            for i in study.individuals_in(region)
            if inner.contains(study.distance(loc_id, i.id))
        ]
        outer_rings[loc_id] = [
            i.outcome
            for i in study.individuals_in(region)
            if outer.contains(study.distance(loc_id, i.id))
        ]

    if weighting == "pooled":
        inner_all = [y for ys in inner_rings.values() for y in ys]
        outer_all = [y for ys in outer_rings.values() for y in ys]
        if not inner_all:
            raise EmptyRingError("inner ring is empty at every isolated location")
        if not outer_all:
            raise EmptyRingError("outer ring is empty at every isolated location")
        return math.fsum(inner_all) / len(inner_all) - math.fsum(outer_all) / len(outer_all)

    if weighting == "per-location-fixed-effect":
        n_inner = {s: len(ys) for s, ys in inner_rings.items()}
        total_inner = sum(n_inner.values())
        if total_inner == 0:
            raise EmptyRingError("inner ring is empty at every isolated location")
        contrasts = []
        for _region, loc_id in isolated:
            share = n_inner[loc_id] / total_inner
            if share == 0.0:
                continue
            if not outer_rings[loc_id]:
                raise EmptyRingError(f"outer ring is empty at location {loc_id!r}")
            mean_in = math.fsum(inner_rings[loc_id]) / len(inner_rings[loc_id])
            mean_out = math.fsum(outer_rings[loc_id]) / len(outer_rings[loc_id])
            contrasts.append(share * (mean_in - mean_out))
        return math.fsum(contrasts)

    contrasts = []
    for _region, loc_id in isolated:
        if not inner_rings[loc_id]:
            raise EmptyRingError(f"inner ring is empty at location {loc_id!r}")
        if not outer_rings[loc_id]:
            raise EmptyRingError(f"outer ring is empty at location {loc_id!r}")
        mean_in = math.fsum(inner_rings[loc_id]) / len(inner_rings[loc_id])
        mean_out = math.fsum(outer_rings[loc_id]) / len(outer_rings[loc_id])
        contrasts.append(mean_in - mean_out)
    return math.fsum(contrasts) / len(contrasts)


# ---------------------------------------------------------------------------
# Effect curves over a set of bins
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinEstimate:
    """One bin of an effect curve."""

    center: float
    half_width: float
    estimate: float
    treated_mean: float
    control_mean: float
    treated_n: float
    control_n: float
    variance: float | None = None

    @property
    def se(self) -> float | None:
        return None if self.variance is None else math.sqrt(self.variance)


@dataclass(frozen=True)
class EffectCurve:
    """Ordered per-bin estimates; bins must not overlap as half-open intervals."""

    bins: tuple[BinEstimate, ...]

    def __post_init__(self) -> None:
        ordered = sorted(self.bins, key=lambda b: b.center)
        for a, b in zip(ordered, ordered[1:]):
            if a.center + a.half_width > b.center - b.half_width + 1e-12:
                raise ValidationError(
                    f"bins centered at {a.center} and {b.center} overlap"
                )
        object.__setattr__(self, "bins", tuple(ordered))

    def to_csv_text(self) -> str:
        lines = ["d_center,h,estimate,se,treated_n,control_n"]
        for b in self.bins:
            se = "" if b.se is None else repr(b.se)
            lines.append(
                f"{b.center!r},{b.half_width!r},{b.estimate!r},{se},"
                f"{b.treated_n!r},{b.control_n!r}"
            )
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8")


def effect_curve(
    study: Study,
    bins: Sequence,
    scheme: str = "att",
    variance_fn: Callable[[Study, WeightTable], float] | None = None,
) -> EffectCurve:
    """Estimate the effect in each bin and assemble the curve.

    ``bins`` is any sequence of objects with ``center``, ``half_width``
    and ``contains``; ``scheme`` is ``"att"`` or ``"att-eq"``.  When
    ``variance_fn`` is given it is called per bin with the study and the
    bin's weight table and its value becomes the bin's variance.
    """
    if scheme not in ("att", "att-eq"):
        raise ConfigError(f"unknown weighting scheme {scheme!r}")
    build = att_weights if scheme == "att" else att_eq_weights
    estimates = []
    for bin_ in bins:
        table = build(study, bin_)
        check_overlap(study, table)
        t_num, t_den, c_num, c_den = _arm_totals(study, table)
        if t_den == 0.0:
            raise NoTreatedUnitsError(
                f"no realized treated weight in bin centered at {bin_.center}"
            )
        if c_den == 0.0:
            raise NoControlUnitsError(
                f"no realized control weight in bin centered at {bin_.center}"
            )
        variance = None if variance_fn is None else variance_fn(study, table)
        estimates.append(
            BinEstimate(
                center=bin_.center,
                half_width=bin_.half_width,
                estimate=t_num / t_den - c_num / c_den,
                treated_mean=t_num / t_den,
                control_mean=c_num / c_den,
                treated_n=t_den,
                control_n=c_den,
                variance=variance,
            )
        )
    return EffectCurve(tuple(estimates))
