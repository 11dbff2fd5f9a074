"""Aggregate (per-treatment-location) effect estimation.

Region-aggregate outcomes make for noisy effect estimates when region
sizes vary, so alongside the simple region-sum estimator this module
provides the recommended alternative: integrate the per-distance effect
curve against the average number of individuals per distance bin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import fsum
from typing import Mapping

from .data import Study, SyntheticStudy
from .design import region_pi, require_single_location
from .errors import (
    EstimationError,
    NoControlUnitsError,
    NoTreatedUnitsError,
    ValidationError,
)
from .estimators import tau_w
from .variance import cross_bin_covariance, true_variance
from .weighting import WeightTable, att_weights


@dataclass(frozen=True)
class PartitionCell:
    """One bin of a distance partition: ``(lower, upper]``, or ``[lower, upper]``
    for the innermost bin so that distance zero is covered."""

    lower: float
    upper: float
    closed_lower: bool = False

    def __post_init__(self) -> None:
        if not self.lower < self.upper:
            raise ValidationError(
                f"bin bounds must satisfy lower < upper, got [{self.lower}, {self.upper}]"
            )

    @property
    def center(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper - self.lower)

    def contains(self, distance: float) -> bool:
        if self.closed_lower:
            return self.lower <= distance <= self.upper
        return self.lower < distance <= self.upper

    def __str__(self) -> str:
        left = "[" if self.closed_lower else "("
        return f"{left}{self.lower:g}, {self.upper:g}]"


@dataclass(frozen=True)
class BinPartition:
    """Half-open distance bins tiling ``[0, d_max]``.

    ``edges`` must start at 0 and increase strictly; bin *k* is
    ``(edges[k], edges[k+1]]`` except the first, which is closed on the
    left.  Every distance in ``[0, d_max]`` falls in exactly one bin.
    """

    edges: tuple[float, ...]

    def __post_init__(self) -> None:
        edges = tuple(float(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if len(edges) < 2:
            raise ValidationError("a partition needs at least two edges")
        if edges[0] != 0.0:
            raise ValidationError(f"partition must start at 0, got {edges[0]!r}")
        for lo, hi in zip(edges, edges[1:]):
            if not lo < hi:
                raise ValidationError(f"partition edges must increase strictly: {edges!r}")

    @classmethod
    def from_range(cls, low: float, high: float, step: float) -> "BinPartition":
        """Equal-width partition ``low:high:step`` (``low`` must be 0)."""
        if step <= 0:
            raise ValidationError(f"bin width must be positive, got {step!r}")
        if high <= low:
            raise ValidationError(f"need low < high, got {low!r}:{high!r}")
        n = (high - low) / step
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValidationError(
                f"bin width {step!r} does not evenly divide [{low!r}, {high!r}]"
            )
        n = int(round(n))
        edges = [low + k * step for k in range(n)] + [high]
        return cls(tuple(edges))

    @property
    def d_max(self) -> float:
        return self.edges[-1]

    @property
    def bins(self) -> tuple[PartitionCell, ...]:
        return tuple(
            PartitionCell(lo, hi, closed_lower=(k == 0))
            for k, (lo, hi) in enumerate(zip(self.edges, self.edges[1:]))
        )

    def cell_for(self, distance: float) -> PartitionCell | None:
        """The unique bin containing ``distance``, or None beyond ``d_max``."""
        for cell in self.bins:
            if cell.contains(distance):
                return cell
        return None


def region_outcome_sums(study: Study) -> dict[str, float]:
    """Total outcome per region."""
    return {
        region: fsum(ind.outcome for ind in study.individuals_in(region))
        for region in study.design.regions
    }


def tau_aatt1(study: Study) -> float:
    """Region-aggregate effect estimate: mean region-sum outcome among
    treated regions minus the odds-weighted mean among control regions.

    Simple and unbiased under equal treatment probabilities, but its
    variance scales with the dispersion of region sizes even when
    individual outcomes are constant.
    """
    sums = region_outcome_sums(study)
    treated = study.assignment.treated_regions
    t_values = [sums[j] for j in study.design.regions if j in treated]
    if not t_values:
        raise NoTreatedUnitsError("no treated regions")
    c_num = []
    c_den = []
    for j in study.design.regions:
        if j in treated:
            continue
        pi = region_pi(study.design, j)
        odds = pi / (1.0 - pi)
        c_num.append(odds * sums[j])
        c_den.append(odds)
    den = fsum(c_den)
    if den == 0.0:
        raise NoControlUnitsError(
            "no control regions with positive treatment probability"
        )
    return fsum(t_values) / len(t_values) - fsum(c_num) / den


def _cell_count(study: Study, region: str, location_id: str, cell: PartitionCell) -> int:
    return sum(
        1
        for ind in study.individuals_in(region)
        if cell.contains(study.distance(location_id, ind.id))
    )


def n_bar(study: Study, partition: BinPartition, k: int) -> float:
    """Average number of individuals per candidate location in bin ``k``,
    weighted by each location's probability of being the realized treatment."""
    require_single_location(study.design, "bin-count averaging")
    cell = partition.bins[k]
    num = []
    den = []
    for region in study.design.regions:
        pi = region_pi(study.design, region)
        for loc in study.locations_in(region):
            g = study.design.within[region].g[loc.id]
            den.append(pi * g)
            if pi * g > 0.0:
                num.append(pi * g * _cell_count(study, region, loc.id, cell))
    total = fsum(den)
    if total == 0.0:
        raise ValidationError("every candidate location has zero probability")
    return fsum(num) / total


@dataclass(frozen=True)
class AggregateBin:
    """Per-bin ingredients of the curve-integrated aggregate estimate."""

    cell: PartitionCell
    n_bar: float
    tau: float
    weights: WeightTable

    @property
    def contribution(self) -> float:
        return self.n_bar * self.tau


@dataclass(frozen=True)
class AggregateEstimate:
    """Curve-integrated aggregate effect: sum of ``n_bar * tau`` over bins."""

    estimate: float
    bins: tuple[AggregateBin, ...]
    empty_bins: tuple[PartitionCell, ...] = ()
    variance: float | None = None

    @property
    def se(self) -> float | None:
        return None if self.variance is None else self.variance**0.5

    def to_csv_text(self) -> str:
        lines = ["d_center,h,n_bar,tau,contribution"]
        for b in self.bins:
            lines.append(
                f"{b.cell.center!r},{b.cell.half_width!r},{b.n_bar!r},"
                f"{b.tau!r},{b.contribution!r}"
            )
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_csv_text())


def tau_aatt2(
    study: Study,
    partition: BinPartition,
    synthetic: SyntheticStudy | None = None,
) -> AggregateEstimate:
    """Aggregate effect from the per-distance curve: ``sum_k n_bar(k) * tau(k)``.

    Uses the realized-probability-weighted per-bin estimator (the equal-weight
    variant would integrate the wrong effect against the bin counts).  Bins
    that never contain an individual contribute nothing and are skipped;
    estimation failures in any other bin propagate with the bin identity.

    With ``synthetic`` potential outcomes the design variance of the estimate
    is attached: the quadratic form of per-bin variances and cross-bin
    covariances in the ``n_bar`` weights.
    """
    require_single_location(study.design, "curve-integrated aggregation")
    used: list[AggregateBin] = []
    empty: list[PartitionCell] = []
    for k, cell in enumerate(partition.bins):
        count = n_bar(study, partition, k)
        if count == 0.0:
            empty.append(cell)
            continue
        weights = att_weights(study, cell)
        try:
            tau = tau_w(study, weights)
        except EstimationError as err:
            raise type(err)(f"bin {cell}: {err}") from err
        used.append(AggregateBin(cell, count, tau, weights))
    estimate = fsum(b.contribution for b in used)
    variance: float | None = None
    if synthetic is not None:
        terms = [b.n_bar**2 * true_variance(synthetic, b.weights) for b in used]
        for a_idx in range(len(used)):
            for b_idx in range(a_idx + 1, len(used)):
                a, b = used[a_idx], used[b_idx]
                terms.append(
                    2.0
                    * a.n_bar
                    * b.n_bar
                    * cross_bin_covariance(synthetic, a.weights, b.weights)
                )
        variance = fsum(terms)
    return AggregateEstimate(estimate, tuple(used), tuple(empty), variance)


def aatt_estimand(synthetic: SyntheticStudy) -> float:
    """True aggregate effect: realization-probability-weighted average over
    candidate locations of the summed individual effects."""
    study = synthetic.study
    require_single_location(study.design, "aggregate estimand")
    num = []
    den = []
    for region in study.design.regions:
        pi = region_pi(study.design, region)
        for loc in study.locations_in(region):
            g = study.design.within[region].g[loc.id]
            den.append(pi * g)
            if pi * g > 0.0:
                total = fsum(
                    synthetic.effect(ind.id, loc.id)
                    for ind in study.individuals_in(region)
                )
                num.append(pi * g * total)
    total_weight = fsum(den)
    if total_weight == 0.0:
        raise ValidationError("every candidate location has zero probability")
    return fsum(num) / total_weight
