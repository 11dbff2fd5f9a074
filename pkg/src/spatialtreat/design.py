"""Two-stage treatment assignment designs and their moments.

A design has an across-region stage (which regions receive a treatment)
and a within-region stage (which candidate locations are realized in a
treated region). The package needs three things from a design: marginal
realization probabilities, second moments of the realization indicators
T_j(s) = W_j·1{ξ_j = s}, and — for the randomization oracle — the full
assignment support with probabilities.

Across-region laws
    * :class:`CompletelyRandomized` — exactly ``n_treated`` of ``n_regions``
      regions treated, all subsets equiprobable.
    * :class:`BernoulliAcross` — independent coin flips per region.

Within-region laws
    * :class:`SingleLocation` — one location realized, drawn with
      probabilities g_j(s).
    * :class:`FixedK` — exactly ``n_treated`` of the region's candidates
      realized, all combinations equiprobable.
    * :class:`IndependentLocations` — each location realized independently;
      single-region mode with no across-region stage.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    EnumerationTooLargeError,
    UnknownRegionError,
    UnsupportedDesignError,
    ValidationError,
)

DEFAULT_ENUMERATION_CAP = 1_000_000

_PROB_TOL = 1e-9


def _check_prob(p: float, what: str) -> float:
    p = float(p)
    if not (math.isfinite(p) and -_PROB_TOL <= p <= 1.0 + _PROB_TOL):
        raise ValidationError(f"{what} must lie in [0, 1], got {p}")
    return min(1.0, max(0.0, p))


# ---------------------------------------------------------------------------
# Laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompletelyRandomized:
    """Exactly ``n_treated`` of ``n_regions`` regions treated."""

    n_regions: int
    n_treated: int

    def __post_init__(self) -> None:
        if not 0 < self.n_treated < self.n_regions:
            raise ValidationError(
                f"need 0 < treated < regions, got {self.n_treated} of {self.n_regions}"
            )

    @property
    def pi(self) -> float:
        """Common treatment probability n_treated / n_regions."""
        return self.n_treated / self.n_regions


@dataclass(frozen=True)
class BernoulliAcross:
    """Independent region-level treatment with probability ``pi[j]``."""

    pi: Mapping[str, float]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "pi", {str(j): _check_prob(p, f"pi[{j}]") for j, p in self.pi.items()}
        )


@dataclass(frozen=True)
class SingleLocation:
    """One realized location per treated region, drawn with probabilities ``g``."""

    g: Mapping[str, float]

    def __post_init__(self) -> None:
        cleaned = {str(s): _check_prob(p, f"g[{s}]") for s, p in self.g.items()}
        if not cleaned:
            raise ValidationError("a region needs at least one candidate location")
        total = math.fsum(cleaned.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"location probabilities must sum to 1, got {total}")
        object.__setattr__(self, "g", cleaned)

    @property
    def locations(self) -> tuple[str, ...]:
        return tuple(sorted(self.g))


@dataclass(frozen=True)
class FixedK:
    """Exactly ``n_treated`` of the region's candidates, equiprobable subsets."""

    locations: tuple[str, ...]
    n_treated: int

    def __post_init__(self) -> None:
        locs = tuple(sorted(str(s) for s in self.locations))
        if len(set(locs)) != len(locs):
            raise ValidationError("duplicate location ids in fixed-count law")
        if not locs:
            raise ValidationError("a region needs at least one candidate location")
        if not 1 <= self.n_treated <= len(locs):
            raise ValidationError(
                f"need 1 <= realized count <= {len(locs)}, got {self.n_treated}"
            )
        object.__setattr__(self, "locations", locs)


@dataclass(frozen=True)
class IndependentLocations:
    """Each location realized independently with probability ``pi[s]``."""

    pi: Mapping[str, float]

    def __post_init__(self) -> None:
        cleaned = {str(s): _check_prob(p, f"pi[{s}]") for s, p in self.pi.items()}
        if not cleaned:
            raise ValidationError("a region needs at least one candidate location")
        object.__setattr__(self, "pi", cleaned)

    @property
    def locations(self) -> tuple[str, ...]:
        return tuple(sorted(self.pi))


WithinLaw = SingleLocation | FixedK | IndependentLocations
AcrossLaw = CompletelyRandomized | BernoulliAcross


@dataclass(frozen=True)
class Design:
    """Full assignment mechanism: across-region law + per-region within laws.

    ``across`` may be None only for the single-region independent mode,
    where there is no separate region-treatment stage.
    """

    across: AcrossLaw | None
    within: Mapping[str, WithinLaw]

    def __post_init__(self) -> None:
        within = {str(j): law for j, law in self.within.items()}
        if not within:
            raise ValidationError("design needs at least one region")
        object.__setattr__(self, "within", within)
        independent = [j for j, law in within.items() if isinstance(law, IndependentLocations)]
        if independent:
            if len(within) != 1 or self.across is not None:
                raise ValidationError(
                    "independent location assignment is a single-region mode "
                    "with no across-region law"
                )
            return
        if self.across is None:
            raise ValidationError("two-stage designs need an across-region law")
        if isinstance(self.across, CompletelyRandomized):
            if self.across.n_regions != len(within):
                raise ValidationError(
                    f"across-region law covers {self.across.n_regions} regions, "
                    f"design has {len(within)}"
                )
        else:
            missing = set(within) ^ set(self.across.pi)
            if missing:
                raise ValidationError(f"region probability mismatch for: {sorted(missing)}")

    @property
    def regions(self) -> tuple[str, ...]:
        return tuple(sorted(self.within))

    def law(self, region: str) -> WithinLaw:
        try:
            return self.within[region]
        except KeyError:
            raise UnknownRegionError(f"unknown region {region!r}") from None

    def region_locations(self, region: str) -> tuple[str, ...]:
        return self.law(region).locations

    @property
    def is_independent(self) -> bool:
        return self.across is None


def region_pi(design: Design, region: str) -> float:
    """Region treatment probability π_j = Pr(W_j = 1)."""
    design.law(region)  # validates region id
    if design.across is None:
        raise UnsupportedDesignError(
            "independent single-region designs have no region treatment stage"
        )
    if isinstance(design.across, CompletelyRandomized):
        return design.across.pi
    return design.across.pi[region]


# ---------------------------------------------------------------------------
# Assignments
# ---------------------------------------------------------------------------


class Assignment:
    """Realized treatment: per region, the set of realized locations ξ_j.

    A region is treated (W_j = 1) exactly when its realized set is
    non-empty. Assignments compare and hash by value.
    """

    __slots__ = ("_items",)

    def __init__(self, realized: Mapping[str, Iterable[str]]):
        self._items: tuple[tuple[str, frozenset[str]], ...] = tuple(
            sorted((str(j), frozenset(map(str, s))) for j, s in realized.items())
        )

    @property
    def realized(self) -> dict[str, frozenset[str]]:
        return dict(self._items)

    def xi(self, region: str) -> frozenset[str]:
        for j, s in self._items:
            if j == region:
                return s
        raise UnknownRegionError(f"assignment has no region {region!r}")

    def treated(self, region: str) -> bool:
        return bool(self.xi(region))

    @property
    def treated_regions(self) -> tuple[str, ...]:
        return tuple(j for j, s in self._items if s)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Assignment) and self._items == other._items

    def __hash__(self) -> int:
        return hash(self._items)

    def __repr__(self) -> str:
        parts = ", ".join(f"{j}:{{{','.join(sorted(s))}}}" for j, s in self._items)
        return f"Assignment({parts})"


def validate_assignment(design: Design, assignment: Assignment) -> None:
    """Raise if ``assignment`` lies outside the support of ``design``."""
    realized = assignment.realized
    if set(realized) != set(design.regions):
        raise ValidationError("assignment regions do not match the design")
    for region in design.regions:
        law = design.law(region)
        xi = realized[region]
        unknown = xi - set(law.locations)
        if unknown:
            raise ValidationError(f"region {region!r}: unknown locations {sorted(unknown)}")
        if isinstance(law, SingleLocation):
            if len(xi) > 1:
                raise ValidationError(f"region {region!r}: multiple realized locations")
            if xi and law.g[next(iter(xi))] == 0.0:
                raise ValidationError(f"region {region!r}: realized a zero-probability location")
        elif isinstance(law, FixedK):
            if xi and len(xi) != law.n_treated:
                raise ValidationError(
                    f"region {region!r}: realized {len(xi)} locations, law fixes {law.n_treated}"
                )
        else:
            for s in xi:
                if law.pi[s] == 0.0:
                    raise ValidationError(f"location {s!r} realized with probability 0")
            for s in set(law.locations) - xi:
                if law.pi[s] == 1.0:
                    raise ValidationError(f"location {s!r} unrealized with probability 1")
    if isinstance(design.across, CompletelyRandomized):
        if len(assignment.treated_regions) != design.across.n_treated:
            raise ValidationError(
                f"assignment treats {len(assignment.treated_regions)} regions, "
                f"design fixes {design.across.n_treated}"
            )
    elif isinstance(design.across, BernoulliAcross):
        for region in design.regions:
            pi = design.across.pi[region]
            if realized[region] and pi == 0.0:
                raise ValidationError(f"region {region!r} treated with probability 0")
            if not realized[region] and pi == 1.0:
                raise ValidationError(f"region {region!r} untreated with probability 1")


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------


def marginal_prob(design: Design, region: str, location: str) -> float:
    """Marginal realization probability Pr(s ∈ ξ_j)."""
    law = design.law(region)
    if location not in law.locations:
        raise ValidationError(f"region {region!r} has no location {location!r}")
    if isinstance(law, IndependentLocations):
        return law.pi[location]
    pi_j = region_pi(design, region)
    if isinstance(law, SingleLocation):
        return pi_j * law.g[location]
    return pi_j * law.n_treated / len(law.locations)


def conditional_location_prob(design: Design, region: str, location: str) -> float:
    """Pr(s ∈ ξ_j | W_j = 1) — g_j(s) or the fixed-count fraction."""
    law = design.law(region)
    if location not in law.locations:
        raise ValidationError(f"region {region!r} has no location {location!r}")
    if isinstance(law, SingleLocation):
        return law.g[location]
    if isinstance(law, FixedK):
        return law.n_treated / len(law.locations)
    raise UnsupportedDesignError("no region-treatment stage in independent designs")


def require_single_location(design: Design, context: str) -> None:
    """Guard for formulas that assume exactly one realized location per region."""
    for region in design.regions:
        law = design.law(region)
        if not isinstance(law, SingleLocation):
            raise UnsupportedDesignError(
                f"{context} requires single-location within-region assignment; "
                f"region {region!r} uses {type(law).__name__}"
            )


def design_C(design: Design) -> float:
    """The cross-region indicator-covariance constant.

    π(1−π)/(J−1) under complete randomization, 0 under independent
    region-level coin flips.
    """
    if design.across is None:
        raise UnsupportedDesignError("no across-region stage in independent designs")
    if isinstance(design.across, CompletelyRandomized):
        across = design.across
        return across.pi * (1.0 - across.pi) / (across.n_regions - 1)
    return 0.0


def pair_covariance(
    design: Design, first: tuple[str, str], second: tuple[str, str]
) -> float:
    """cov(T_j(s), T_j'(s')) for the indicators T_j(s) = W_j·1{ξ_j = s}.

    Closed forms exist for single-location within laws only; other laws are
    covered by exhaustive enumeration instead.
    """
    (j1, s1), (j2, s2) = first, second
    for j, s in (first, second):
        law = design.law(j)
        if not isinstance(law, SingleLocation):
            raise UnsupportedDesignError(
                "pair covariance has a closed form only for single-location "
                "within laws; use assignment enumeration instead"
            )
        if s not in law.locations:
            raise ValidationError(f"region {j!r} has no location {s!r}")
    g1 = design.law(j1).g[s1]
    g2 = design.law(j2).g[s2]
    if j1 == j2:
        pi = region_pi(design, j1)
        if s1 == s2:
            p = pi * g1
            return p * (1.0 - p)
        return -(pi**2) * g1 * g2
    if isinstance(design.across, CompletelyRandomized):
        return -design_C(design) * g1 * g2
    return 0.0


# ---------------------------------------------------------------------------
# Enumeration and sampling
# ---------------------------------------------------------------------------


def _within_options(law: WithinLaw) -> list[tuple[frozenset[str], float]]:
    """Realized-set options for a treated region, with conditional probabilities."""
    if isinstance(law, SingleLocation):
        return [
            (frozenset({s}), p) for s, p in sorted(law.g.items()) if p > 0.0
        ]
    if isinstance(law, FixedK):
        combos = list(itertools.combinations(law.locations, law.n_treated))
        p = 1.0 / len(combos)
        return [(frozenset(c), p) for c in combos]
    options: list[tuple[frozenset[str], float]] = [(frozenset(), 1.0)]
    for s in law.locations:
        pi_s = law.pi[s]
        extended: list[tuple[frozenset[str], float]] = []
        for chosen, p in options:
            if pi_s < 1.0:
                extended.append((chosen, p * (1.0 - pi_s)))
            if pi_s > 0.0:
                extended.append((chosen | {s}, p * pi_s))
        options = extended
    return options


def _within_option_count(law: WithinLaw) -> int:
    if isinstance(law, SingleLocation):
        return sum(1 for p in law.g.values() if p > 0.0)
    if isinstance(law, FixedK):
        return math.comb(len(law.locations), law.n_treated)
    count = 1
    for pi_s in law.pi.values():
        count *= 1 if pi_s in (0.0, 1.0) else 2
    return count


def enumerate_assignments(
    design: Design, cap: int = DEFAULT_ENUMERATION_CAP
) -> list[tuple[Assignment, float]]:
    """Exhaustive assignment support with probabilities (summing to 1).

    Raises if the support exceeds ``cap`` — the oracle requires
    exhaustiveness, so there is no silent fallback to sampling.
    """
    regions = design.regions
    if design.is_independent:
        (region,) = regions
        law = design.law(region)
        if _within_option_count(law) > cap:
            raise EnumerationTooLargeError(
                f"assignment support exceeds the cap of {cap}"
            )
        support = [
            (Assignment({region: chosen}), p) for chosen, p in _within_options(law)
        ]
        _check_support(support)
        return support

    options = {j: _within_options(design.law(j)) for j in regions}
    counts = {j: len(options[j]) for j in regions}

    if isinstance(design.across, CompletelyRandomized):
        n_treated = design.across.n_treated
        total = 0
        for subset in itertools.combinations(regions, n_treated):
            size = 1
            for j in subset:
                size *= counts[j]
            total += size
            if total > cap:
                raise EnumerationTooLargeError(f"assignment support exceeds the cap of {cap}")
        subset_prob = 1.0 / math.comb(len(regions), n_treated)
        support = []
        for subset in itertools.combinations(regions, n_treated):
            for combo in itertools.product(*(options[j] for j in subset)):
                realized = {j: frozenset() for j in regions}
                p = subset_prob
                for j, (chosen, q) in zip(subset, combo):
                    realized[j] = chosen
                    p *= q
                support.append((Assignment(realized), p))
        _check_support(support)
        return support

    across = design.across
    per_region: dict[str, list[tuple[frozenset[str], float]]] = {}
    total = 1
    for j in regions:
        pi_j = across.pi[j]
        branches: list[tuple[frozenset[str], float]] = []
        if pi_j < 1.0:
            branches.append((frozenset(), 1.0 - pi_j))
        if pi_j > 0.0:
            branches.extend((chosen, pi_j * q) for chosen, q in options[j])
        per_region[j] = branches
        total *= len(branches)
        if total > cap:
            raise EnumerationTooLargeError(f"assignment support exceeds the cap of {cap}")
    support = []
    for combo in itertools.product(*(per_region[j] for j in regions)):
        realized = {}
        p = 1.0
        for j, (chosen, q) in zip(regions, combo):
            realized[j] = chosen
            p *= q
        support.append((Assignment(realized), p))
    _check_support(support)
    return support


def _check_support(support: list[tuple[Assignment, float]]) -> None:
    total = math.fsum(p for _, p in support)
    if abs(total - 1.0) > 1e-12:
        raise AssertionError(f"support probabilities sum to {total}, not 1")


def sample_assignment(
    design: Design, seed: int | np.random.Generator | None = None
) -> Assignment:
    """One draw from the assignment law; deterministic given an integer seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    regions = design.regions

    def draw_within(law: WithinLaw) -> frozenset[str]:
        if isinstance(law, SingleLocation):
            locs = law.locations
            probs = np.array([law.g[s] for s in locs])
            return frozenset({locs[rng.choice(len(locs), p=probs)]})
        if isinstance(law, FixedK):
            picks = rng.choice(len(law.locations), size=law.n_treated, replace=False)
            return frozenset(law.locations[int(k)] for k in picks)
        draws = rng.random(len(law.locations))
        return frozenset(
            s for s, u in zip(law.locations, draws) if u < law.pi[s]
        )

    if design.is_independent:
        (region,) = regions
        return Assignment({region: draw_within(design.law(region))})

    realized: dict[str, frozenset[str]] = {j: frozenset() for j in regions}
    if isinstance(design.across, CompletelyRandomized):
        picks = rng.choice(len(regions), size=design.across.n_treated, replace=False)
        treated = [regions[int(k)] for k in picks]
    else:
        draws = rng.random(len(regions))
        treated = [j for j, u in zip(regions, draws) if u < design.across.pi[j]]
    for j in treated:
        realized[j] = draw_within(design.law(j))
    return Assignment(realized)


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def design_from_config(
    config: Mapping[str, str],
    region_locations: Mapping[str, tuple[str, ...]],
    g_values: Mapping[tuple[str, str], float] | None = None,
    pi_values: Mapping[tuple[str, str], float] | None = None,
) -> Design:
    """Build a design from a parsed key-value config plus file-derived tables.

    ``region_locations`` maps region id to its candidate location ids;
    ``g_values`` and ``pi_values`` carry optional per-location probability
    columns from the locations file, keyed by (region, location).
    """
    kind = config.get("design", "completely-randomized").strip().lower()
    regions = {str(j): tuple(locs) for j, locs in region_locations.items()}

    def within_for(region: str) -> WithinLaw:
        within_kind = config.get(f"within.{region}", config.get("within", "single"))
        within_kind = within_kind.strip().lower()
        locs = regions[region]
        if within_kind in ("single", "single-location"):
            if g_values and any((region, s) in g_values for s in locs):
                g = {s: g_values.get((region, s), 0.0) for s in locs}
            else:
                g = {s: 1.0 / len(locs) for s in locs}
            return SingleLocation(g)
        if within_kind in ("fixed-k", "fixed_k", "fixed"):
            raw = config.get(f"fixed_k.{region}", config.get("fixed_k"))
            if raw is None:
                raise ConfigError("fixed-count law requires a 'fixed_k' config key")
            return FixedK(locs, int(raw))
        if within_kind in ("independent", "independent-locations"):
            if pi_values is None or not any((region, s) in pi_values for s in locs):
                raise ConfigError(
                    "independent designs need per-location probabilities "
                    "(a 'pi' column in the locations file)"
                )
            return IndependentLocations({s: pi_values[(region, s)] for s in locs})
        raise ConfigError(f"unknown within-region law {within_kind!r}")

    if kind in ("independent", "independent-locations"):
        if len(regions) != 1:
            raise ConfigError("independent designs are single-region")
        (region,) = regions
        if pi_values is None:
            raise ConfigError(
                "independent designs need per-location probabilities "
                "(a 'pi' column in the locations file)"
            )
        law = IndependentLocations(
            {s: pi_values[(region, s)] for s in regions[region]}
        )
        return Design(across=None, within={region: law})

    within = {j: within_for(j) for j in regions}
    if kind in ("completely-randomized", "cr", "completely_randomized"):
        raw = config.get("treated_regions")
        if raw is None:
            raise ConfigError("completely randomized designs need 'treated_regions'")
        return Design(CompletelyRandomized(len(regions), int(raw)), within)
    if kind in ("bernoulli",):
        default = config.get("pi")
        pi = {}
        for j in regions:
            raw = config.get(f"pi.{j}", default)
            if raw is None:
                raise ConfigError(f"bernoulli design needs 'pi' (or 'pi.{j}')")
            pi[j] = float(raw)
        return Design(BernoulliAcross(pi), within)
    raise ConfigError(f"unknown design {kind!r}")
