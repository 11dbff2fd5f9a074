"""Design-based variances for the weighted distance estimators.

Everything here refers to the *demeaned* estimator, whose variance over
the assignment distribution has an exact closed form when each treated
region realizes exactly one location.  Three views of that variance:

* :func:`true_variance` — the exact five-term expression, needing full
  potential outcomes (a synthetic study).
* :func:`att_variance_components` — the same total under ATT weights,
  decomposed into five named, interpretable pieces (variances of treated
  location aggregates, control region aggregates, and effect terms).
* :func:`conservative_variance` — the feasible estimator: plug-in
  versions of the first two terms only, which over-cover because the
  dropped terms reduce the variance on net.

:func:`cross_bin_covariance` extends the closed form to covariances
between estimates at two different bins.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

from .data import Study, SyntheticStudy
from .design import (
    CompletelyRandomized,
    conditional_location_prob,
    design_C,
    region_pi,
    require_single_location,
)
from .errors import (
    InsufficientReplicationError,
    UnsupportedDesignError,
    ZeroWeightError,
)
from .estimators import _arm_totals, arm_means
from .weighting import SupportsContains, WeightTable, att_weights, check_overlap


@dataclass(frozen=True)
class VarianceReport:
    """A variance with its decomposition and per-region contributions.

    ``components`` holds the named terms; the signed total is
    ``treated_location + control_region − effect_location + effect_region
    − treated_region`` for the exact decomposition, and the plain sum of
    whatever terms are present for the conservative estimator.
    ``per_region`` gives each region's additive contribution to ``total``
    (so leaving a region out subtracts its entry).
    """

    total: float
    components: Mapping[str, float]
    conservative: bool
    per_region: Mapping[str, float]


def _deviation_sums(
    synthetic: SyntheticStudy, weights: WeightTable
) -> tuple[float, dict[tuple[str, str], float], dict[str, float]]:
    """Weighted deviations from the true arm means.

    Returns (D, A, B) with A[(j, s)] = Σ_i w_i(s)·(Y_i(s) − μ_t) and
    B[j] = Σ_s Σ_i w_i(s)·(Y_i(0) − μ_c).
    """
    study = synthetic.study
    total = weights.total
    if total == 0.0:
        raise ZeroWeightError("variance undefined: total weight is zero")
    mu_t, mu_c = arm_means(synthetic, weights)
    a_terms: dict[tuple[str, str], list[float]] = {}
    b_terms: dict[str, list[float]] = {j: [] for j in study.regions}
    for (ind_id, loc_id), w in weights.weights.items():
        if w == 0.0:
            continue
        region = study.individual(ind_id).region
        y_s = synthetic.potential_outcome(ind_id, frozenset({loc_id}))
        a_terms.setdefault((region, loc_id), []).append(w * (y_s - mu_t))
        b_terms[region].append(w * (synthetic.baseline[ind_id] - mu_c))
    a = {key: math.fsum(terms) for key, terms in a_terms.items()}
    b = {j: math.fsum(terms) for j, terms in b_terms.items()}
    return total, a, b


def true_variance(synthetic: SyntheticStudy, weights: WeightTable) -> float:
    """Exact variance of the demeaned estimator over the assignment design.

    Five terms per region (all divided by the squared total weight D²):

    1. + 2 (1/π) Σ_s A_j(s)²/g_j(s)
    2. + 2 (π(1−π)+𝒞)/(1−π)² · B_j²
    3. − 2 (π²−𝒞)/π² · (Σ_s A_j(s))²
    4. − π Σ_s g_j(s) (A_j(s)/(πg_j(s)) − B_j/(1−π))²
    5. + (π²−𝒞) (Σ_s A_j(s)/π − B_j/(1−π))²

    with 𝒞 the across-region assignment covariance correction.
    """
    study = synthetic.study
    require_single_location(study.design, "the exact variance")
    check_overlap(study, weights)
    c = design_C(study.design)
    total, a, b = _deviation_sums(synthetic, weights)
    terms = []
    for region in study.regions:
        pi = region_pi(study.design, region)
        b_j = b[region]
        row_a = []
        for s in study.locations_in(region):
            g = conditional_location_prob(study.design, region, s.id)
            if g == 0.0:
                continue  # check_overlap already rejected weighted pairs here
            a_js = a.get((region, s.id), 0.0)
            row_a.append(a_js)
            terms.append(2.0 * a_js * a_js / (pi * g))
            terms.append(-pi * g * (a_js / (pi * g) - b_j / (1.0 - pi)) ** 2)
        sum_a = math.fsum(row_a)
        terms.append(2.0 * (pi * (1.0 - pi) + c) / (1.0 - pi) ** 2 * b_j * b_j)
        terms.append(-2.0 * (pi * pi - c) / (pi * pi) * sum_a * sum_a)
        terms.append((pi * pi - c) * (sum_a / pi - b_j / (1.0 - pi)) ** 2)
    return math.fsum(terms) / (total * total)


def cross_bin_covariance(
    synthetic: SyntheticStudy, weights_a: WeightTable, weights_b: WeightTable
) -> float:
    """Exact covariance between demeaned estimators at two weightings.

    The demeaned estimator at weights w is, up to a constant, the sum
    over (region, location) of T_j(s)·Ȳ⁺_j(s) with Ȳ⁺_j(s) =
    (A_j(s)/(πg) + B_j/(1−π))/D, so covariances reduce to the covariance
    structure of the assignment indicators T_j(s).  With identical weight
    tables this returns exactly :func:`true_variance`.
    """
    study = synthetic.study
    require_single_location(study.design, "the cross-bin covariance")
    check_overlap(study, weights_a)
    check_overlap(study, weights_b)
    c = design_C(study.design)

    def y_plus(weights: WeightTable) -> dict[tuple[str, str], float]:
        total, a, b = _deviation_sums(synthetic, weights)
        out = {}
        for region in study.regions:
            pi = region_pi(study.design, region)
            for s in study.locations_in(region):
                g = conditional_location_prob(study.design, region, s.id)
                if g == 0.0:
                    continue
                a_js = a.get((region, s.id), 0.0)
                out[(region, s.id)] = (
                    a_js / (pi * g) + b[region] / (1.0 - pi)
                ) / total
        return out

    ya = y_plus(weights_a)
    yb = y_plus(weights_b)
    terms = []
    for region in study.regions:
        pi = region_pi(study.design, region)
        row_a = []
        row_b = []
        for s in study.locations_in(region):
            g = conditional_location_prob(study.design, region, s.id)
            if g == 0.0:
                continue
            key = (region, s.id)
            terms.append(pi * g * ya[key] * yb[key])
            row_a.append(g * ya[key])
            row_b.append(g * yb[key])
        terms.append(-(pi * pi - c) * math.fsum(row_a) * math.fsum(row_b))
    return math.fsum(terms)


def att_variance_components(
    synthetic: SyntheticStudy, bin_: SupportsContains
) -> VarianceReport:
    """Five-part decomposition of the exact ATT variance.

    Only defined for completely randomized region assignment.  The parts:

    * ``treated_location`` — dispersion of per-location treated bin
      aggregates around the grand treated mean;
    * ``control_region`` — dispersion of per-region control aggregates;
    * ``effect_location`` (entering negatively) — dispersion of
      per-location effect aggregates, unidentifiable from data;
    * ``effect_region`` — its across-region counterpart;
    * ``treated_region`` (entering negatively) — dispersion of
      region-averaged treated aggregates, which is the part of
      ``treated_location`` the single realized draw never exposes.
    """
    study = synthetic.study
    require_single_location(study.design, "the ATT variance decomposition")
    if not isinstance(study.design.across, CompletelyRandomized):
        raise UnsupportedDesignError(
            "the ATT variance decomposition requires completely randomized regions"
        )
    weights = att_weights(study, bin_)
    check_overlap(study, weights)
    n_regions = study.design.across.n_regions
    n_treated = study.design.across.n_treated
    pi = n_treated / n_regions
    rho = (n_treated - 1) / (n_regions - 1)

    mu_t, mu_c = arm_means(synthetic, weights)

    # Per-location bin counts and bin means of Y_i(s) and Y_i(0).
    a: dict[tuple[str, str], float] = {}
    b: dict[str, float] = {}
    u: dict[str, float] = {}
    for region in study.regions:
        b_terms = []
        u_terms = []
        for s in study.locations_in(region):
            g = conditional_location_prob(study.design, region, s.id)
            in_bin = [
                i for i in study.individuals_in(region)
                if bin_.contains(study.distance(s.id, i.id))
            ]
            n = len(in_bin)
            if n:
                mean_t = math.fsum(
                    synthetic.potential_outcome(i.id, frozenset({s.id})) for i in in_bin
                ) / n
                mean_c = math.fsum(synthetic.baseline[i.id] for i in in_bin) / n
            else:
                mean_t = mean_c = 0.0
            a[(region, s.id)] = n * (mean_t - mu_t)
            b_terms.append(g * n * (mean_c - mu_c))
            u_terms.append(g * a[(region, s.id)])
        b[region] = math.fsum(b_terms)
        u[region] = math.fsum(u_terms)

    # The displays carry 1/n̄² with n̄ the expected realized bin count
    # Σ_j Σ_s π g n — identical to the ATT weight total.
    scale = 1.0 / weights.total**2
    per_region_values: dict[str, dict[str, float]] = {}
    for region in study.regions:
        g_of = {
            s.id: conditional_location_prob(study.design, region, s.id)
            for s in study.locations_in(region)
        }
        per_region_values[region] = {
            "treated_location": (1.0 / (1.0 - pi))
            * math.fsum(pi * g * a[(region, s)] ** 2 for s, g in g_of.items())
            * scale,
            "control_region": (pi / (1.0 - pi))
            * (n_regions / (n_regions - 1))
            * pi
            * b[region] ** 2
            * scale,
            "effect_location": (pi / (1.0 - pi))
            * math.fsum(
                pi * g * (a[(region, s)] - b[region]) ** 2 for s, g in g_of.items()
            )
            * scale,
            "effect_region": (pi / (1.0 - pi))
            * rho
            * pi
            * (u[region] - b[region]) ** 2
            * scale,
            "treated_region": (1.0 / (1.0 - pi)) * rho * pi * u[region] ** 2 * scale,
        }
    signs = {
        "treated_location": 1.0,
        "control_region": 1.0,
        "effect_location": -1.0,
        "effect_region": 1.0,
        "treated_region": -1.0,
    }
    components = {
        name: math.fsum(per_region_values[j][name] for j in study.regions)
        for name in signs
    }
    per_region_total = {
        j: math.fsum(signs[name] * per_region_values[j][name] for name in signs)
        for j in study.regions
    }
    total = math.fsum(signs[name] * components[name] for name in signs)
    return VarianceReport(
        total=total,
        components=components,
        conservative=False,
        per_region=per_region_total,
    )


def conservative_variance(
    study: Study,
    weights: WeightTable,
    recover_fifth_term: bool = False,
) -> VarianceReport:
    """Feasible, upward-biased variance estimate from one realized assignment.

    Keeps plug-in versions of the two estimable terms — squared treated
    deviations at realized locations, inverse-probability weighted, and
    squared control-region aggregates — around the realized arm means.
    The dropped terms lower the variance on net, so the estimate
    over-covers in expectation.

    ``recover_fifth_term`` additionally subtracts an estimate of the
    across-region treated dispersion, valid when treatment effects are
    constant: the ratio of across-region to total dispersion is taken
    from control regions, where both are observable.  The result stays
    nonnegative because the recovered term never exceeds the treated
    term it discounts.
    """
    require_single_location(study.design, "the conservative variance")
    check_overlap(study, weights)
    total = weights.total
    if total == 0.0:
        raise ZeroWeightError("variance undefined: total weight is zero")
    c = design_C(study.design)
    t_num, t_den, c_num, c_den = _arm_totals(study, weights)
    treated_regions = [j for j in study.regions if study.treated(j)]
    control_regions = [j for j in study.regions if not study.treated(j)]

    def region_weight_sums(region: str) -> dict[str, float]:
        sums: dict[str, list[float]] = {}
        for i in study.individuals_in(region):
            for s in study.locations_in(region):
                w = weights.get(i.id, s.id)
                if w != 0.0:
                    sums.setdefault(s.id, []).append(w)
        return {s: math.fsum(v) for s, v in sums.items()}

    contributing_t = [
        j
        for j in treated_regions
        if any(s in region_weight_sums(j) for s in study.xi(j))
    ]
    contributing_c = [j for j in control_regions if region_weight_sums(j)]
    if len(contributing_t) < 2:
        raise InsufficientReplicationError(
            f"need at least 2 treated regions with weighted realized locations, "
            f"have {len(contributing_t)}"
        )
    if len(contributing_c) < 2:
        raise InsufficientReplicationError(
            f"need at least 2 control regions with weighted pairs, "
            f"have {len(contributing_c)}"
        )
    mu_t_hat = t_num / t_den
    mu_c_hat = c_num / c_den

    per_region: dict[str, float] = {}
    treated_term_parts = []
    for region in treated_regions:
        pi = region_pi(study.design, region)
        part_terms = []
        for loc_id in study.xi(region):
            g = conditional_location_prob(study.design, region, loc_id)
            dev = math.fsum(
                weights.get(i.id, loc_id) * (i.outcome - mu_t_hat)
                for i in study.individuals_in(region)
            )
            part_terms.append(2.0 * dev * dev / (pi * g) ** 2)
        part = math.fsum(part_terms) / (total * total)
        per_region[region] = part
        treated_term_parts.append(part)
    treated_term = math.fsum(treated_term_parts)

    control_term_parts = []
    for region in control_regions:
        pi = region_pi(study.design, region)
        dev = math.fsum(
            weights.get(i.id, s.id) * (i.outcome - mu_c_hat)
            for i in study.individuals_in(region)
            for s in study.locations_in(region)
        )
        factor = (pi * (1.0 - pi) + c) / (1.0 - pi) ** 3
        part = 2.0 * factor * dev * dev / (total * total)
        per_region[region] = part
        control_term_parts.append(part)
    control_term = math.fsum(control_term_parts)

    components = {"treated_location": treated_term, "control_region": control_term}
    total_variance = treated_term + control_term

    if recover_fifth_term:
        if not isinstance(study.design.across, CompletelyRandomized):
            raise UnsupportedDesignError(
                "fifth-term recovery requires completely randomized regions"
            )
        n_regions = study.design.across.n_regions
        n_treated = study.design.across.n_treated
        rho_design = (n_treated - 1) / (n_regions - 1)
        within_terms = []
        across_terms = []
        for region in control_regions:
            pi = region_pi(study.design, region)
            row = []
            for s in study.locations_in(region):
                g = conditional_location_prob(study.design, region, s.id)
                if g == 0.0:
                    continue
                q = math.fsum(
                    weights.get(i.id, s.id) * (i.outcome - mu_c_hat)
                    for i in study.individuals_in(region)
                ) / (pi * g)
                within_terms.append(g * q * q)
                row.append(g * q)
            across_terms.append(math.fsum(row) ** 2)
        dispersion = math.fsum(within_terms)
        across = math.fsum(across_terms)
        ratio = 0.0 if dispersion == 0.0 else across / dispersion
        fifth = rho_design * ratio * treated_term
        components["treated_region"] = fifth
        total_variance -= fifth
        # Attribute the subtraction to the treated regions proportionally.
        if treated_term > 0.0:
            for region in treated_regions:
                per_region[region] -= per_region[region] / treated_term * fifth

    return VarianceReport(
        total=total_variance,
        components=components,
        conservative=True,
        per_region=per_region,
    )
