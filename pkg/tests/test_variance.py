"""Exact and feasible variance calculations for the demeaned estimator."""

import math

import pytest

import helpers
from spatialtreat import (
    Assignment,
    CandidateLocation,
    CompletelyRandomized,
    Design,
    DistanceBin,
    Individual,
    Location,
    SingleLocation,
    Study,
    att_eq_weights,
    att_variance_components,
    att_weights,
    conservative_variance,
    cross_bin_covariance,
    custom_weights,
    design_C,
    enumerate_assignments,
    exact_moments,
    make_demeaned_estimator,
    make_synthetic_study,
    realize_outcomes,
    true_variance,
)
from spatialtreat.design import BernoulliAcross, conditional_location_prob
from spatialtreat.errors import (
    InsufficientReplicationError,
    UnsupportedDesignError,
    ZeroWeightError,
)

from helpers import (
    EQUAL_COUNT_BIN,
    GATE_BIN,
    LONG_BIN,
    SHORT_BIN,
    composition_synthetic,
    equal_count_synthetic,
    gate_synthetic,
    heterogeneous_synthetic,
    null_synthetic,
    single_region_synthetic,
)

DECOMPOSITION_PARTS = {
    "treated_location",
    "control_region",
    "effect_location",
    "effect_region",
    "treated_region",
}


def bernoulli_twin(synthetic, pi):
    """The same synthetic study under independent region coins at ``pi``."""
    study = synthetic.study
    design = Design(
        BernoulliAcross({r: pi for r in study.regions}),
        {r: study.design.law(r) for r in study.regions},
    )
    skeleton = Study(
        study.individuals, study.locations, design, study.assignment, study.metric
    )
    return make_synthetic_study(skeleton, dict(synthetic.baseline), dict(synthetic.effects))


WIDE_BIN = DistanceBin(0.5, 0.5)
OWN_LOCATION_BIN = DistanceBin(0.3, 0.1)
MIDPOINT_BIN = DistanceBin(0.5, 0.1)


def grid_synthetic(per_region_baselines, effect, locations=2, equidistant=False):
    """CR(J, J/2) fixture with power-of-two weights so arm means are exact.

    Each region holds ``locations`` uniformly likely candidate locations
    0.8 apart and one individual per baseline value, placed either on top
    of its own location (distance 0.3) or at the midpoint between the two
    locations (distance 0.5 from both), with a constant treatment effect.
    """
    individuals, locations_list, within = [], [], {}
    baseline, effects = {}, {}
    n_regions = len(per_region_baselines)
    for j in range(n_regions):
        region = f"R{j + 1}"
        off = 100.0 * j
        g = {}
        loc_ids = []
        for k in range(locations):
            sid = f"{region}s{k + 1}"
            locations_list.append(
                CandidateLocation(sid, region, Location(off + 0.8 * k, 0.0))
            )
            g[sid] = 1.0 / locations
            loc_ids.append(sid)
        within[region] = SingleLocation(g)
        for m, b in enumerate(per_region_baselines[j]):
            iid = f"{region}i{m + 1}"
            x = off + 0.4 * (locations - 1) if equidistant else off + 0.8 * m
            individuals.append(Individual(iid, region, Location(x, 0.3), 0.0))
            baseline[iid] = b
            for sid in loc_ids:
                effects[(iid, sid)] = effect
    design = Design(CompletelyRandomized(n_regions, n_regions // 2), within)
    assignment = Assignment(
        {
            f"R{j + 1}": frozenset({f"R{j + 1}s1"}) if j < n_regions // 2 else frozenset()
            for j in range(n_regions)
        }
    )
    skeleton = Study(individuals, locations_list, design, assignment, helpers.EUCLID)
    return make_synthetic_study(skeleton, baseline, effects)


NEAR_BIN = DistanceBin(1.0, 0.25)
FAR_BIN = DistanceBin(2.0, 0.25)


def two_bin_synthetic(far_effects=True):
    """Two CR(2, 1) regions where every individual sits in both bins.

    Each region has locations at x = 0 and x = 3 and individuals at
    x = 1 and x = 2, so each individual is at distance 1 from one
    location and distance 2 from the other.  With ``far_effects=False``
    the distance-2 pairs carry zero effects and a constant baseline of
    1.0, pinning the far-bin estimator at exactly zero.
    """
    individuals, locations_list, within = [], [], {}
    baseline, effects = {}, {}
    for j in range(2):
        region = f"R{j + 1}"
        off = 100.0 * j
        s1, s2 = f"{region}s1", f"{region}s2"
        locations_list.append(CandidateLocation(s1, region, Location(off, 0.0)))
        locations_list.append(CandidateLocation(s2, region, Location(off + 3.0, 0.0)))
        within[region] = SingleLocation({s1: 0.5, s2: 0.5})
        near, far = f"{region}i1", f"{region}i2"
        individuals.append(Individual(near, region, Location(off + 1.0, 0.0), 0.0))
        individuals.append(Individual(far, region, Location(off + 2.0, 0.0), 0.0))
        if far_effects:
            baseline[near] = 0.3 * j + 0.2
            baseline[far] = -0.4 * j + 1.1
            effects[(near, s1)] = 1.0 + 0.2 * j
            effects[(near, s2)] = -0.5 + 0.1 * j
            effects[(far, s1)] = 0.4 - 0.3 * j
            effects[(far, s2)] = 0.9 + 0.25 * j
        else:
            baseline[near] = 1.0
            baseline[far] = 1.0
            effects[(near, s1)] = 0.75 + 0.5 * j  # distance 1 from s1
            effects[(near, s2)] = 0.0  # distance 2 from s2
            effects[(far, s1)] = 0.0  # distance 2 from s1
            effects[(far, s2)] = 1.25 - 0.5 * j  # distance 1 from s2
    design = Design(CompletelyRandomized(2, 1), within)
    assignment = Assignment({"R1": frozenset({"R1s1"}), "R2": frozenset()})
    skeleton = Study(individuals, locations_list, design, assignment, helpers.EUCLID)
    return make_synthetic_study(skeleton, baseline, effects)


def enumerated_variance(synthetic, weights):
    demeaned = make_demeaned_estimator(synthetic, weights)
    report = exact_moments(synthetic, demeaned.tau)
    assert report.excluded_mass == 0.0
    return report.variance


@pytest.mark.parametrize(
    "build, bin_",
    [
        pytest.param(heterogeneous_synthetic, GATE_BIN, id="fixed-count-heterogeneous"),
        pytest.param(lambda: gate_synthetic(2, 3, "cr"), GATE_BIN, id="fixed-count-wide"),
        pytest.param(lambda: gate_synthetic(3, 2, "bernoulli"), GATE_BIN, id="region-coins"),
        pytest.param(equal_count_synthetic, EQUAL_COUNT_BIN, id="equal-counts"),
        pytest.param(null_synthetic, GATE_BIN, id="null-effects"),
        pytest.param(composition_synthetic, SHORT_BIN, id="single-candidate"),
    ],
)
def test_exact_variance_matches_enumeration(build, bin_):
    synthetic = build()
    weights = att_weights(synthetic.study, bin_)
    expected = enumerated_variance(synthetic, weights)
    actual = true_variance(synthetic, weights)
    assert actual == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_exact_variance_matches_enumeration_for_equal_share_weights():
    synthetic = heterogeneous_synthetic()
    weights = att_eq_weights(synthetic.study, GATE_BIN)
    expected = enumerated_variance(synthetic, weights)
    assert true_variance(synthetic, weights) == pytest.approx(expected, rel=1e-10)


def test_fixed_count_variance_exceeds_coin_variance_by_the_covariance_term():
    base = heterogeneous_synthetic()
    study = base.study
    pi = 0.5  # CR(4, 2) assigns each region with probability 1/2
    twin = bernoulli_twin(base, pi)
    w_fixed = att_weights(study, GATE_BIN)
    w_coins = att_weights(twin.study, GATE_BIN)
    assert w_fixed.weights == w_coins.weights

    var_fixed = true_variance(base, w_fixed)
    var_coins = true_variance(twin, w_coins)
    assert var_fixed > var_coins

    # Independent reconstruction of the coefficient on the across-region
    # covariance constant: Σ_j (Σ_s A_j(s)/π + B_j/(1−π))² / D², with the
    # deviation sums computed straight from potential outcomes.
    total = 0.0
    pairs = []
    for region in study.regions:
        for s in study.locations_in(region):
            g = conditional_location_prob(study.design, region, s.id)
            for i in study.individuals_in(region):
                if GATE_BIN.contains(study.distance(s.id, i.id)):
                    pairs.append((region, i.id, s.id, pi * g))
                    total += pi * g
    mu_t = (
        math.fsum(
            w * base.potential_outcome(i, frozenset({s})) for _, i, s, w in pairs
        )
        / total
    )
    mu_c = math.fsum(w * base.baseline[i] for _, i, s, w in pairs) / total
    coefficient = 0.0
    for region in study.regions:
        sum_a = math.fsum(
            w * (base.potential_outcome(i, frozenset({s})) - mu_t)
            for r, i, s, w in pairs
            if r == region
        )
        b_j = math.fsum(
            w * (base.baseline[i] - mu_c) for r, i, s, w in pairs if r == region
        )
        coefficient += (sum_a / pi + b_j / (1.0 - pi)) ** 2
    coefficient /= total * total

    c = design_C(study.design)
    assert c == pytest.approx(0.25 / 3.0, rel=1e-14)
    assert var_fixed - var_coins == pytest.approx(c * coefficient, rel=1e-10)


def test_att_variance_decomposition_reconstructs_the_exact_variance():
    synthetic = heterogeneous_synthetic()
    report = att_variance_components(synthetic, GATE_BIN)
    assert not report.conservative
    assert set(report.components) == DECOMPOSITION_PARTS
    assert all(value >= 0.0 for value in report.components.values())

    parts = report.components
    signed = (
        parts["treated_location"]
        + parts["control_region"]
        - parts["effect_location"]
        + parts["effect_region"]
        - parts["treated_region"]
    )
    assert report.total == pytest.approx(signed, rel=1e-12)

    weights = att_weights(synthetic.study, GATE_BIN)
    assert report.total == pytest.approx(true_variance(synthetic, weights), rel=1e-10)
    assert report.total == pytest.approx(enumerated_variance(synthetic, weights), rel=1e-10)

    assert set(report.per_region) == set(synthetic.study.regions)
    assert math.fsum(report.per_region.values()) == pytest.approx(report.total, rel=1e-10)


def test_att_variance_decomposition_requires_fixed_treated_count():
    synthetic = gate_synthetic(3, 2, "bernoulli")
    with pytest.raises(UnsupportedDesignError, match="completely randomized"):
        att_variance_components(synthetic, GATE_BIN)


def test_cross_bin_covariance_matches_enumeration():
    synthetic = composition_synthetic()
    study = synthetic.study
    w_short = att_weights(study, SHORT_BIN)
    w_long = att_weights(study, LONG_BIN)
    est_short = make_demeaned_estimator(synthetic, w_short)
    est_long = make_demeaned_estimator(synthetic, w_long)

    rows = []
    for assignment, prob in enumerate_assignments(study.design):
        realized = realize_outcomes(synthetic, assignment)
        rows.append((prob, est_short.tau(realized), est_long.tau(realized)))
    assert math.fsum(p for p, _, _ in rows) == pytest.approx(1.0, abs=1e-14)
    mean_short = math.fsum(p * a for p, a, _ in rows)
    mean_long = math.fsum(p * b for p, _, b in rows)
    expected = math.fsum(
        p * (a - mean_short) * (b - mean_long) for p, a, b in rows
    )

    actual = cross_bin_covariance(synthetic, w_short, w_long)
    assert actual == pytest.approx(expected, rel=1e-10, abs=1e-14)
    assert actual == cross_bin_covariance(synthetic, w_long, w_short)


def test_cross_bin_covariance_of_a_bin_with_itself_is_its_variance():
    synthetic = heterogeneous_synthetic()
    weights = att_weights(synthetic.study, GATE_BIN)
    covariance = cross_bin_covariance(synthetic, weights, weights)
    assert covariance == pytest.approx(true_variance(synthetic, weights), rel=1e-10)


def test_conservative_variance_over_covers_in_expectation():
    synthetic = gate_synthetic(6, 2, "cr")
    study = synthetic.study
    weights = att_weights(study, GATE_BIN)
    target = true_variance(synthetic, weights)

    expectation_terms = []
    for assignment, prob in enumerate_assignments(study.design):
        realized = realize_outcomes(synthetic, assignment)
        report = conservative_variance(realized, weights)
        assert report.conservative
        assert report.total > 0.0
        assert set(report.components) == {"treated_location", "control_region"}
        assert set(report.per_region) == set(study.regions)
        assert math.fsum(report.per_region.values()) == pytest.approx(
            report.total, rel=1e-10
        )
        expectation_terms.append(prob * report.total)
    expectation = math.fsum(expectation_terms)
    assert expectation > target


def test_conservative_variance_covers_under_constant_effects():
    base = gate_synthetic(6, 2, "cr")
    constant = make_synthetic_study(
        base.study, dict(base.baseline), {key: 1.7 for key in base.effects}
    )
    weights = att_weights(constant.study, GATE_BIN)
    target = true_variance(constant, weights)
    expectation = math.fsum(
        prob * conservative_variance(realize_outcomes(constant, a), weights).total
        for a, prob in enumerate_assignments(constant.study.design)
    )
    assert expectation >= target


def test_fifth_term_recovery_tightens_the_estimate():
    base = gate_synthetic(6, 2, "cr")
    constant = make_synthetic_study(
        base.study, dict(base.baseline), {key: 1.7 for key in base.effects}
    )
    study = constant.study
    weights = att_weights(study, GATE_BIN)

    plain_terms = []
    refined_terms = []
    for assignment, prob in enumerate_assignments(study.design):
        realized = realize_outcomes(constant, assignment)
        plain = conservative_variance(realized, weights)
        refined = conservative_variance(realized, weights, recover_fifth_term=True)
        assert "treated_region" in refined.components
        assert "treated_region" not in plain.components
        assert refined.components["treated_region"] >= 0.0
        assert refined.total <= plain.total + 1e-15
        assert refined.total >= 0.0
        assert math.fsum(refined.per_region.values()) == pytest.approx(
            refined.total, rel=1e-9, abs=1e-12
        )
        plain_terms.append(prob * plain.total)
        refined_terms.append(prob * refined.total)
    assert math.fsum(refined_terms) < math.fsum(plain_terms)


def test_fifth_term_recovery_requires_fixed_treated_count():
    synthetic = gate_synthetic(4, 2, "bernoulli")
    assignment = Assignment(
        {
            "R1": frozenset({"R1s1"}),
            "R2": frozenset({"R2s2"}),
            "R3": frozenset(),
            "R4": frozenset(),
        }
    )
    realized = realize_outcomes(synthetic, assignment)
    weights = att_weights(realized, GATE_BIN)
    assert conservative_variance(realized, weights).total > 0.0
    with pytest.raises(UnsupportedDesignError, match="completely randomized"):
        conservative_variance(realized, weights, recover_fifth_term=True)


def test_conservative_variance_requires_two_contributing_regions_per_arm():
    one_treated = gate_synthetic(2, 2, "cr")
    realized = realize_outcomes(one_treated, one_treated.study.assignment)
    with pytest.raises(InsufficientReplicationError, match="treated"):
        conservative_variance(realized, att_weights(realized, GATE_BIN))

    base = gate_synthetic(3, 2, "cr")
    study = base.study
    design = Design(
        CompletelyRandomized(3, 2), {r: study.design.law(r) for r in study.regions}
    )
    assignment = Assignment(
        {
            "R1": frozenset({"R1s1"}),
            "R2": frozenset({"R2s1"}),
            "R3": frozenset(),
        }
    )
    skeleton = Study(study.individuals, study.locations, design, assignment, study.metric)
    synthetic = make_synthetic_study(skeleton, dict(base.baseline), dict(base.effects))
    one_control = realize_outcomes(synthetic, assignment)
    with pytest.raises(InsufficientReplicationError, match="control"):
        conservative_variance(one_control, att_weights(one_control, GATE_BIN))


def test_conservative_variance_rejects_empty_weights():
    synthetic = heterogeneous_synthetic()
    realized = realize_outcomes(synthetic, synthetic.study.assignment)
    far = att_weights(realized, DistanceBin(1000.0, 0.5))
    with pytest.raises(ZeroWeightError):
        conservative_variance(realized, far)


def test_constant_outcomes_within_arms_have_zero_variance():
    synthetic = grid_synthetic([[2.0, 2.0]] * 4, 0.5)
    weights = att_weights(synthetic.study, OWN_LOCATION_BIN)
    assert true_variance(synthetic, weights) == 0.0


def test_all_equal_potential_outcomes_zero_every_component():
    synthetic = grid_synthetic([[2.0, 2.0]] * 4, 0.0)
    report = att_variance_components(synthetic, OWN_LOCATION_BIN)
    assert report.total == 0.0
    assert set(report.components.values()) == {0.0}


def test_identical_regions_give_zero_conservative_estimate():
    synthetic = grid_synthetic([[2.0, 4.0]] * 4, 0.25, locations=1)
    weights = att_weights(synthetic.study, WIDE_BIN)
    assert true_variance(synthetic, weights) == 0.0
    for assignment, _ in enumerate_assignments(synthetic.study.design):
        realized = realize_outcomes(synthetic, assignment)
        assert conservative_variance(realized, weights).total == 0.0


@pytest.mark.parametrize(
    "build, bin_",
    [
        pytest.param(heterogeneous_synthetic, GATE_BIN, id="heterogeneous"),
        pytest.param(lambda: gate_synthetic(6, 2, "cr"), GATE_BIN, id="six-regions"),
        pytest.param(equal_count_synthetic, EQUAL_COUNT_BIN, id="equal-counts"),
        pytest.param(composition_synthetic, SHORT_BIN, id="single-candidate"),
    ],
)
def test_dropping_effect_terms_never_decreases_the_estimate(build, bin_):
    report = att_variance_components(build(), bin_)
    parts = report.components
    assert parts["effect_location"] >= parts["effect_region"] - 1e-12
    assert parts["treated_region"] >= 0.0
    kept = parts["treated_location"] + parts["control_region"]
    assert kept >= report.total - 1e-12


@pytest.mark.parametrize("bin_", [SHORT_BIN, LONG_BIN])
def test_single_candidate_regions_collapse_to_three_scaled_terms(bin_):
    synthetic = composition_synthetic()
    report = att_variance_components(synthetic, bin_)
    parts = report.components
    rho = (2 - 1) / (4 - 1)
    assert parts["effect_region"] == pytest.approx(rho * parts["effect_location"], rel=1e-12)
    assert parts["treated_region"] == pytest.approx(
        rho * parts["treated_location"], rel=1e-12
    )
    collapsed = (1.0 - rho) * (
        parts["treated_location"] - parts["effect_location"]
    ) + parts["control_region"]
    assert report.total == pytest.approx(collapsed, rel=1e-10)


def test_equal_within_region_treated_means_put_the_region_share_at_rho():
    synthetic = grid_synthetic(
        [[0.0], [1.0], [2.0], [3.0]], 0.5, equidistant=True
    )
    report = att_variance_components(synthetic, MIDPOINT_BIN)
    parts = report.components
    rho = (2 - 1) / (4 - 1)
    assert parts["treated_region"] == pytest.approx(
        rho * parts["treated_location"], rel=1e-12
    )
    assert parts["effect_location"] == 0.0
    assert parts["effect_region"] == 0.0


def test_fifth_term_recovery_is_inert_without_regional_dispersion():
    synthetic = grid_synthetic([[2.0, 4.0]] * 4, 0.25, locations=2)
    weights = att_weights(synthetic.study, OWN_LOCATION_BIN)
    target = true_variance(synthetic, weights)
    expectation_terms = []
    for assignment, prob in enumerate_assignments(synthetic.study.design):
        realized = realize_outcomes(synthetic, assignment)
        plain = conservative_variance(realized, weights)
        refined = conservative_variance(realized, weights, recover_fifth_term=True)
        assert refined.total == plain.total
        assert refined.components["treated_region"] == 0.0
        expectation_terms.append(prob * plain.total)
    assert math.fsum(expectation_terms) == pytest.approx(target, rel=1e-12)


def test_cross_bin_covariance_matches_enumeration_on_two_regions():
    synthetic = two_bin_synthetic()
    study = synthetic.study
    w_near = att_weights(study, NEAR_BIN)
    w_far = att_weights(study, FAR_BIN)
    est_near = make_demeaned_estimator(synthetic, w_near)
    est_far = make_demeaned_estimator(synthetic, w_far)
    rows = [
        (prob, est_near.tau(realize_outcomes(synthetic, a)), est_far.tau(realize_outcomes(synthetic, a)))
        for a, prob in enumerate_assignments(study.design)
    ]
    mean_near = math.fsum(p * a for p, a, _ in rows)
    mean_far = math.fsum(p * b for p, _, b in rows)
    expected = math.fsum(p * (a - mean_near) * (b - mean_far) for p, a, b in rows)
    assert cross_bin_covariance(synthetic, w_near, w_far) == pytest.approx(
        expected, rel=1e-10, abs=1e-14
    )


def test_inert_far_bin_has_zero_covariance_with_the_near_bin():
    synthetic = two_bin_synthetic(far_effects=False)
    study = synthetic.study
    w_near = att_weights(study, NEAR_BIN)
    w_far = att_weights(study, FAR_BIN)
    est_far = make_demeaned_estimator(synthetic, w_far)
    values = {
        est_far.tau(realize_outcomes(synthetic, a))
        for a, _ in enumerate_assignments(study.design)
    }
    assert values == {0.0}
    assert cross_bin_covariance(synthetic, w_near, w_far) == 0.0
    assert true_variance(synthetic, w_near) > 0.0


def test_exact_variance_requires_single_location_regions():
    synthetic = single_region_synthetic()
    weights = custom_weights(synthetic.study, {("i1", "a"): 1.0})
    with pytest.raises(UnsupportedDesignError, match="single-location"):
        true_variance(synthetic, weights)
    with pytest.raises(UnsupportedDesignError, match="single-location"):
        att_variance_components(helpers.choose_two_synthetic(), helpers.UNIT_BIN)
