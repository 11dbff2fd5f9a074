import math

import pytest

from spatialtreat import (
    Assignment,
    BernoulliAcross,
    CompletelyRandomized,
    Design,
    FixedK,
    IndependentLocations,
    SingleLocation,
    design_C,
    enumerate_assignments,
    marginal_prob,
    sample_assignment,
)
from spatialtreat.design import (
    conditional_location_prob,
    pair_covariance,
    region_pi,
    validate_assignment,
)
from spatialtreat.errors import (
    EnumerationTooLargeError,
    UnknownRegionError,
    UnsupportedDesignError,
    ValidationError,
)


def two_region_design():
    return Design(
        CompletelyRandomized(2, 1),
        {
            "R1": SingleLocation({"a": 0.25, "b": 0.25, "c": 0.5}),
            "R2": SingleLocation({"d": 1.0}),
        },
    )


# ---------------------------------------------------------------------------
# Construction and validation
# ---------------------------------------------------------------------------


def test_completely_randomized_bounds():
    with pytest.raises(ValidationError):
        CompletelyRandomized(3, 0)
    with pytest.raises(ValidationError):
        CompletelyRandomized(3, 3)
    assert CompletelyRandomized(4, 1).pi == 0.25


def test_bernoulli_probability_bounds():
    with pytest.raises(ValidationError):
        BernoulliAcross({"A": 1.5})
    with pytest.raises(ValidationError):
        BernoulliAcross({"A": -0.2})
    law = BernoulliAcross({"A": 0.0, "B": 1.0})
    assert law.pi == {"A": 0.0, "B": 1.0}


def test_single_location_g_must_sum_to_one():
    with pytest.raises(ValidationError):
        SingleLocation({"a": 0.5, "b": 0.4})
    with pytest.raises(ValidationError):
        SingleLocation({})
    law = SingleLocation({"b": 0.5, "a": 0.5})
    assert law.locations == ("a", "b")


def test_fixed_k_bounds():
    with pytest.raises(ValidationError):
        FixedK(("a", "b"), 0)
    with pytest.raises(ValidationError):
        FixedK(("a", "b"), 3)
    with pytest.raises(ValidationError):
        FixedK(("a", "a"), 1)
    assert FixedK(("b", "a"), 2).locations == ("a", "b")


def test_independent_locations_bounds():
    with pytest.raises(ValidationError):
        IndependentLocations({})
    with pytest.raises(ValidationError):
        IndependentLocations({"a": 1.2})


def test_design_cross_validation():
    with pytest.raises(ValidationError):
        Design(CompletelyRandomized(3, 1), {"R1": SingleLocation({"a": 1.0})})
    with pytest.raises(ValidationError):
        Design(BernoulliAcross({"R1": 0.5}), {"R2": SingleLocation({"a": 1.0})})
    with pytest.raises(ValidationError):
        # the independent mode is single-region with no across-region law
        Design(
            CompletelyRandomized(2, 1),
            {"R1": IndependentLocations({"a": 0.5}), "R2": SingleLocation({"b": 1.0})},
        )
    with pytest.raises(ValidationError):
        Design(None, {"R1": SingleLocation({"a": 1.0})})
    single = Design(None, {"R1": IndependentLocations({"a": 0.5})})
    assert single.is_independent
    with pytest.raises(UnknownRegionError):
        single.law("nope")


def test_assignment_normalization_and_equality():
    a = Assignment({"R1": ["b", "a"], "R2": []})
    b = Assignment({"R2": set(), "R1": ("a", "b")})
    assert a == b and hash(a) == hash(b)
    assert a.xi("R1") == frozenset({"a", "b"})
    assert a.treated("R1") and not a.treated("R2")
    assert a.treated_regions == ("R1",)


def test_validate_assignment_rules():
    design = two_region_design()
    validate_assignment(design, Assignment({"R1": {"a"}, "R2": set()}))
    with pytest.raises(ValidationError):
        validate_assignment(design, Assignment({"R1": {"a"}}))
    with pytest.raises(ValidationError):
        validate_assignment(design, Assignment({"R1": {"z"}, "R2": set()}))
    with pytest.raises(ValidationError):
        validate_assignment(design, Assignment({"R1": {"a", "b"}, "R2": set()}))
    with pytest.raises(ValidationError):
        # CR(2, 1) never treats both regions
        validate_assignment(design, Assignment({"R1": {"a"}, "R2": {"d"}}))
    fixed = Design(
        CompletelyRandomized(2, 1),
        {"R1": FixedK(("a", "b", "c"), 2), "R2": FixedK(("d",), 1)},
    )
    with pytest.raises(ValidationError):
        validate_assignment(fixed, Assignment({"R1": {"a"}, "R2": set()}))
    validate_assignment(fixed, Assignment({"R1": {"a", "c"}, "R2": set()}))


# ---------------------------------------------------------------------------
# Probabilities and covariance constants
# ---------------------------------------------------------------------------


def test_region_pi_and_marginal_prob():
    design = two_region_design()
    assert region_pi(design, "R1") == 0.5
    assert marginal_prob(design, "R1", "c") == 0.5 * 0.5
    assert conditional_location_prob(design, "R1", "a") == 0.25
    bern = Design(
        BernoulliAcross({"R1": 0.3}), {"R1": SingleLocation({"a": 1.0})}
    )
    assert region_pi(bern, "R1") == 0.3
    fixed = Design(
        BernoulliAcross({"R1": 0.5}), {"R1": FixedK(("a", "b", "c"), 2)}
    )
    assert conditional_location_prob(fixed, "R1", "a") == pytest.approx(2 / 3)
    assert marginal_prob(fixed, "R1", "a") == pytest.approx(0.5 * 2 / 3)
    indep = Design(None, {"R1": IndependentLocations({"a": 0.4})})
    assert marginal_prob(indep, "R1", "a") == 0.4
    with pytest.raises(UnsupportedDesignError):
        region_pi(indep, "R1")


def test_design_C_regimes():
    assert design_C(two_region_design()) == 0.5 * 0.5 / 1
    cr3 = Design(
        CompletelyRandomized(3, 1),
        {f"R{j}": SingleLocation({f"s{j}": 1.0}) for j in (1, 2, 3)},
    )
    assert design_C(cr3) == pytest.approx((1 / 3) * (2 / 3) / 2)
    bern = Design(
        BernoulliAcross({"R1": 0.3, "R2": 0.6}),
        {"R1": SingleLocation({"a": 1.0}), "R2": SingleLocation({"b": 1.0})},
    )
    assert design_C(bern) == 0.0
    with pytest.raises(UnsupportedDesignError):
        design_C(Design(None, {"R1": IndependentLocations({"a": 0.5})}))


def enumerated_indicator_moments(design):
    """E[W_j], Cov(W_j, W_k) and Cov(T_j(s), T_k(s')) by brute force."""
    support = enumerate_assignments(design)
    regions = design.regions

    def mean(f):
        return math.fsum(p * f(a) for a, p in support)

    w_mean = {j: mean(lambda a, j=j: float(a.treated(j))) for j in regions}

    def w_cov(j, k):
        return mean(
            lambda a: (float(a.treated(j)) - w_mean[j]) * (float(a.treated(k)) - w_mean[k])
        )

    def t_cov(first, second):
        (j1, s1), (j2, s2) = first, second
        m1 = mean(lambda a: float(s1 in a.xi(j1)))
        m2 = mean(lambda a: float(s2 in a.xi(j2)))
        return mean(
            lambda a: (float(s1 in a.xi(j1)) - m1) * (float(s2 in a.xi(j2)) - m2)
        )

    return w_mean, w_cov, t_cov


def test_region_indicator_moments_by_enumeration():
    design = two_region_design()
    w_mean, w_cov, _ = enumerated_indicator_moments(design)
    assert w_mean["R1"] == pytest.approx(0.5, abs=1e-12)
    assert w_cov("R1", "R1") == pytest.approx(0.25, abs=1e-12)
    cr3 = Design(
        CompletelyRandomized(3, 1),
        {f"R{j}": SingleLocation({f"s{j}": 1.0}) for j in (1, 2, 3)},
    )
    _, w_cov3, _ = enumerated_indicator_moments(cr3)
    assert w_cov3("R1", "R2") == pytest.approx(-1 / 9, abs=1e-12)
    assert w_cov3("R1", "R2") == pytest.approx(-design_C(cr3), abs=1e-12)


def test_pair_covariance_matches_enumeration():
    design = two_region_design()
    _, _, t_cov = enumerated_indicator_moments(design)
    pairs = [("R1", "a"), ("R1", "b"), ("R1", "c"), ("R2", "d")]
    for first in pairs:
        for second in pairs:
            closed = pair_covariance(design, first, second)
            assert closed == pytest.approx(t_cov(first, second), abs=1e-12)
    bern = Design(
        BernoulliAcross({"R1": 0.3, "R2": 0.6}),
        {
            "R1": SingleLocation({"a": 0.25, "b": 0.75}),
            "R2": SingleLocation({"d": 1.0}),
        },
    )
    _, _, t_cov_b = enumerated_indicator_moments(bern)
    for first in [("R1", "a"), ("R1", "b"), ("R2", "d")]:
        for second in [("R1", "a"), ("R1", "b"), ("R2", "d")]:
            closed = pair_covariance(bern, first, second)
            assert closed == pytest.approx(t_cov_b(first, second), abs=1e-12)
    fixed = Design(BernoulliAcross({"R1": 0.5}), {"R1": FixedK(("a", "b"), 1)})
    with pytest.raises(UnsupportedDesignError):
        pair_covariance(fixed, ("R1", "a"), ("R1", "b"))


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------


def test_enumeration_support_probabilities():
    design = two_region_design()
    support = enumerate_assignments(design)
    # one of two regions treated; three single-location choices in R1, one in R2
    assert len(support) == 3 + 1
    assert math.fsum(p for _, p in support) == pytest.approx(1.0, abs=1e-12)
    probs = {a: p for a, p in support}
    assert probs[Assignment({"R1": {"c"}, "R2": set()})] == pytest.approx(0.25)
    assert probs[Assignment({"R1": set(), "R2": {"d"}})] == pytest.approx(0.5)


def test_enumeration_fixed_k_equiprobable_subsets():
    design = Design(BernoulliAcross({"R1": 0.6}), {"R1": FixedK(("a", "b", "c"), 2)})
    support = dict(enumerate_assignments(design))
    assert len(support) == 4  # three subsets plus the untreated assignment
    for subset in ({"a", "b"}, {"a", "c"}, {"b", "c"}):
        assert support[Assignment({"R1": subset})] == pytest.approx(0.6 / 3)
    assert support[Assignment({"R1": set()})] == pytest.approx(0.4)


def test_enumeration_independent_locations():
    design = Design(None, {"R": IndependentLocations({"a": 0.5, "b": 0.25})})
    support = dict(enumerate_assignments(design))
    assert len(support) == 4
    assert support[Assignment({"R": {"a", "b"}})] == pytest.approx(0.5 * 0.25)
    assert support[Assignment({"R": set()})] == pytest.approx(0.5 * 0.75)


def test_enumeration_cap():
    design = Design(
        None, {"R": IndependentLocations({f"s{k}": 0.5 for k in range(12)})}
    )
    with pytest.raises(EnumerationTooLargeError):
        enumerate_assignments(design, cap=1000)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def test_sampling_valid_and_deterministic():
    design = Design(
        CompletelyRandomized(3, 2),
        {
            "R1": SingleLocation({"a": 0.25, "b": 0.75}),
            "R2": FixedK(("c", "d", "e"), 2),
            "R3": SingleLocation({"f": 1.0}),
        },
    )
    draws = [sample_assignment(design, seed=k) for k in range(40)]
    for a in draws:
        validate_assignment(design, a)
        assert len(a.treated_regions) == 2
    again = [sample_assignment(design, seed=k) for k in range(40)]
    assert draws == again


def test_sampling_frequencies_match_design():
    design = two_region_design()
    support = dict(enumerate_assignments(design))
    counts = {a: 0 for a in support}
    n = 4000
    for k in range(n):
        counts[sample_assignment(design, seed=k)] += 1
    for a, p in support.items():
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(counts[a] / n - p) < 5 * sigma
