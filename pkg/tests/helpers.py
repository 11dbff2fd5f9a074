"""Shared study builders for the test suite.

Every builder returns a :class:`SyntheticStudy` whose potential outcomes are
fully known, so tests can enumerate exact moments over the assignment design
and compare them against closed forms or hand-derived estimands.  Values are
deterministic arithmetic in the loop indices — heterogeneous but reproducible
without a random number generator.
"""

from __future__ import annotations

import math

from spatialtreat import (
    Assignment,
    BernoulliAcross,
    BinPartition,
    CandidateLocation,
    CompletelyRandomized,
    Design,
    DistanceBin,
    Euclidean,
    FixedK,
    IndependentLocations,
    Individual,
    Location,
    SingleLocation,
    Study,
    make_synthetic_study,
)

EUCLID = Euclidean()

# Wide enough to hold every within-region pair of the gate family below.
GATE_BIN = DistanceBin(0.75, 0.75)

REGION_SPACING = 100.0


def gate_synthetic(n_regions: int, n_locations: int, across: str = "cr"):
    """Small single-location-per-treated-region study with known outcomes.

    ``n_locations`` candidate locations per region with non-uniform draw
    probabilities, two individuals per region within :data:`GATE_BIN` of
    every location, heterogeneous baselines and per-pair effects.
    ``across`` picks completely randomized (half the regions treated) or
    Bernoulli (region-specific probabilities) region assignment.
    """
    individuals, locations, within = [], [], {}
    baseline, effects = {}, {}
    for j in range(n_regions):
        region = f"R{j + 1}"
        off = REGION_SPACING * j
        g_raw = [k + 1.0 for k in range(n_locations)]
        g_total = sum(g_raw)
        g = {}
        for k in range(n_locations):
            sid = f"{region}s{k + 1}"
            locations.append(CandidateLocation(sid, region, Location(off + 0.7 * k, 0.0)))
            g[sid] = g_raw[k] / g_total
        within[region] = SingleLocation(g)
        for m in range(2):
            iid = f"{region}i{m + 1}"
            individuals.append(
                Individual(iid, region, Location(off + 0.3 + 0.45 * m, 0.4), 0.0)
            )
            baseline[iid] = 0.8 * j + 0.6 * m - 1.1
            for k in range(n_locations):
                effects[(iid, f"{region}s{k + 1}")] = (
                    0.25 * (m + 1) * (k + 1) + 0.1 * j - 0.3
                )
    regions = [f"R{j + 1}" for j in range(n_regions)]
    if across == "cr":
        n_treated = max(1, n_regions // 2)
        across_law = CompletelyRandomized(n_regions, n_treated)
    elif across == "bernoulli":
        across_law = BernoulliAcross(
            {r: 0.25 + 0.1 * j for j, r in enumerate(regions)}
        )
        n_treated = 1
    else:
        raise ValueError(f"unknown across law {across!r}")
    assignment = Assignment(
        {
            r: frozenset({f"{r}s1"}) if j < n_treated else frozenset()
            for j, r in enumerate(regions)
        }
    )
    design = Design(across_law, within)
    skeleton = Study(individuals, locations, design, assignment, EUCLID)
    return make_synthetic_study(skeleton, baseline, effects)


def heterogeneous_synthetic():
    """Four-region CR(4, 2) fixture with strongly varying effects.

    Every assignment has two treated and two control regions, so the
    feasible conservative variance estimator is defined on the whole
    support; effect heterogeneity makes its upward bias strict.
    """
    return gate_synthetic(4, 2, "cr")


def equal_count_synthetic():
    """Uniform draw probabilities and one in-bin individual per location.

    Under complete randomization this makes both arms' weight totals
    non-stochastic, so the feasible ratio estimator coincides with the
    demeaned one on every assignment.  Locations within a region sit far
    apart; each individual is in the unit bin of exactly one location.
    """
    individuals, locations, within = [], [], {}
    baseline, effects = {}, {}
    regions = ("R1", "R2", "R3")
    for j, region in enumerate(regions):
        off = REGION_SPACING * j
        g = {}
        for k in range(2):
            sid = f"{region}s{k + 1}"
            locations.append(
                CandidateLocation(sid, region, Location(off + 10.0 * k, 0.0))
            )
            g[sid] = 0.5
            iid = f"{region}i{k + 1}"
            individuals.append(
                Individual(iid, region, Location(off + 10.0 * k + 0.6, 0.0), 0.0)
            )
            baseline[iid] = 0.9 * j - 0.4 * k + 0.2
            effects[(iid, sid)] = 1.0 + 0.7 * j + 0.4 * k
        within[region] = SingleLocation(g)
    assignment = Assignment(
        {"R1": frozenset({"R1s1"}), "R2": frozenset(), "R3": frozenset()}
    )
    design = Design(CompletelyRandomized(3, 1), within)
    skeleton = Study(individuals, locations, design, assignment, EUCLID)
    return make_synthetic_study(skeleton, baseline, effects)


EQUAL_COUNT_BIN = DistanceBin(0.5, 0.5)

SHORT_BIN = DistanceBin(1.0, 0.25)
LONG_BIN = DistanceBin(2.0, 0.25)


def composition_synthetic():
    """Two effect-carrying regions whose individuals concentrate at opposite
    distances, plus two zero-baseline control regions.

    Each region's own effect decreases with distance (5 → 3, 1 → 0.5,
    0.2 → 0.1), yet pooling with exposure-probability weights reverses the
    slope because the far bin is dominated by the high-effect region.
    """
    individuals, locations, within = [], [], {}
    baseline, effects = {}, {}
    spec = {
        "A": ((5.0, 1), (3.0, 9)),
        "B": ((1.0, 9), (0.5, 1)),
        "C1": ((0.2, 1), (0.1, 1)),
        "C2": ((0.2, 1), (0.1, 1)),
    }
    for j, (region, ((eff_short, n_short), (eff_long, n_long))) in enumerate(
        spec.items()
    ):
        off = REGION_SPACING * j
        sid = f"{region}s"
        locations.append(CandidateLocation(sid, region, Location(off, 0.0)))
        within[region] = SingleLocation({sid: 1.0})
        counter = 0
        for eff, n, d in ((eff_short, n_short, 1.0), (eff_long, n_long, 2.0)):
            for _ in range(n):
                counter += 1
                iid = f"{region}i{counter}"
                individuals.append(
                    Individual(iid, region, Location(off + d, 0.01 * counter), 0.0)
                )
                baseline[iid] = 0.0
                effects[(iid, sid)] = eff
    assignment = Assignment(
        {
            "A": frozenset({"As"}),
            "B": frozenset({"Bs"}),
            "C1": frozenset(),
            "C2": frozenset(),
        }
    )
    design = Design(CompletelyRandomized(4, 2), within)
    skeleton = Study(individuals, locations, design, assignment, EUCLID)
    return make_synthetic_study(skeleton, baseline, effects)


UNIT_BIN = DistanceBin(1.0, 0.5)

CROSS_EFFECTS = {
    ("R1i1", "R1a"): 2.0,
    ("R1i2", "R1b"): 3.0,
    ("R1i3", "R1c"): 4.0,
    ("R1i1", "R1b"): 0.7,
    ("R1i1", "R1c"): -0.4,
    ("R1i2", "R1a"): 0.5,
    ("R1i2", "R1c"): 0.9,
    ("R1i3", "R1a"): -0.2,
    ("R1i3", "R1b"): 0.3,
}


def _three_location_region(n_realized: int, rule: str):
    """One region with three candidates, a fixed realized count, and one
    individual in the unit bin of each candidate; plus a far-away partner
    region so region treatment stays a coin flip."""
    locations = [
        CandidateLocation("R1a", "R1", Location(0.0, 0.0)),
        CandidateLocation("R1b", "R1", Location(4.0, 0.0)),
        CandidateLocation("R1c", "R1", Location(8.0, 0.0)),
        CandidateLocation("R2s", "R2", Location(200.0, 0.0)),
    ]
    individuals = [
        Individual("R1i1", "R1", Location(1.0, 0.0), 0.0),
        Individual("R1i2", "R1", Location(5.0, 0.0), 0.0),
        Individual("R1i3", "R1", Location(9.0, 0.0), 0.0),
        Individual("R2i1", "R2", Location(250.0, 0.0), 0.0),
    ]
    baseline = {"R1i1": 1.0, "R1i2": -2.0, "R1i3": 0.5, "R2i1": 0.7}
    within = {
        "R1": FixedK(("R1a", "R1b", "R1c"), n_realized),
        "R2": FixedK(("R2s",), 1),
    }
    design = Design(CompletelyRandomized(2, 1), within)
    realized = frozenset(["R1a", "R1b", "R1c"][:n_realized])
    assignment = Assignment({"R1": realized, "R2": frozenset()})
    skeleton = Study(individuals, locations, design, assignment, EUCLID)
    return make_synthetic_study(skeleton, baseline, dict(CROSS_EFFECTS), rule=rule)


def choose_two_synthetic():
    """Three candidates, exactly two realized, additive effects."""
    return _three_location_region(2, "additive")


def nearest_synthetic(n_realized: int = 1):
    """Three candidates under the nearest-location-matters outcome rule."""
    return _three_location_region(n_realized, "nearest")


def single_region_synthetic():
    """One region, three independently realized locations at probability 1/2.

    One individual per location, affected only by its own location; with
    equal odds and equal bin counts the marginal-location estimator's
    conditional mean equals (sum of own effects) / 3 exactly, and the
    all-realized / none-realized assignments (mass 1/4) are undefined.
    """
    locations = [
        CandidateLocation("a", "R", Location(0.0, 0.0)),
        CandidateLocation("b", "R", Location(4.0, 0.0)),
        CandidateLocation("c", "R", Location(8.0, 0.0)),
    ]
    individuals = [
        Individual("i1", "R", Location(1.0, 0.0), 0.0),
        Individual("i2", "R", Location(5.0, 0.0), 0.0),
        Individual("i3", "R", Location(9.0, 0.0), 0.0),
    ]
    baseline = {"i1": 2.0, "i2": -1.0, "i3": 0.5}
    effects = {("i1", "a"): 1.0, ("i2", "b"): 1.5, ("i3", "c"): 2.5}
    design = Design(None, {"R": IndependentLocations({"a": 0.5, "b": 0.5, "c": 0.5})})
    assignment = Assignment({"R": frozenset({"a"})})
    skeleton = Study(individuals, locations, design, assignment, EUCLID)
    return make_synthetic_study(skeleton, baseline, effects)


SINGLE_REGION_ESTIMAND = (1.0 + 1.5 + 2.5) / 3.0


def size_heterogeneous_synthetic():
    """Two regions of very different sizes, zero effects, common baseline.

    The per-distance curve is identically zero on every assignment, while
    the direct region-sum contrast swings with which region is treated.
    """
    individuals, locations, within = [], [], {}
    baseline, effects = {}, {}
    for j, (region, n_inds) in enumerate((("S", 2), ("L", 9))):
        off = REGION_SPACING * j
        sid = f"{region}s"
        locations.append(CandidateLocation(sid, region, Location(off, 0.0)))
        within[region] = SingleLocation({sid: 1.0})
        for m in range(n_inds):
            iid = f"{region}i{m + 1}"
            individuals.append(
                Individual(iid, region, Location(off + 1.0, 0.05 * m), 0.0)
            )
            baseline[iid] = 1.0
    design = Design(CompletelyRandomized(2, 1), within)
    assignment = Assignment({"S": frozenset({"Ss"}), "L": frozenset()})
    skeleton = Study(individuals, locations, design, assignment, EUCLID)
    return make_synthetic_study(skeleton, baseline, effects)


AGGREGATE_PARTITION = BinPartition((0.0, 2.0, 4.0))


def aggregate_synthetic():
    """Two-region CR(2, 1) study with one individual per (location, bin).

    Uniform draw probabilities and equal bin counts keep both arm totals
    non-stochastic, so every per-bin estimate is exactly unbiased and the
    curve-integrated aggregate matches its estimand in oracle mean.
    """
    individuals, locations, within = [], [], {}
    baseline, effects = {}, {}
    for j, region in enumerate(("R1", "R2")):
        off = REGION_SPACING * j
        g = {}
        for k in range(2):
            sid = f"{region}s{k + 1}"
            loc_x = off + 20.0 * k
            locations.append(CandidateLocation(sid, region, Location(loc_x, 0.0)))
            g[sid] = 0.5
            for b, d in enumerate((1.0, 3.0)):
                iid = f"{region}i{k + 1}{b + 1}"
                individuals.append(
                    Individual(iid, region, Location(loc_x + d, 0.0), 0.0)
                )
                baseline[iid] = 0.3 * j - 0.2 * k + 0.1 * b
                effects[(iid, sid)] = 1.0 + 0.8 * j + 0.5 * k - 0.6 * b
        within[region] = SingleLocation(g)
    design = Design(CompletelyRandomized(2, 1), within)
    assignment = Assignment({"R1": frozenset({"R1s1"}), "R2": frozenset()})
    skeleton = Study(individuals, locations, design, assignment, EUCLID)
    return make_synthetic_study(skeleton, baseline, effects)


DR_BIN = DistanceBin(1.0, 0.25)


def dr_synthetic():
    """Three regions, two candidates each, exactly one realized per region.

    Region treatment is certain and each individual sits in the unit bin
    of exactly one candidate with no cross effects, so exactly one treated
    and one control pair appear per region on every assignment.  The
    constant pair counts make the doubly robust estimator exactly unbiased
    under either a correct propensity or a correct outcome model.
    """
    g = {"A": (0.4, 0.6), "B": (0.5, 0.5), "C": (0.3, 0.7)}
    baselines = {"A": (2.0, -1.0), "B": (0.5, 3.0), "C": (-2.0, 1.0)}
    taus = {"A": (1.0, 3.0), "B": (-2.0, 4.0), "C": (0.5, -1.5)}
    individuals, locations, within = [], [], {}
    baseline, effects = {}, {}
    for region in ("A", "B", "C"):
        sa, sb = f"{region}a", f"{region}b"
        locations += [
            CandidateLocation(sa, region, Location(0.0, 0.0)),
            CandidateLocation(sb, region, Location(10.0, 0.0)),
        ]
        within[region] = SingleLocation({sa: g[region][0], sb: g[region][1]})
        ia, ib = f"i{region}a", f"i{region}b"
        individuals += [
            Individual(ia, region, Location(1.0, 0.0), 0.0),
            Individual(ib, region, Location(10.0, 1.0), 0.0),
        ]
        baseline[ia], baseline[ib] = baselines[region]
        effects[(ia, sa)], effects[(ib, sb)] = taus[region]
        effects[(ia, sb)] = 0.0
        effects[(ib, sa)] = 0.0
    design = Design(BernoulliAcross({r: 1.0 for r in ("A", "B", "C")}), within)
    assignment = Assignment({r: frozenset({f"{r}a"}) for r in ("A", "B", "C")})
    skeleton = Study(individuals, locations, design, assignment, EUCLID)
    return make_synthetic_study(skeleton, baseline, effects)


def dr_estimand(synthetic, bin_):
    """Exposure-probability-weighted mean pair effect over in-bin pairs."""
    from spatialtreat import marginal_prob

    study = synthetic.study
    num, den = 0.0, 0.0
    for ind in study.individuals:
        for s in study.locations_in(ind.region):
            if bin_.contains(study.distance(s.id, ind.id)):
                e = marginal_prob(study.design, s.region, s.id)
                num += e * synthetic.effect(ind.id, s.id)
                den += e
    return num / den


def null_synthetic():
    """Zero-effect CR(4, 2) study with varied baselines, for sharp-null
    randomization tests: every assignment reproduces the same outcomes."""
    syn = gate_synthetic(4, 2, "cr")
    return make_synthetic_study(syn.study, dict(syn.baseline), {})


def propensity_locations(n: int = 40, seed: int = 7):
    """Candidate locations with two covariates and treatment drawn from a
    known logistic model, for likelihood-solver checks."""
    import numpy as np

    rng = np.random.default_rng(seed)
    beta = (-0.3, 0.8, -0.5)
    out = []
    for i in range(n):
        z1, z2 = (float(v) for v in rng.normal(size=2))
        p = 1.0 / (1.0 + math.exp(-(beta[0] + beta[1] * z1 + beta[2] * z2)))
        out.append(
            CandidateLocation(
                f"s{i}",
                "A",
                Location(float(i), 0.0),
                treated=bool(rng.random() < p),
                covariates={"z1": z1, "z2": z2},
            )
        )
    return out


def assert_close(actual, expected, tol, label=""):
    __tracebackhide__ = True
    gap = abs(actual - expected)
    assert gap < tol, f"{label} |{actual!r} - {expected!r}| = {gap!r} >= {tol!r}"
