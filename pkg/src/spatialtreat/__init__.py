"""Design-based estimation and inference for spatial treatments.

Treatments here happen at geographic points — a store opens, a well is
drilled — and affect the individuals around them, so "who is treated" is
replaced by "who is how far from a realized treatment location". The
package provides:

* a validated data model for individuals, candidate treatment locations,
  regions, and two-stage assignment designs (:mod:`~spatialtreat.data`,
  :mod:`~spatialtreat.design`, :mod:`~spatialtreat.geometry`);
* distance-bin effect estimators with exact design-based variance theory
  and feasible conservative variance estimates
  (:mod:`~spatialtreat.weighting`, :mod:`~spatialtreat.estimators`,
  :mod:`~spatialtreat.variance`);
* aggregated per-location effects and a parametric weighted-least-squares
  effect curve (:mod:`~spatialtreat.aggregate`,
  :mod:`~spatialtreat.parametric`);
* estimators that stay valid when several realized locations affect the
  same individual (:mod:`~spatialtreat.interference`);
* observational-data tooling — grids, data augmentation, propensity
  scores, matching, and a doubly robust estimator
  (:mod:`~spatialtreat.observational`);
* an exhaustive randomization oracle and Fisher permutation tests
  (:mod:`~spatialtreat.oracle`), plus a seed-deterministic simulator
  (:mod:`~spatialtreat.simulate`) and a batch CLI
  (:mod:`~spatialtreat.cli`).
"""

from .aggregate import (
    AggregateEstimate,
    BinPartition,
    PartitionCell,
    aatt_estimand,
    n_bar,
    tau_aatt1,
    tau_aatt2,
)
from .data import (
    CandidateLocation,
    Individual,
    Study,
    SyntheticStudy,
    arcsinh_transform,
    load_study,
    load_synthetic_study,
    make_synthetic_study,
    realize_outcomes,
)
from .design import (
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
from .errors import (
    EstimationError,
    SpatialTreatError,
    ValidationError,
)
from .estimators import (
    EffectCurve,
    control_mean,
    effect_curve,
    inner_outer_ring,
    make_demeaned_estimator,
    tau_att,
    tau_att_eq,
    tau_w,
    tau_w_estimand,
    treated_mean,
)
from .geometry import DistanceBin, Euclidean, GreatCircle, Kernel, Location
from .interference import (
    tau_additive,
    tau_additive_unit,
    tau_nearest,
    tau_nearest_unit,
    tau_single_region,
)
from .observational import (
    PropensityModel,
    SpatialGrid,
    augment,
    cross_fit_dr,
    discretize,
    doubly_robust_tau,
    fit_outcome_model,
    fit_propensity,
    overlap_and_match,
    propose_candidates,
)
from .oracle import exact_moments, permutation_test, zero_effect_null
from .parametric import (
    BasisSpec,
    build_design_rows,
    fit_aatt_regression,
    fit_wls,
    plug_in_aatt,
)
from .simulate import simulate
from .variance import (
    att_variance_components,
    conservative_variance,
    cross_bin_covariance,
    true_variance,
)
from .weighting import WeightTable, att_eq_weights, att_weights, custom_weights

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # data model
    "Individual",
    "CandidateLocation",
    "Study",
    "SyntheticStudy",
    "Location",
    "Euclidean",
    "GreatCircle",
    "DistanceBin",
    "Kernel",
    "arcsinh_transform",
    "load_study",
    "load_synthetic_study",
    "make_synthetic_study",
    "realize_outcomes",
    # designs
    "Design",
    "Assignment",
    "CompletelyRandomized",
    "BernoulliAcross",
    "SingleLocation",
    "FixedK",
    "IndependentLocations",
    "design_C",
    "marginal_prob",
    "enumerate_assignments",
    "sample_assignment",
    # weights and estimators
    "WeightTable",
    "att_weights",
    "att_eq_weights",
    "custom_weights",
    "tau_w",
    "tau_att",
    "tau_att_eq",
    "treated_mean",
    "control_mean",
    "tau_w_estimand",
    "make_demeaned_estimator",
    "effect_curve",
    "EffectCurve",
    "inner_outer_ring",
    # variance
    "true_variance",
    "att_variance_components",
    "conservative_variance",
    "cross_bin_covariance",
    # aggregation
    "PartitionCell",
    "BinPartition",
    "AggregateEstimate",
    "tau_aatt1",
    "tau_aatt2",
    "n_bar",
    "aatt_estimand",
    # parametric
    "BasisSpec",
    "build_design_rows",
    "fit_wls",
    "plug_in_aatt",
    "fit_aatt_regression",
    # interference
    "tau_additive_unit",
    "tau_additive",
    "tau_nearest_unit",
    "tau_nearest",
    "tau_single_region",
    # observational
    "SpatialGrid",
    "discretize",
    "augment",
    "PropensityModel",
    "fit_propensity",
    "overlap_and_match",
    "doubly_robust_tau",
    "fit_outcome_model",
    "cross_fit_dr",
    "propose_candidates",
    # oracle and simulation
    "exact_moments",
    "permutation_test",
    "zero_effect_null",
    "simulate",
    # errors
    "SpatialTreatError",
    "ValidationError",
    "EstimationError",
]
