"""Exception hierarchy for the spatialtreat package.

Errors are semantic: callers can catch broad families (``ValidationError``
for bad inputs, ``EstimationError`` for estimators that cannot produce a
value on the given data) or the precise condition.
"""

from __future__ import annotations


class SpatialTreatError(Exception):
    """Base class for all package errors."""


# ---------------------------------------------------------------------------
# Input validation
# ---------------------------------------------------------------------------


class ValidationError(SpatialTreatError):
    """Invalid input data or configuration."""


class DuplicateIdError(ValidationError):
    """An id column contains a repeated value."""


class UnknownRegionError(ValidationError):
    """An individual references a region with no candidate locations."""


class EmptyRegionError(ValidationError):
    """A region has candidate locations but no individuals."""


class ParseError(ValidationError):
    """A file row could not be parsed; the message names the row."""


class ConfigError(ValidationError):
    """Missing or inconsistent configuration keys."""


class NegativeWeightError(ValidationError):
    """A custom weight scheme produced a negative weight without opt-in."""


class ZeroWeightError(ValidationError):
    """All regression weights are zero."""


class InvalidLatitudeError(ValidationError):
    """A great-circle coordinate lies outside [-90, 90] degrees latitude."""


class MissingDistanceError(ValidationError):
    """A custom distance table has no entry for the requested pair."""


class CrossRegionDistanceError(SpatialTreatError):
    """A treatment-to-individual distance across regions was requested.

    Effects are assumed confined to regions, so these distances are never
    stored; asking for one is a logic error in the caller.
    """


class UnsupportedDesignError(SpatialTreatError):
    """The operation has no closed form for this assignment design."""


class EnumerationTooLargeError(SpatialTreatError):
    """The assignment support exceeds the enumeration cap."""


class IncompleteOracleError(SpatialTreatError):
    """A lookup-table outcome rule is missing a set in the design support."""


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


class EstimationError(SpatialTreatError):
    """An estimator cannot produce a value on the given data."""


class DegenerateEstimandError(EstimationError):
    """Total weight in an arm is zero; the estimand is undefined."""


class NoTreatedUnitsError(DegenerateEstimandError):
    """The treated arm is empty for the queried bin."""


class NoControlUnitsError(DegenerateEstimandError):
    """The control arm is empty for the queried bin."""


class InsufficientReplicationError(EstimationError):
    """Fewer than two contributing regions in an arm; no variance estimate."""


class EstimandNotIdentifiedError(EstimationError):
    """The requested estimand places weight on unidentified effects."""


class OverlapError(EstimationError):
    """A contributing location has treatment probability 0 or 1."""


class MissingPreOutcomeError(EstimationError):
    """Differencing requested but a pre-period outcome is missing."""


class EmptyNeighborhoodError(EstimationError):
    """No neighbors within the proxy radius."""


class NoIsolatedLocationsError(EstimationError):
    """No realized location is isolated enough for the ring comparison."""


class EmptyRingError(EstimationError):
    """An inner or outer ring has no individuals after restriction."""


class RankDeficiencyError(EstimationError):
    """The weighted design matrix is rank deficient.

    Carries the offending (linearly dependent) column names.
    """

    def __init__(self, columns: tuple[str, ...]):
        self.columns = tuple(columns)
        super().__init__(
            "design matrix is rank deficient; dependent columns: "
            + ", ".join(self.columns)
        )


class DegenerateBasisError(EstimationError):
    """A basis normalization denominator is zero."""


class CollinearityError(EstimationError):
    """Perfectly collinear covariates in a regression."""


class AllOneClassError(EstimationError):
    """Logistic fit requested with only one outcome class present."""


class NoMatchesError(EstimationError):
    """No control location matches any treated location within the caliper."""


# ---------------------------------------------------------------------------
# Warnings
# ---------------------------------------------------------------------------


class SeparationWarning(UserWarning):
    """Logistic likelihood is separable; coefficients diverge.

    The fit returns the last iterate with the separation flag set instead of
    failing silently.
    """
