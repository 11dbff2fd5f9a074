"""Exhaustive ground truth over the assignment distribution.

Any estimator is a function of the realized assignment, so on an
enumerable design its exact mean and variance are a finite weighted sum.
:func:`exact_moments` computes them by realizing a synthetic study under
every assignment in the support; :func:`permutation_test` runs the same
enumeration for Fisher-style sharp-null inference, falling back to
seeded Monte Carlo when the support is too large to enumerate.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Study, SyntheticStudy, make_synthetic_study, realize_outcomes
from .design import (
    DEFAULT_ENUMERATION_CAP,
    Assignment,
    enumerate_assignments,
    sample_assignment,
)
from .errors import (
    EnumerationTooLargeError,
    EstimationError,
    IncompleteOracleError,
)

Estimator = Callable[[Study], float]


@dataclass(frozen=True)
class SupportRow:
    """One assignment in the support: its probability and the estimator's value."""

    assignment: Assignment
    probability: float
    value: float | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class MomentReport:
    """Exact moments of an estimator, conditional on it being defined.

    ``excluded_mass`` is the total probability of assignments on which the
    estimator raised (for example an arm came up empty); the mean and
    variance condition on the complementary event rather than imputing a
    value, and the full support table keeps the failures visible.
    """

    mean: float
    variance: float
    support: tuple[SupportRow, ...]
    excluded_mass: float

    @property
    def included_mass(self) -> float:
        return 1.0 - self.excluded_mass

    @property
    def sd(self) -> float:
        return math.sqrt(max(self.variance, 0.0))

    def to_csv_text(self) -> str:
        lines = ["assignment,probability,value,error"]
        for row in self.support:
            value = "" if row.value is None else repr(row.value)
            error = row.error or ""
            lines.append(f"\"{row.assignment}\",{row.probability!r},{value},{error}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8")


def exact_moments(
    synthetic: SyntheticStudy,
    estimator: Estimator,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> MomentReport:
    """Exact mean and variance of ``estimator`` over the assignment design.

    Only :class:`EstimationError` is treated as "estimator undefined
    here"; anything else (bad design, bad inputs) propagates.
    """
    design = synthetic.study.design
    rows: list[SupportRow] = []
    for assignment, prob in enumerate_assignments(design, cap=cap):
        realized = realize_outcomes(synthetic, assignment)
        try:
            value = float(estimator(realized))
            error = None
        except EstimationError as exc:
            value = None
            error = type(exc).__name__
        rows.append(SupportRow(assignment, prob, value, error))
    included = math.fsum(r.probability for r in rows if not r.failed)
    excluded = math.fsum(r.probability for r in rows if r.failed)
    if included == 0.0:
        raise IncompleteOracleError("estimator failed on every assignment in the support")
    mean = math.fsum(r.probability * r.value for r in rows if not r.failed) / included
    second = (
        math.fsum(r.probability * r.value * r.value for r in rows if not r.failed)
        / included
    )
    return MomentReport(
        mean=mean,
        variance=second - mean * mean,
        support=tuple(rows),
        excluded_mass=excluded,
    )


@dataclass(frozen=True)
class PermutationReport:
    """Fisher-test result; ``method`` records exact enumeration vs Monte Carlo."""

    p_value: float
    observed: float
    method: str
    n_draws: int = 0


def zero_effect_null(study: Study) -> SyntheticStudy:
    """The sharp null of no effect: Y_i(S) = observed Y_i for every S."""
    baseline = {i.id: i.outcome for i in study.individuals}
    return make_synthetic_study(study, baseline, {}, rule="additive")


def permutation_test(
    study: Study,
    statistic: Estimator,
    null: SyntheticStudy | Callable[[Study], SyntheticStudy] | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
    n_draws: int = 2000,
    seed: int = 0,
) -> PermutationReport:
    """Sharp-null randomization test of ``statistic``.

    ``null`` imputes all potential outcomes (default: zero effect).  The
    p-value is Pr(|stat| ≥ |observed stat|) over the assignment
    distribution — exact when the support is enumerable within ``cap``,
    otherwise estimated from ``n_draws`` seeded samples with the
    add-one adjustment (1 + hits)/(1 + draws).

    The statistic must be defined at the observed assignment; if it fails
    under some counterfactual assignment, that assignment counts as
    extreme, which can only enlarge the p-value.
    """
    observed = float(statistic(study))
    threshold = abs(observed) - 1e-12
    if null is None:
        synthetic = zero_effect_null(study)
    elif isinstance(null, SyntheticStudy):
        synthetic = null
    else:
        synthetic = null(study)

    def is_extreme(assignment: Assignment) -> bool:
        realized = realize_outcomes(synthetic, assignment)
        try:
            return abs(float(statistic(realized))) >= threshold
        except EstimationError:
            return True

    try:
        support = enumerate_assignments(study.design, cap=cap)
    except EnumerationTooLargeError:
        support = None
    if support is not None:
        p = math.fsum(prob for assignment, prob in support if is_extreme(assignment))
        return PermutationReport(p_value=min(p, 1.0), observed=observed, method="exact")
    rng = np.random.default_rng(seed)
    hits = sum(
        1 for _ in range(n_draws) if is_extreme(sample_assignment(study.design, rng))
    )
    return PermutationReport(
        p_value=(1 + hits) / (1 + n_draws),
        observed=observed,
        method="monte-carlo",
        n_draws=n_draws,
    )
