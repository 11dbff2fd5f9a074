"""Parametric treatment-effect decay estimated by weighted least squares.

The effect of a realized treatment at distance ``d`` is modeled as a
linear combination of known basis functions, truncated to zero beyond a
maximum distance ``d_max``; a control function in distance absorbs how
baseline outcomes vary with proximity to candidate locations.  Restricted
fits force the effect to reach zero continuously at ``d_max``.  A one-step
reparametrization of the same regression reads the aggregate effect per
treatment location off a single coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import fsum, isfinite
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import Study
from .errors import (
    DegenerateBasisError,
    NegativeWeightError,
    RankDeficiencyError,
    ValidationError,
    ZeroWeightError,
)

RANK_TOLERANCE = 1e-10
MAX_POLYNOMIAL_DEGREE = 3


@dataclass(frozen=True)
class TabulatedFunction:
    """Piecewise-linear function of distance given on a grid; clamps to the
    endpoint values outside the grid range."""

    grid: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        grid = tuple(float(g) for g in self.grid)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if len(grid) != len(values) or len(grid) < 2:
            raise ValidationError("a tabulated function needs matching grids of length >= 2")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValidationError("tabulated grid must increase strictly")
        if not all(isfinite(v) for v in (*grid, *values)):
            raise ValidationError("tabulated grid and values must be finite")

    def __call__(self, d: float) -> float:
        return float(np.interp(d, self.grid, self.values))


@dataclass(frozen=True)
class BasisFunction:
    """One basis term: a function of distance, optionally scaled by a
    per-individual covariate."""

    name: str
    fn: Callable[[float], float]
    covariate: str | None = None

    def value(self, d: float, x: float) -> float:
        base = float(self.fn(d))
        return base * x if self.covariate is not None else base


def polynomial_terms(degrees: Sequence[int]) -> tuple[BasisFunction, ...]:
    """Monomial basis terms d**p for the given exponents."""
    terms = []
    for p in degrees:
        if not 0 <= p <= MAX_POLYNOMIAL_DEGREE:
            raise ValidationError(
                f"polynomial degree must be between 0 and {MAX_POLYNOMIAL_DEGREE}, got {p}"
            )
        name = "1" if p == 0 else ("d" if p == 1 else f"d^{p}")
        terms.append(BasisFunction(name, lambda d, _p=p: d**_p))
    return tuple(terms)


def tabulated_term(name: str, grid: Sequence[float], values: Sequence[float]) -> BasisFunction:
    """User-supplied basis term interpolated linearly from a grid."""
    return BasisFunction(name, TabulatedFunction(tuple(grid), tuple(values)))


@dataclass(frozen=True)
class BasisSpec:
    """Effect and control bases with the maximum effect distance.

    ``restricted`` forces the fitted effect to zero continuously at
    ``d_max`` by replacing each effect regressor with its difference from
    the value at ``d_max``.  A constant effect term is incompatible with
    the restriction (its transformed regressor vanishes identically and
    the fit reports it as rank-deficient).
    """

    effect: tuple[BasisFunction, ...]
    control: tuple[BasisFunction, ...]
    d_max: float
    restricted: bool = True

    def __post_init__(self) -> None:
        if not (isfinite(self.d_max) and self.d_max > 0):
            raise ValidationError(f"d_max must be positive and finite, got {self.d_max!r}")
        if not self.effect:
            raise ValidationError("need at least one effect basis term")
        names = [t.name for t in self.effect]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate effect basis names: {names}")
        names = [t.name for t in self.control]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate control basis names: {names}")

    @classmethod
    def polynomial(
        cls,
        d_max: float,
        effect_degree: int = 2,
        control_degree: int = 2,
        restricted: bool = True,
        interact_with: str | None = None,
    ) -> "BasisSpec":
        """Monomial bases up to the given degrees.

        Restricted specs start the effect basis at ``d`` (a constant would
        be annihilated by the continuity restriction); unrestricted specs
        include it.  ``interact_with`` adds a copy of each effect term
        scaled by the named individual covariate.  The control basis
        starts at ``d`` either way since the intercept carries the level.
        """
        if effect_degree < 1:
            raise ValidationError(f"effect degree must be >= 1, got {effect_degree}")
        start = 1 if restricted else 0
        effect = list(polynomial_terms(range(start, effect_degree + 1)))
        if interact_with is not None:
            effect += [
                BasisFunction(f"{t.name}*{interact_with}", t.fn, interact_with)
                for t in effect
            ]
        control = polynomial_terms(range(1, control_degree + 1))
        return cls(tuple(effect), tuple(control), float(d_max), restricted)

    def covariates_used(self) -> tuple[str, ...]:
        return tuple(
            sorted({t.covariate for t in self.effect if t.covariate is not None})
        )


@dataclass(frozen=True)
class DesignRows:
    """Regression rows, one per (individual, candidate location) pair.

    Individuals in multi-location regions appear once per location, each
    copy at its distance from that location, so that control outcomes
    inform the control function at every relevant distance.  ``effect_raw``
    holds the effect regressors before the treatment indicator is applied;
    the matrix's effect block is ``treated[:, None] * effect_raw``.
    """

    matrix: np.ndarray
    outcomes: np.ndarray
    columns: tuple[str, ...]
    keys: tuple[tuple[str, str], ...]
    distances: np.ndarray
    effect_raw: np.ndarray
    treated: np.ndarray
    n_regions: int
    spec: BasisSpec

    @property
    def n_rows(self) -> int:
        return len(self.keys)


def _effect_regressor(term: BasisFunction, spec: BasisSpec, d: float, x: float) -> float:
    if d > spec.d_max:
        return 0.0
    if spec.restricted:
        return term.value(d, x) - term.value(spec.d_max, x)
    return term.value(d, x)


def build_design_rows(study: Study, spec: BasisSpec) -> DesignRows:
    """One regression row per (individual, candidate location) pair.

    Columns: intercept, then each effect term (switched on by the region's
    treatment indicator, zero beyond ``d_max``, differenced against its
    ``d_max`` value when restricted), then each control term (zero beyond
    ``d_max``).
    """
    columns = (
        ["intercept"]
        + [f"effect:{t.name}" for t in spec.effect]
        + [f"control:{t.name}" for t in spec.control]
    )
    rows: list[list[float]] = []
    raw_rows: list[list[float]] = []
    treated: list[float] = []
    outcomes: list[float] = []
    keys: list[tuple[str, str]] = []
    distances: list[float] = []
    for region in study.design.regions:
        w = 1.0 if study.treated(region) else 0.0
        for ind in study.individuals_in(region):
            x_values = {
                name: ind.covariate(name) for name in spec.covariates_used()
            }
            for loc in study.locations_in(region):
                d = study.distance(loc.id, ind.id)
                active = 1.0 if d <= spec.d_max else 0.0
                raw = [
                    _effect_regressor(
                        term,
                        spec,
                        d,
                        x_values.get(term.covariate, 1.0) if term.covariate else 1.0,
                    )
                    for term in spec.effect
                ]
                row = [1.0] + [w * v for v in raw]
                for term in spec.control:
                    row.append(active * term.value(d, 1.0))
                rows.append(row)
                raw_rows.append(raw)
                treated.append(w)
                outcomes.append(ind.outcome)
                keys.append((ind.id, loc.id))
                distances.append(d)
    return DesignRows(
        np.asarray(rows, dtype=float),
        np.asarray(outcomes, dtype=float),
        tuple(columns),
        tuple(keys),
        np.asarray(distances, dtype=float),
        np.asarray(raw_rows, dtype=float),
        np.asarray(treated, dtype=float),
        len(study.design.regions),
        spec,
    )


def _resolve_weights(rows: DesignRows, weights) -> np.ndarray:
    if weights is None:
        return np.ones(rows.n_rows)
    if hasattr(weights, "weights"):
        table = weights.weights
        vec = np.asarray([float(table.get(key, 0.0)) for key in rows.keys], dtype=float)
    elif callable(weights):
        vec = np.asarray([float(weights(i, s)) for i, s in rows.keys], dtype=float)
    elif hasattr(weights, "get"):
        vec = np.asarray(
            [float(weights.get(key, 0.0)) for key in rows.keys], dtype=float
        )
    else:
        vec = np.asarray([float(v) for v in weights], dtype=float)
        if vec.shape != (rows.n_rows,):
            raise ValidationError(
                f"expected {rows.n_rows} weights, got {vec.shape[0]}"
            )
    if not np.all(np.isfinite(vec)):
        raise ValidationError("regression weights must be finite")
    if np.any(vec < 0):
        raise NegativeWeightError("regression weights must be nonnegative")
    if not np.any(vec > 0):
        raise ZeroWeightError("all regression weights are zero")
    return vec


def _dependent_columns(weighted: np.ndarray, columns: tuple[str, ...], tol: float) -> list[str]:
    """Name columns that add no new direction, scanning left to right."""
    offending = []
    basis: list[np.ndarray] = []
    for k, name in enumerate(columns):
        v = weighted[:, k].astype(float)
        for b in basis:
            v = v - (b @ v) * b
        norm = float(np.linalg.norm(v))
        if norm <= tol:
            offending.append(name)
        else:
            basis.append(v / norm)
    return offending


@dataclass(frozen=True)
class WlsFit:
    """Weighted least-squares fit with the effect-curve evaluator."""

    coefficients: Mapping[str, float]
    spec: BasisSpec
    weight_label: str
    residuals: tuple[float, ...]
    weighted_rss: float

    @property
    def alpha0(self) -> float:
        return self.coefficients["intercept"]

    @property
    def effect_coefficients(self) -> dict[str, float]:
        return {
            t.name: self.coefficients[f"effect:{t.name}"]
            for t in self.spec.effect
            if f"effect:{t.name}" in self.coefficients
        }

    @property
    def control_coefficients(self) -> dict[str, float]:
        return {
            t.name: self.coefficients[f"control:{t.name}"] for t in self.spec.control
        }

    @property
    def max_abs_residual(self) -> float:
        return max((abs(r) for r in self.residuals), default=0.0)

    def tau(self, d: float, x: Mapping[str, float] | float | None = None) -> float:
        """Fitted effect at distance ``d`` (zero beyond ``d_max``)."""
        if d > self.spec.d_max:
            return 0.0
        betas = self.effect_coefficients
        terms = []
        for term in self.spec.effect:
            if term.name not in betas:
                continue
            x_val = 1.0
            if term.covariate is not None:
                if x is None:
                    raise ValidationError(
                        f"effect basis uses covariate {term.covariate!r}; pass its value"
                    )
                x_val = (
                    float(x[term.covariate]) if hasattr(x, "__getitem__") else float(x)
                )
            terms.append(betas[term.name] * _effect_regressor(term, self.spec, d, x_val))
        return fsum(terms)

    def coefficients_csv_text(self) -> str:
        lines = ["name,coefficient"]
        lines += [f"{name},{value!r}" for name, value in self.coefficients.items()]
        return "\n".join(lines) + "\n"

    def curve_csv_text(
        self, distances: Sequence[float], x: Mapping[str, float] | float | None = None
    ) -> str:
        lines = ["d,tau"]
        lines += [f"{d!r},{self.tau(float(d), x)!r}" for d in distances]
        return "\n".join(lines) + "\n"


def _solve(
    matrix: np.ndarray,
    outcomes: np.ndarray,
    columns: tuple[str, ...],
    weight_vec: np.ndarray,
    spec: BasisSpec,
    label: str,
) -> WlsFit:
    sqrt_w = np.sqrt(weight_vec)
    xw = matrix * sqrt_w[:, None]
    yw = outcomes * sqrt_w
    sigma = np.linalg.svd(xw, compute_uv=False)
    s_max = float(sigma[0]) if sigma.size else 0.0
    tol = RANK_TOLERANCE * s_max
    if s_max == 0.0:
        raise RankDeficiencyError(list(columns))
    rank = int(np.sum(sigma > tol))
    if rank < len(columns):
        raise RankDeficiencyError(_dependent_columns(xw, columns, tol))
    u, s, vt = np.linalg.svd(xw, full_matrices=False)
    beta = vt.T @ ((u.T @ yw) / s)
    residuals = outcomes - matrix @ beta
    rss = float(np.sum(weight_vec * residuals**2))
    coefficients = dict(zip(columns, (float(b) for b in beta)))
    return WlsFit(coefficients, spec, label, tuple(float(r) for r in residuals), rss)


def fit_wls(rows: DesignRows, weights=None, label: str | None = None) -> WlsFit:
    """Weighted least squares on the design rows.

    ``weights`` may be omitted (unweighted), a sequence aligned with the
    rows, a callable of ``(individual_id, location_id)``, or a mapping
    keyed by those pairs (missing pairs get weight zero, so an estimand
    weight table restricts the fit to its support).  Rank deficiency under
    the weights is reported with the offending column names.
    """
    vec = _resolve_weights(rows, weights)
    if label is None:
        label = "unweighted" if weights is None else "custom"
    return _solve(rows.matrix, rows.outcomes, rows.columns, vec, rows.spec, label)


def basis_region_means(rows: DesignRows) -> np.ndarray:
    """Per-region average of each raw effect regressor: the sum over every
    (individual, candidate location) row divided by the number of regions,
    treated and untreated alike."""
    return rows.effect_raw.sum(axis=0) / rows.n_regions


def plug_in_aatt(rows: DesignRows, fit: WlsFit) -> float:
    """Aggregate effect per treatment location implied by a fitted decay:
    the fitted coefficients contracted with the per-region averages of the
    raw effect regressors."""
    means = basis_region_means(rows)
    betas = fit.effect_coefficients
    return fsum(
        betas[term.name] * float(means[k])
        for k, term in enumerate(rows.spec.effect)
        if term.name in betas
    )


def fit_aatt_regression(
    study: Study, spec: BasisSpec, weights=None, label: str | None = None
) -> tuple[float, WlsFit]:
    """One-step aggregate-effect regression.

    Reparametrizes the restricted effect regression so the coefficient on
    the first transformed covariate is the aggregate effect per treatment
    location: the first effect regressor is normalized by its all-region
    per-region mean, and every other effect regressor has its component
    along the first one (the ratio of per-region means) removed.  The
    column space is unchanged, so the fit is the same regression read in
    different coordinates.
    """
    if not spec.restricted:
        raise ValidationError(
            "the aggregate-effect regression requires the continuity restriction"
        )
    rows = build_design_rows(study, spec)
    means = basis_region_means(rows)
    if means[0] == 0.0:
        raise DegenerateBasisError(
            f"per-region mean of the first effect regressor "
            f"(effect:{spec.effect[0].name}) is zero; cannot normalize"
        )
    raw = rows.effect_raw
    w_flag = rows.treated
    columns = ["intercept", "aatt"]
    blocks = [np.ones((rows.n_rows, 1)), (w_flag * raw[:, 0] / means[0])[:, None]]
    for k in range(1, len(spec.effect)):
        columns.append(f"effect:{spec.effect[k].name}.resid")
        blocks.append(
            (w_flag * (raw[:, k] - (float(means[k]) / float(means[0])) * raw[:, 0]))[
                :, None
            ]
        )
    if spec.control:
        columns += [f"control:{t.name}" for t in spec.control]
        blocks.append(rows.matrix[:, 1 + len(spec.effect) :])
    matrix = np.hstack(blocks)
    vec = _resolve_weights(rows, weights)
    if label is None:
        label = "unweighted" if weights is None else "custom"
    fit = _solve(matrix, rows.outcomes, tuple(columns), vec, spec, label)
    aatt = fit.coefficients["aatt"]
    # Back out the per-basis coefficients the transformed fit implies, so
    # the effect-curve evaluator works on this fit too.
    coefficients = dict(fit.coefficients)
    tail = 0.0
    for k in range(1, len(spec.effect)):
        beta_k = fit.coefficients[f"effect:{spec.effect[k].name}.resid"]
        coefficients[f"effect:{spec.effect[k].name}"] = beta_k
        tail += beta_k * float(means[k])
    coefficients[f"effect:{spec.effect[0].name}"] = (aatt - tail) / float(means[0])
    fit = replace(fit, coefficients=coefficients)
    return aatt, fit
