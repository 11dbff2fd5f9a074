"""Observational tooling: grids, augmentation, propensity scores, matching, DR.

When treatment locations are not randomized, inference needs four extra
ingredients, all provided here:

* :func:`discretize` rasterizes a region's individuals onto a fine grid of
  per-cell counts and covariate means (:class:`SpatialGrid`), the raw
  material for comparing neighborhoods of realized and candidate locations.
* :func:`augment` applies distance-preserving transforms (rotations,
  mirroring, shifts) to point sets, studies, or grids, multiplying the
  effective sample of neighborhoods without distorting geometry.
* :func:`fit_propensity` estimates Pr(s realized | neighborhood covariates)
  by logistic maximum likelihood, and :func:`overlap_and_match` trims the
  candidate set to the region of common support via caliper matching.
* :func:`doubly_robust_tau` combines an outcome model mu(X, S) with the
  propensity e(s) in an orthogonalized moment, consistent when either
  ingredient is correct.

The candidate proposer here (:func:`propose_candidates`) is a deliberately
simple channel-similarity baseline, not a learned generator: any external
source of candidate locations can be fed to the propensity/matching/DR
pipeline instead.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import CandidateLocation, Individual, Study
from .design import marginal_prob
from .errors import (
    AllOneClassError,
    CollinearityError,
    EmptyRegionError,
    EstimationError,
    NoControlUnitsError,
    NoMatchesError,
    NoTreatedUnitsError,
    OverlapError,
    ParseError,
    SeparationWarning,
    ValidationError,
)
from .geometry import Location
from .parametric import _dependent_columns
from .weighting import SupportsContains

__all__ = [
    "SpatialGrid",
    "discretize",
    "Rotate90",
    "Mirror",
    "Shift",
    "augment",
    "PropensityModel",
    "fit_propensity",
    "OverlapReport",
    "MatchResult",
    "overlap_and_match",
    "covariate_balance",
    "doubly_robust_tau",
    "fit_outcome_model",
    "cross_fit_dr",
    "propose_candidates",
]

DEFAULT_CELL_SIZE = 0.025
IRLS_SCORE_TOLERANCE = 1e-8
IRLS_MAX_ITERATIONS = 50
SEPARATION_LOGIT_BOUND = 30.0
HISTOGRAM_BINS = 20


# ---------------------------------------------------------------------------
# Grid discretization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpatialGrid:
    """A raster of per-cell channel values over a rectangle of square cells.

    Cells are half-open: cell ``(ix, iy)`` covers
    ``[origin + i*cell, origin + (i+1)*cell)`` in each coordinate, so a point
    exactly on an edge belongs to the higher-index cell. Channels are stored
    as ``(height, width)`` arrays indexed ``[iy, ix]``.
    """

    origin: Location
    cell: float
    width: int
    height: int
    channels: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (self.cell > 0):
            raise ValidationError(f"cell size must be positive, got {self.cell}")
        if self.width < 1 or self.height < 1:
            raise ValidationError("grid must have at least one cell")
        cleaned = {}
        for name, values in self.channels.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != (self.height, self.width):
                raise ValidationError(
                    f"channel {name!r} has shape {arr.shape}, "
                    f"expected ({self.height}, {self.width})"
                )
            arr.flags.writeable = False
            cleaned[str(name)] = arr
        object.__setattr__(self, "channels", cleaned)

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(self.channels)

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise ValidationError(f"grid has no channel {name!r}") from None

    def cell_of(self, point: Location) -> tuple[int, int]:
        """Indices ``(ix, iy)`` of the cell containing ``point`` (may lie outside)."""
        ix = math.floor((point.x - self.origin.x) / self.cell)
        iy = math.floor((point.y - self.origin.y) / self.cell)
        return ix, iy

    def cell_center(self, ix: int, iy: int) -> Location:
        return Location(
            self.origin.x + (ix + 0.5) * self.cell,
            self.origin.y + (iy + 0.5) * self.cell,
        )

    def contains_cell(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def cell_vector(self, ix: int, iy: int) -> np.ndarray:
        """All channel values at one cell, in ``channel_names`` order."""
        return np.array([self.channels[name][iy, ix] for name in self.channels])

    # -- serialization: flat text, header then row-major values per channel --

    def to_text(self) -> str:
        lines = [
            f"origin {self.origin.x!r} {self.origin.y!r}",
            f"cell {self.cell!r}",
            f"dims {self.width} {self.height}",
            "channels " + " ".join(self.channel_names),
        ]
        for name in self.channel_names:
            lines.append(f"channel {name}")
            for row in self.channels[name]:
                lines.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SpatialGrid":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        try:
            origin = Location(float(lines[0].split()[1]), float(lines[0].split()[2]))
            cell = float(lines[1].split()[1])
            width, height = int(lines[2].split()[1]), int(lines[2].split()[2])
            names = lines[3].split()[1:]
        except (IndexError, ValueError) as exc:
            raise ParseError(f"malformed grid header: {exc}") from None
        channels = {}
        pos = 4
        for name in names:
            if pos >= len(lines) or lines[pos] != f"channel {name}":
                raise ParseError(f"expected 'channel {name}' at line {pos + 1}")
            pos += 1
            rows = []
            for _ in range(height):
                try:
                    row = [float(v) for v in lines[pos].split()]
                except (IndexError, ValueError):
                    raise ParseError(f"malformed grid row at line {pos + 1}") from None
                if len(row) != width:
                    raise ParseError(
                        f"grid row at line {pos + 1} has {len(row)} values, expected {width}"
                    )
                rows.append(row)
                pos += 1
            channels[name] = np.array(rows)
        return cls(origin, cell, width, height, channels)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "SpatialGrid":
        return cls.from_text(Path(path).read_text())


def discretize(
    study: Study,
    region: str,
    cell_size: float = DEFAULT_CELL_SIZE,
    channels: Sequence[str] = (),
    origin: Location | None = None,
) -> SpatialGrid:
    """Rasterize a region's individuals into per-cell counts and covariate means.

    The output always carries a ``"count"`` channel; each name in ``channels``
    adds a channel of per-cell means of that individual covariate (0.0 where
    the cell is empty — consult ``"count"`` to distinguish empty cells).
    Points are assigned by ``floor((coord − origin) / cell_size)``.
    """
    if not (cell_size > 0):
        raise ValidationError(f"cell size must be positive, got {cell_size}")
    people = study.individuals_in(region)
    if not people:
        raise EmptyRegionError(f"region {region!r} has no individuals to discretize")
    if origin is None:
        origin = Location(
            min(i.location.x for i in people), min(i.location.y for i in people)
        )
    indices = [
        (
            math.floor((i.location.x - origin.x) / cell_size),
            math.floor((i.location.y - origin.y) / cell_size),
        )
        for i in people
    ]
    min_x = min(ix for ix, _ in indices)
    min_y = min(iy for _, iy in indices)
    if min_x < 0 or min_y < 0:
        raise ValidationError(
            f"origin ({origin.x}, {origin.y}) lies above some individuals; "
            "choose an origin at or below the region's minimum coordinates"
        )
    width = max(ix for ix, _ in indices) + 1
    height = max(iy for _, iy in indices) + 1
    count = np.zeros((height, width))
    sums = {name: np.zeros((height, width)) for name in channels}
    for person, (ix, iy) in zip(people, indices):
        count[iy, ix] += 1.0
        for name in channels:
            sums[name][iy, ix] += person.covariate(name)
    stack: dict[str, np.ndarray] = {"count": count}
    for name in channels:
        means = np.divide(sums[name], count, out=np.zeros_like(count), where=count > 0)
        stack[name] = means
    return SpatialGrid(origin, cell_size, width, height, stack)


# ---------------------------------------------------------------------------
# Augmentation transforms (plane isometries)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rotate90:
    """Counterclockwise rotation by ``k`` quarter turns about the coordinate origin."""

    k: int = 1

    def apply(self, x: float, y: float) -> tuple[float, float]:
        for _ in range(self.k % 4):
            x, y = -y, x
        return x, y


@dataclass(frozen=True)
class Mirror:
    """Reflection across the vertical axis: (x, y) -> (-x, y)."""

    def apply(self, x: float, y: float) -> tuple[float, float]:
        return -x, y


@dataclass(frozen=True)
class Shift:
    """Translation by (dx, dy)."""

    dx: float
    dy: float

    def apply(self, x: float, y: float) -> tuple[float, float]:
        return x + self.dx, y + self.dy


Transform = Rotate90 | Mirror | Shift


def _move(point: Location, transform: Transform) -> Location:
    return Location(*transform.apply(point.x, point.y))


def augment(obj, transform: Transform):
    """Apply a plane isometry to a point set, a study, or a grid.

    Point sets and studies are transformed exactly (pairwise planar
    distances unchanged). Grids are re-binned: each source cell's values are
    deposited into the destination cell containing its transformed center,
    counts summed and mean channels count-weighted, so a grid shifted by a
    non-multiple of the cell size is a genuinely new discretization.
    """
    if isinstance(obj, SpatialGrid):
        return _augment_grid(obj, transform)
    if isinstance(obj, Study):
        individuals = tuple(
            replace(i, location=_move(i.location, transform)) for i in obj.individuals
        )
        locations = tuple(
            replace(s, location=_move(s.location, transform)) for s in obj.locations
        )
        return Study(individuals, locations, obj.design, obj.assignment, obj.metric)
    if isinstance(obj, Location):
        return _move(obj, transform)
    points = tuple(obj)
    if not all(isinstance(p, Location) for p in points):
        raise ValidationError(
            "augment expects a SpatialGrid, Study, Location, or sequence of Locations"
        )
    return tuple(_move(p, transform) for p in points)


def _augment_grid(grid: SpatialGrid, transform: Transform) -> SpatialGrid:
    centers = [
        (_move(grid.cell_center(ix, iy), transform), ix, iy)
        for iy in range(grid.height)
        for ix in range(grid.width)
    ]
    new_origin = Location(
        min(p.x for p, _, _ in centers) - 0.5 * grid.cell,
        min(p.y for p, _, _ in centers) - 0.5 * grid.cell,
    )
    shell = SpatialGrid(new_origin, grid.cell, 1, 1, {})
    targets = [shell.cell_of(p) for p, _, _ in centers]
    width = max(tx for tx, _ in targets) + 1
    height = max(ty for _, ty in targets) + 1

    count_name = "count" if "count" in grid.channels else None
    new_count = np.zeros((height, width))
    sums = {name: np.zeros((height, width)) for name in grid.channel_names}
    for (target, (_, ix, iy)) in zip(targets, centers):
        tx, ty = target
        weight = grid.channels[count_name][iy, ix] if count_name else 1.0
        if count_name:
            new_count[ty, tx] += weight
        for name in grid.channel_names:
            if name == count_name:
                continue
            sums[name][ty, tx] += weight * grid.channels[name][iy, ix]
    stack: dict[str, np.ndarray] = {}
    for name in grid.channel_names:
        if name == count_name:
            stack[name] = new_count
        elif count_name:
            stack[name] = np.divide(
                sums[name], new_count, out=np.zeros_like(new_count), where=new_count > 0
            )
        else:
            stack[name] = sums[name]
    return SpatialGrid(new_origin, grid.cell, width, height, stack)


# ---------------------------------------------------------------------------
# Logistic propensity model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PropensityModel:
    """Fitted logistic model for Pr(location realized | covariates).

    ``coefficients`` maps ``"intercept"`` and each covariate name to its
    estimate. ``log_likelihoods`` records the accepted value after each
    iteration (non-decreasing by construction: steps are halved until the
    likelihood does not fall). When ``separated`` is true the likelihood has
    no interior maximum and the coefficients are the last stable iterate.
    """

    coefficients: Mapping[str, float]
    covariates: tuple[str, ...]
    converged: bool
    separated: bool
    iterations: int
    log_likelihoods: tuple[float, ...]

    def logit(self, location: CandidateLocation) -> float:
        z = self.coefficients["intercept"]
        for name in self.covariates:
            z += self.coefficients[name] * location.covariate(name)
        return z

    def probability(self, location: CandidateLocation) -> float:
        return _sigmoid(self.logit(location))


def _sigmoid(z: float | np.ndarray):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700))),
                    np.exp(np.clip(z, -700, 700)) / (1.0 + np.exp(np.clip(z, -700, 700))))


def _log_likelihood(matrix: np.ndarray, labels: np.ndarray, beta: np.ndarray) -> float:
    z = matrix @ beta
    # log p = -log(1+e^{-z}), log(1-p) = -log(1+e^{z}); logaddexp keeps both stable
    return float(-np.sum(np.logaddexp(0.0, np.where(labels > 0.5, -z, z))))


def fit_propensity(
    locations: Sequence[CandidateLocation],
    covariates: Sequence[str],
    treated: Mapping[str, bool] | None = None,
) -> PropensityModel:
    """Logistic maximum likelihood for the realized-location indicator.

    ``treated`` overrides the per-location ``treated`` flags when given
    (useful for fitting against a specific assignment). Fitting is Newton /
    iteratively reweighted least squares with step halving, stopping when the
    largest score component falls below 1e-8 or after 50 iterations.
    Separation (coefficients diverging without an interior optimum) is
    reported as a :class:`SeparationWarning` and the last iterate returned.
    """
    locations = tuple(locations)
    covariates = tuple(dict.fromkeys(covariates))
    if not locations:
        raise ValidationError("no locations to fit")
    if treated is None:
        flags = []
        for s in locations:
            if s.treated is None:
                raise ValidationError(f"location {s.id!r} has no treated flag")
            flags.append(bool(s.treated))
    else:
        flags = [bool(treated[s.id]) for s in locations]
    labels = np.array(flags, dtype=float)
    n_treated = int(labels.sum())
    if n_treated == 0 or n_treated == len(labels):
        raise AllOneClassError(
            f"all {len(labels)} locations are in one class "
            f"({n_treated} treated); a logistic fit needs both"
        )
    columns = ("intercept",) + covariates
    matrix = np.column_stack(
        [np.ones(len(locations))]
        + [np.array([s.covariate(name) for s in locations]) for name in covariates]
    )
    rank = np.linalg.matrix_rank(matrix)
    if rank < matrix.shape[1]:
        raise CollinearityError(
            "collinear covariates: " + ", ".join(_dependent_columns(matrix, columns, 1e-10))
        )

    beta = np.zeros(matrix.shape[1])
    ll = _log_likelihood(matrix, labels, beta)
    history = [ll]
    converged = False
    separated = False
    iterations = 0
    for iterations in range(1, IRLS_MAX_ITERATIONS + 1):
        p = _sigmoid(matrix @ beta)
        score = matrix.T @ (labels - p)
        if float(np.max(np.abs(score))) < IRLS_SCORE_TOLERANCE:
            converged = True
            iterations -= 1
            break
        w = p * (1.0 - p)
        hessian = matrix.T @ (matrix * w[:, None])
        try:
            step = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError:
            separated = True
            break
        # halve until the log-likelihood does not decrease (keeps it monotone)
        scale = 1.0
        for _ in range(30):
            candidate = beta + scale * step
            new_ll = _log_likelihood(matrix, labels, candidate)
            if new_ll >= ll - 1e-12:
                break
            scale *= 0.5
        beta = beta + scale * step
        ll = new_ll
        history.append(ll)
        if float(np.max(np.abs(matrix @ beta))) > SEPARATION_LOGIT_BOUND:
            separated = True
            break
    else:
        p = _sigmoid(matrix @ beta)
        score = matrix.T @ (labels - p)
        converged = float(np.max(np.abs(score))) < IRLS_SCORE_TOLERANCE

    if separated:
        warnings.warn(
            "logistic likelihood is separable: fitted probabilities reached 0/1; "
            "returning the last stable iterate",
            SeparationWarning,
            stacklevel=2,
        )
    model = PropensityModel(
        coefficients={name: float(b) for name, b in zip(columns, beta)},
        covariates=covariates,
        converged=converged,
        separated=separated,
        iterations=iterations,
        log_likelihoods=tuple(history),
    )
    return model


def covariate_balance(
    locations: Sequence[CandidateLocation],
    covariates: Sequence[str],
    treated: Mapping[str, bool] | None = None,
) -> tuple[tuple[str, float, float, float], ...]:
    """Per-covariate (name, treated mean, control mean, difference) rows."""
    flags = {
        s.id: bool(s.treated) if treated is None else bool(treated[s.id])
        for s in locations
    }
    rows = []
    for name in covariates:
        t_vals = [s.covariate(name) for s in locations if flags[s.id]]
        c_vals = [s.covariate(name) for s in locations if not flags[s.id]]
        if not t_vals or not c_vals:
            raise AllOneClassError("balance table needs both treated and control locations")
        t_mean = math.fsum(t_vals) / len(t_vals)
        c_mean = math.fsum(c_vals) / len(c_vals)
        rows.append((name, t_mean, c_mean, t_mean - c_mean))
    return tuple(rows)


# ---------------------------------------------------------------------------
# Overlap diagnostics and caliper matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OverlapReport:
    """Propensity-score overlap summary: per-arm histograms and ranges.

    Histograms use 20 fixed bins on [0, 1] so the two arms are directly
    comparable; ``treated_range``/``control_range`` give (min, max).
    """

    treated_histogram: tuple[int, ...]
    control_histogram: tuple[int, ...]
    treated_range: tuple[float, float]
    control_range: tuple[float, float]

    @property
    def bin_edges(self) -> tuple[float, ...]:
        return tuple(k / HISTOGRAM_BINS for k in range(HISTOGRAM_BINS + 1))


@dataclass(frozen=True)
class MatchResult:
    """Caliper-matched pairs plus the overlap diagnostics.

    ``pairs`` holds (treated id, control id, |logit difference|) triples;
    matching is 1-nearest-neighbor without replacement on the logit scale,
    greedily taking the globally closest remaining pair within the caliper.
    """

    pairs: tuple[tuple[str, str, float], ...]
    unmatched_treated: tuple[str, ...]
    report: OverlapReport

    @property
    def matched_ids(self) -> tuple[str, ...]:
        out = []
        for treated_id, control_id, _ in self.pairs:
            out.extend((treated_id, control_id))
        return tuple(out)


def _histogram(values: Sequence[float]) -> tuple[int, ...]:
    counts = [0] * HISTOGRAM_BINS
    for v in values:
        k = min(int(v * HISTOGRAM_BINS), HISTOGRAM_BINS - 1)
        counts[k] += 1
    return tuple(counts)


def overlap_and_match(
    locations: Sequence[CandidateLocation],
    model: PropensityModel,
    caliper: float,
    treated: Mapping[str, bool] | None = None,
) -> MatchResult:
    """Match treated to control locations on the logit of the propensity score.

    Pairs are formed greedily by global closeness, each location used at most
    once, and only within ``caliper`` (logit units). Raises
    :class:`NoMatchesError` when no admissible pair exists.
    """
    if caliper < 0:
        raise ValidationError(f"caliper must be nonnegative, got {caliper}")
    flags = {
        s.id: bool(s.treated) if treated is None else bool(treated[s.id])
        for s in locations
    }
    logits = {s.id: model.logit(s) for s in locations}
    scores = {s.id: float(_sigmoid(logits[s.id])) for s in locations}
    treated_ids = sorted(s.id for s in locations if flags[s.id])
    control_ids = sorted(s.id for s in locations if not flags[s.id])
    if not treated_ids or not control_ids:
        raise AllOneClassError("matching needs both treated and control locations")

    candidates = sorted(
        (abs(logits[t] - logits[c]), t, c)
        for t in treated_ids
        for c in control_ids
        if abs(logits[t] - logits[c]) <= caliper
    )
    used: set[str] = set()
    pairs = []
    for gap, t, c in candidates:
        if t in used or c in used:
            continue
        used.update((t, c))
        pairs.append((t, c, gap))
    if not pairs:
        raise NoMatchesError(
            f"no treated-control pair within caliper {caliper} on the logit scale"
        )
    report = OverlapReport(
        treated_histogram=_histogram([scores[t] for t in treated_ids]),
        control_histogram=_histogram([scores[c] for c in control_ids]),
        treated_range=(min(scores[t] for t in treated_ids), max(scores[t] for t in treated_ids)),
        control_range=(min(scores[c] for c in control_ids), max(scores[c] for c in control_ids)),
    )
    pairs.sort(key=lambda p: p[0:2])
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_treated=tuple(t for t in treated_ids if t not in used),
        report=report,
    )


# ---------------------------------------------------------------------------
# Doubly robust estimation
# ---------------------------------------------------------------------------

OutcomeModel = Callable[[Individual, frozenset], float]
PropensityLookup = Callable[[str], float]


def _propensity_fn(study: Study, propensity) -> PropensityLookup:
    if propensity is None:
        return lambda loc_id: marginal_prob(
            study.design, study.location(loc_id).region, loc_id
        )
    if isinstance(propensity, PropensityModel):
        return lambda loc_id: float(propensity.probability(study.location(loc_id)))
    if isinstance(propensity, Mapping):
        def from_map(loc_id: str) -> float:
            try:
                return float(propensity[loc_id])
            except KeyError:
                raise OverlapError(f"no propensity value for location {loc_id!r}") from None
        return from_map
    if callable(propensity):
        return propensity
    raise ValidationError("propensity must be a model, mapping, callable, or None")


def doubly_robust_tau(
    study: Study,
    bin_: SupportsContains,
    propensity=None,
    outcome_model: OutcomeModel | None = None,
) -> float:
    """Doubly robust effect at distance: orthogonalized treated/control contrast.

    For every in-bin (individual, location) pair, a realized location
    contributes its outcome residual against the outcome model evaluated
    *without* that location, ``Y - mu(X, xi \\ {s})``; an unrealized location
    contributes the odds-weighted residual against the model at the realized
    exposure, ``e/(1-e) * (Y - mu(X, xi))``. The estimate is the treated-pair
    mean of the first piece minus the control correction divided by the
    treated-pair count — the root of the empirical orthogonal moment.

    ``propensity`` may be a fitted :class:`PropensityModel`, a mapping or
    callable of location id, or None to use the design's marginal
    probabilities. ``outcome_model`` is ``mu(individual, realized_ids)``;
    None means the zero model, reducing the estimate to pure inverse
    propensity weighting.
    """
    e_of = _propensity_fn(study, propensity)
    mu = outcome_model if outcome_model is not None else (lambda ind, realized: 0.0)

    treated_terms: list[float] = []
    control_terms: list[float] = []
    for ind in study.individuals:
        xi = study.xi(ind.region)
        for loc in study.locations_in(ind.region):
            if not bin_.contains(study.distance(loc.id, ind.id)):
                continue
            e = float(e_of(loc.id))
            if not 0.0 < e < 1.0:
                raise OverlapError(
                    f"propensity for location {loc.id!r} is {e}; "
                    "the moment needs e in (0, 1)"
                )
            if loc.id in xi:
                fitted = _evaluate_mu(mu, ind, xi - {loc.id}, loc.id)
                treated_terms.append(ind.outcome - fitted)
            else:
                fitted = _evaluate_mu(mu, ind, xi, loc.id)
                control_terms.append(e / (1.0 - e) * (ind.outcome - fitted))
    if not treated_terms:
        raise NoTreatedUnitsError("no realized in-bin pairs; the moment has no root")
    if not control_terms:
        raise NoControlUnitsError("no unrealized in-bin pairs; no control correction")
    return (math.fsum(treated_terms) - math.fsum(control_terms)) / len(treated_terms)


def _evaluate_mu(mu: OutcomeModel, ind: Individual, realized: frozenset, loc_id: str) -> float:
    try:
        value = float(mu(ind, frozenset(realized)))
    except EstimationError:
        raise
    except Exception as exc:
        raise EstimationError(
            f"outcome model failed at individual {ind.id!r}, location {loc_id!r}: {exc}"
        ) from exc
    if not math.isfinite(value):
        raise EstimationError(
            f"outcome model returned {value} at individual {ind.id!r}, location {loc_id!r}"
        )
    return value


def fit_outcome_model(
    study: Study,
    edges: Sequence[float],
    covariates: Sequence[str] = (),
    individuals: Sequence[Individual] | None = None,
) -> OutcomeModel:
    """Least-squares outcome model on exposure-distance bins plus covariates.

    Regresses observed outcomes on dummies for the distance to the nearest
    realized location (binned by ``edges``, half-open ``[e_k, e_{k+1})``, with
    "no realized location / beyond the last edge" as the omitted baseline)
    and the named individual covariates. The returned callable
    ``mu(individual, realized_ids)`` evaluates the fit at any counterfactual
    realized set, which is exactly what the doubly robust moment needs.
    """
    edges = tuple(float(e) for e in edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValidationError("edges must be at least two strictly increasing values")
    pool = tuple(individuals) if individuals is not None else study.individuals
    if not pool:
        raise ValidationError("no individuals to fit the outcome model on")
    n_bins = len(edges) - 1
    columns = ["intercept"] + [f"bin{k}" for k in range(n_bins)] + list(covariates)

    def features(ind: Individual, realized: frozenset) -> np.ndarray:
        row = np.zeros(len(columns))
        row[0] = 1.0
        dists = [
            study.distance(s, ind.id)
            for s in realized
            if study.location(s).region == ind.region
        ]
        if dists:
            nearest = min(dists)
            for k in range(n_bins):
                if edges[k] <= nearest < edges[k + 1]:
                    row[1 + k] = 1.0
                    break
        for c, name in enumerate(covariates):
            row[1 + n_bins + c] = ind.covariate(name)
        return row

    matrix = np.array([features(ind, study.xi(ind.region)) for ind in pool])
    outcomes = np.array([ind.outcome for ind in pool])
    coef, *_ = np.linalg.lstsq(matrix, outcomes, rcond=None)

    def mu(ind: Individual, realized: frozenset) -> float:
        return float(features(ind, frozenset(realized)) @ coef)

    return mu


def cross_fit_dr(
    study: Study,
    bin_: SupportsContains,
    covariates: Sequence[str] = (),
    outcome_edges: Sequence[float] | None = None,
    outcome_covariates: Sequence[str] = (),
    folds: int = 5,
    seed: int = 0,
) -> float:
    """Doubly robust estimate with both models estimated by cross-fitting.

    Candidate locations are split into ``folds`` seed-deterministic folds;
    each pair (i, s) inherits s's fold and is scored with a propensity and
    outcome model fit on the *other* folds' locations and their in-bin
    individuals. The per-fold moment pieces are pooled into one root.
    """
    if folds < 2:
        raise ValidationError(f"cross-fitting needs at least 2 folds, got {folds}")
    all_locations = sorted(study.locations, key=lambda s: s.id)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(all_locations))
    fold_of = {all_locations[int(j)].id: int(k % folds) for k, j in enumerate(order)}
    edges = tuple(outcome_edges) if outcome_edges is not None else (bin_.lower, bin_.upper)

    treated_terms: list[float] = []
    control_terms: list[float] = []
    for k in range(folds):
        in_fold = [s for s in all_locations if fold_of[s.id] == k]
        out_fold = [s for s in all_locations if fold_of[s.id] != k]
        if not in_fold:
            continue
        if not out_fold:
            raise ValidationError("a fold holds every location; use fewer folds")
        flags = {s.id: s.id in study.xi(s.region) for s in out_fold}
        model = fit_propensity(out_fold, covariates, treated=flags)
        out_ids = {s.id for s in out_fold}
        training = tuple(
            ind
            for ind in study.individuals
            if any(
                bin_.contains(study.distance(s.id, ind.id))
                for s in study.locations_in(ind.region)
                if s.id in out_ids
            )
        )
        mu = fit_outcome_model(study, edges, outcome_covariates, individuals=training or None)
        e_of = _propensity_fn(study, model)
        fold_ids = {s.id for s in in_fold}
        for ind in study.individuals:
            xi = study.xi(ind.region)
            for loc in study.locations_in(ind.region):
                if loc.id not in fold_ids:
                    continue
                if not bin_.contains(study.distance(loc.id, ind.id)):
                    continue
                e = float(e_of(loc.id))
                if not 0.0 < e < 1.0:
                    raise OverlapError(
                        f"cross-fit propensity for location {loc.id!r} is {e}"
                    )
                if loc.id in xi:
                    treated_terms.append(ind.outcome - _evaluate_mu(mu, ind, xi - {loc.id}, loc.id))
                else:
                    control_terms.append(
                        e / (1.0 - e) * (ind.outcome - _evaluate_mu(mu, ind, xi, loc.id))
                    )
    if not treated_terms:
        raise NoTreatedUnitsError("no realized in-bin pairs; the moment has no root")
    return (math.fsum(treated_terms) - math.fsum(control_terms)) / len(treated_terms)


# ---------------------------------------------------------------------------
# Baseline candidate proposer
# ---------------------------------------------------------------------------


def propose_candidates(
    grid: SpatialGrid,
    realized: Sequence[Location],
    threshold: float,
) -> tuple[Location, ...]:
    """Propose candidate locations as cells resembling realized locations' cells.

    A deliberately simple stand-in for a learned location generator: a cell
    qualifies when the Euclidean distance between its channel vector and some
    realized location's cell vector is at most ``threshold``; qualifying
    cells are thinned to local maxima of similarity (8-neighborhood, ties
    kept), and their centers returned in row-major order. Cells containing a
    realized location are excluded — proposals are counterfactual sites.
    """
    if threshold < 0:
        raise ValidationError(f"threshold must be nonnegative, got {threshold}")
    if not realized:
        raise ValidationError("need at least one realized location to imitate")
    anchors = []
    occupied = set()
    for point in realized:
        ix, iy = grid.cell_of(point)
        if not grid.contains_cell(ix, iy):
            raise ValidationError(
                f"realized location ({point.x}, {point.y}) falls outside the grid"
            )
        anchors.append(grid.cell_vector(ix, iy))
        occupied.add((ix, iy))

    similarity = np.full((grid.height, grid.width), -np.inf)
    for iy in range(grid.height):
        for ix in range(grid.width):
            gap = min(
                float(np.linalg.norm(grid.cell_vector(ix, iy) - anchor))
                for anchor in anchors
            )
            if gap <= threshold:
                similarity[iy, ix] = -gap

    proposals = []
    for iy in range(grid.height):
        for ix in range(grid.width):
            score = similarity[iy, ix]
            if not np.isfinite(score) or (ix, iy) in occupied:
                continue
            neighborhood = similarity[
                max(0, iy - 1) : iy + 2, max(0, ix - 1) : ix + 2
            ]
            if score >= np.max(neighborhood[np.isfinite(neighborhood)]):
                proposals.append(grid.cell_center(ix, iy))
    return tuple(proposals)
