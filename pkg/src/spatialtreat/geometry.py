"""Locations, distance metrics, distance bins, and kernels.

Every estimator in the package consumes distances between candidate
treatment locations and individuals through the small vocabulary defined
here: a :class:`Location` is a plain coordinate pair, a metric turns two of
them into a nonnegative number, and bins/kernels turn a distance into a
membership indicator or smooth weight.

Two bin conventions coexist deliberately. :class:`DistanceBin` is the
closed interval [center − h, center + h] used by ad-hoc estimator queries
(a boundary point belongs to both adjacent closed bins). The aggregation
module instead tiles [0, dmax] with half-open cells so every distance
falls in exactly one cell; see :mod:`spatialtreat.aggregate`.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Hashable, Mapping
from dataclasses import dataclass

from .errors import InvalidLatitudeError, MissingDistanceError, ValidationError

#: Sphere radius used by the great-circle metric, in miles.
EARTH_RADIUS_MILES = 3958.8


@dataclass(frozen=True)
class Location:
    """A point in the plane (or on the globe, as lon/lat degrees).

    Parameters
    ----------
    x : float
        First coordinate. Longitude in degrees for the great-circle metric.
    y : float
        Second coordinate. Latitude in degrees for the great-circle metric.
    """

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"location coordinates must be finite, got ({self.x}, {self.y})")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Euclidean:
    """Straight-line distance in coordinate units."""

    def distance(self, a: Location, b: Location) -> float:
        return math.hypot(a.x - b.x, a.y - b.y)


@dataclass(frozen=True)
class GreatCircle:
    """Haversine distance in miles on a sphere of radius 3958.8 miles.

    Coordinates are interpreted as (longitude, latitude) in degrees.
    """

    def distance(self, a: Location, b: Location) -> float:
        for point in (a, b):
            if not -90.0 <= point.y <= 90.0:
                raise InvalidLatitudeError(f"latitude {point.y} outside [-90, 90]")
        lon1, lat1, lon2, lat2 = map(math.radians, (a.x, a.y, b.x, b.y))
        sin_dlat = math.sin((lat2 - lat1) / 2.0)
        sin_dlon = math.sin((lon2 - lon1) / 2.0)
        h = sin_dlat**2 + math.cos(lat1) * math.cos(lat2) * sin_dlon**2
        return 2.0 * EARTH_RADIUS_MILES * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class ClusterMembership:
    """0/1 distance: zero within a cluster, one across clusters.

    Cluster labels come from ``clusters``, keyed by the (x, y) coordinate
    pair. When no mapping is given, the x coordinate itself is the cluster
    id — convenient for datasets that encode cluster membership directly.
    """

    clusters: Mapping[tuple[float, float], Hashable] | None = None

    def _label(self, p: Location) -> Hashable:
        if self.clusters is None:
            return p.x
        try:
            return self.clusters[(p.x, p.y)]
        except KeyError:
            raise MissingDistanceError(f"no cluster label for location ({p.x}, {p.y})") from None

    def distance(self, a: Location, b: Location) -> float:
        return 0.0 if self._label(a) == self._label(b) else 1.0


@dataclass(frozen=True)
class CustomTable:
    """Caller-supplied distance table (driving times, product space, ...).

    The table is keyed by pairs of ``key_fn(location)`` values; the default
    key is the (x, y) coordinate pair. Lookups try both orderings, so a
    symmetric table need only store each pair once.
    """

    table: Mapping[tuple[Hashable, Hashable], float]
    key_fn: Callable[[Location], Hashable] = lambda loc: (loc.x, loc.y)

    def distance(self, a: Location, b: Location) -> float:
        ka, kb = self.key_fn(a), self.key_fn(b)
        if ka == kb:
            return 0.0
        for key in ((ka, kb), (kb, ka)):
            if key in self.table:
                return float(self.table[key])
        raise MissingDistanceError(f"no distance entry for pair ({ka!r}, {kb!r})")


DistanceMetric = Euclidean | GreatCircle | ClusterMembership | CustomTable


def distance(metric: DistanceMetric, a: Location, b: Location) -> float:
    """Distance between two locations under ``metric`` (≥ 0)."""
    return metric.distance(a, b)


# ---------------------------------------------------------------------------
# Bins and kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistanceBin:
    """Closed distance bin [center − half_width, center + half_width]."""

    center: float
    half_width: float

    def __post_init__(self) -> None:
        if not self.half_width > 0:
            raise ValidationError(f"bin half-width must be positive, got {self.half_width}")

    def contains(self, dist: float) -> bool:
        return abs(dist - self.center) <= self.half_width


def in_bin(bin: DistanceBin, dist: float) -> bool:
    """True iff ``dist`` lies in the closed interval of ``bin``."""
    return bin.contains(dist)


@dataclass(frozen=True)
class Kernel:
    """Distance kernel k((dist − center)/bandwidth), zero outside |u| ≤ 1.

    Variants: ``"uniform"`` (1 inside the window — reproduces the bin
    indicator exactly at equal bandwidth), ``"triangular"`` (1 − |u|),
    ``"epanechnikov"`` (0.75·(1 − u²)).
    """

    variant: str
    bandwidth: float

    _PROFILES = {
        "uniform": lambda u: 1.0,
        "triangular": lambda u: 1.0 - abs(u),
        "epanechnikov": lambda u: 0.75 * (1.0 - u * u),
    }

    def __post_init__(self) -> None:
        if self.variant not in self._PROFILES:
            raise ValidationError(f"unknown kernel variant {self.variant!r}")
        if not self.bandwidth > 0:
            raise ValidationError(f"kernel bandwidth must be positive, got {self.bandwidth}")

    def weight(self, dist: float, center: float) -> float:
        u = (dist - center) / self.bandwidth
        if abs(u) > 1.0:
            return 0.0
        return self._PROFILES[self.variant](u)


def kernel_weight(kernel: Kernel, dist: float, center: float) -> float:
    """Kernel weight of ``dist`` around ``center``; ≥ 0, zero outside the window."""
    return kernel.weight(dist, center)
