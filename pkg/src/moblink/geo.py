"""Hierarchical quadtree cells over the lat/lon plane and geodesic distances.

The cell scheme is a 31-level quadtree over the equirectangular domain
(root = whole lat/lon rectangle, quadrant split at the midpoints). Cell
rectangles are half-open on both axes, with the high edge closed at the
domain boundary, so every point belongs to exactly one cell per level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

EARTH_RADIUS_KM = 6371.0088
MAX_LEVEL = 30


@dataclass(frozen=True)
class LatLon:
    """A point in degrees: lat in [-90, 90], lon in [-180, 180)."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinates ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon < 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


class CellId(NamedTuple):
    """A quadtree cell: `level` quadrant choices packed into `path`.

    Each choice is 2 bits (bit 1 = upper latitude half, bit 0 = upper
    longitude half), first choice in the most significant position.
    Tuple ordering gives a total, deterministic cell order.
    """

    level: int
    path: int


ROOT_CELL = CellId(0, 0)


def _check_level(level: int) -> None:
    if not isinstance(level, int) or isinstance(level, bool):
        raise ValueError(f"level must be an integer, got {level!r}")
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"level out of range [0, {MAX_LEVEL}]: {level}")


def cell_at(p: LatLon, level: int) -> CellId:
    """Return the level-`level` cell whose rectangle contains `p`."""
    _check_level(level)
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    path = 0
    for _ in range(level):
        lat_mid = (lat_lo + lat_hi) / 2.0
        lon_mid = (lon_lo + lon_hi) / 2.0
        q = 0
        if p.lat >= lat_mid:
            q |= 2
            lat_lo = lat_mid
        else:
            lat_hi = lat_mid
        if p.lon >= lon_mid:
            q |= 1
            lon_lo = lon_mid
        else:
            lon_hi = lon_mid
        path = (path << 2) | q
    return CellId(level, path)


def parent(c: CellId, level: int) -> CellId:
    """Ancestor of `c` at `level`; identity when level == c.level."""
    _check_level(level)
    if level > c.level:
        raise ValueError(f"requested level {level} above cell level {c.level}")
    return CellId(level, c.path >> (2 * (c.level - level)))


def children(c: CellId) -> tuple[CellId, CellId, CellId, CellId]:
    """The four cells tiling `c` at the next level."""
    if c.level >= MAX_LEVEL:
        raise ValueError(f"cell already at max level {MAX_LEVEL}")
    base = c.path << 2
    lvl = c.level + 1
    return (CellId(lvl, base), CellId(lvl, base | 1),
            CellId(lvl, base | 2), CellId(lvl, base | 3))


@lru_cache(maxsize=1 << 17)
def cell_bounds(c: CellId) -> tuple[float, float, float, float]:
    """(lat_lo, lat_hi, lon_lo, lon_hi) of the cell rectangle.

    Midpoints are dyadic fractions of the domain, so the bounds are exact
    in binary floating point and decode/encode round-trips are identities.
    """
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    for i in range(c.level):
        q = (c.path >> (2 * (c.level - 1 - i))) & 3
        lat_mid = (lat_lo + lat_hi) / 2.0
        lon_mid = (lon_lo + lon_hi) / 2.0
        if q & 2:
            lat_lo = lat_mid
        else:
            lat_hi = lat_mid
        if q & 1:
            lon_lo = lon_mid
        else:
            lon_hi = lon_mid
    return lat_lo, lat_hi, lon_lo, lon_hi


def cell_center(c: CellId) -> LatLon:
    lat_lo, lat_hi, lon_lo, lon_hi = cell_bounds(c)
    return LatLon((lat_lo + lat_hi) / 2.0, (lon_lo + lon_hi) / 2.0)


def haversine_km(a: LatLon, b: LatLon) -> float:
    """Great-circle distance in km on a sphere of radius 6371.0088 km."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def _interval_gap(lo_a: float, hi_a: float, lo_b: float, hi_b: float) -> float:
    return max(0.0, lo_a - hi_b, lo_b - hi_a)


def _min_abs_cos(lat_lo: float, lat_hi: float) -> float:
    # cos is smallest at the endpoint farthest from the equator
    return max(0.0, math.cos(math.radians(max(abs(lat_lo), abs(lat_hi)))))


@lru_cache(maxsize=1 << 18)
def _rect_distance_km(a: CellId, b: CellId) -> float:
    alat_lo, alat_hi, alon_lo, alon_hi = cell_bounds(a)
    blat_lo, blat_hi, blon_lo, blon_hi = cell_bounds(b)
    dphi = _interval_gap(alat_lo, alat_hi, blat_lo, blat_hi)
    dlmb = min(
        _interval_gap(alon_lo, alon_hi, blon_lo + shift, blon_hi + shift)
        for shift in (-360.0, 0.0, 360.0)
    )
    if dphi == 0.0 and dlmb == 0.0:
        return 0.0
    # Admissible lower bound on the pointwise haversine distance: the lat
    # and lon separations come from clamping the rectangles toward each
    # other, and the cos factor takes each rectangle's pole-most latitude
    # so no point pair can beat the bound.
    h = (math.sin(math.radians(dphi) / 2.0) ** 2
         + _min_abs_cos(alat_lo, alat_hi) * _min_abs_cos(blat_lo, blat_hi)
         * math.sin(math.radians(dlmb) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def cell_distance_km(a: CellId, b: CellId) -> float:
    """Minimum distance between two same-level cell rectangles.

    Zero when the rectangles are identical, overlap, or touch; longitude
    wraparound is handled by evaluating the +-360 degree shifted boxes.
    """
    if a.level != b.level:
        raise ValueError(f"cell levels differ: {a.level} vs {b.level}")
    if a == b:
        return 0.0
    if a <= b:
        return _rect_distance_km(a, b)
    return _rect_distance_km(b, a)
