"""Synthetic trace generation and the two-dataset sampling protocol.

Benchmarks sample two overlapping datasets from one record pool: the
intersection ratio controls how many entities appear in both, the
inclusion probability downsamples records independently per dataset, and
ids are re-anonymized so only the returned ground-truth map ties them.
"""

from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass

from .geo import EARTH_RADIUS_KM, LatLon, haversine_km
from .history import Record


@dataclass(frozen=True)
class SampleConfig:
    intersection_ratio: float
    inclusion_probability: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.intersection_ratio <= 1.0:
            raise ValueError(f"intersection_ratio must be in [0, 1], got {self.intersection_ratio}")
        if not 0.0 < self.inclusion_probability <= 1.0:
            raise ValueError(
                f"inclusion_probability must be in (0, 1], got {self.inclusion_probability}"
            )


@dataclass(frozen=True)
class MobilityModel:
    """Home-biased random walk inside a bounding box.

    Entities wander with per-move displacement <= step_km and revisit
    their exact home point with probability home_return_prob per step;
    step_km is additionally capped at max_speed_km_per_min * step_minutes
    so consecutive records never violate the speed bound.
    """

    lat_min: float = 37.0
    lat_max: float = 38.5
    lon_min: float = -123.0
    lon_max: float = -121.5
    step_km: float = 20.0
    home_return_prob: float = 0.3
    max_speed_km_per_min: float = 2.0

    def __post_init__(self) -> None:
        if self.lat_min >= self.lat_max or self.lon_min >= self.lon_max:
            raise ValueError("empty bounding box")
        if self.step_km <= 0 or self.home_return_prob < 0 or self.home_return_prob > 1:
            raise ValueError("invalid walk parameters")
        if self.max_speed_km_per_min <= 0:
            raise ValueError("max_speed_km_per_min must be > 0")


def _destination(p: LatLon, bearing_rad: float, d_km: float) -> LatLon:
    """Great-circle destination; exact, so the move length equals d_km."""
    delta = d_km / EARTH_RADIUS_KM
    phi1 = math.radians(p.lat)
    lmb1 = math.radians(p.lon)
    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(bearing_rad)
    phi2 = math.asin(max(-1.0, min(1.0, sin_phi2)))
    lmb2 = lmb1 + math.atan2(
        math.sin(bearing_rad) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * sin_phi2,
    )
    lon = math.degrees(lmb2)
    lon = ((lon + 180.0) % 360.0) - 180.0
    return LatLon(math.degrees(phi2), lon)


def _clamp_to_box(p: LatLon, model: MobilityModel) -> LatLon:
    lat = min(max(p.lat, model.lat_min), model.lat_max)
    lon = min(max(p.lon, model.lon_min), model.lon_max)
    if lat == p.lat and lon == p.lon:
        return p
    return LatLon(lat, lon)


def gen_synthetic(
    n_entities: int,
    steps: int,
    step_minutes: int,
    model: MobilityModel = MobilityModel(),
    seed: int = 0,
) -> list[Record]:
    """Random-walk traces: one record per entity per step, step interval
    step_minutes, homes uniform in the model box."""
    if n_entities < 1:
        raise ValueError(f"n_entities must be >= 1, got {n_entities}")
    if steps < 1 or step_minutes < 1:
        raise ValueError("steps and step_minutes must be >= 1")
    rng = random.Random(seed)
    max_step = min(model.step_km, model.max_speed_km_per_min * step_minutes)
    records: list[Record] = []
    for idx in range(n_entities):
        entity = f"e{idx:05d}"
        home = LatLon(
            rng.uniform(model.lat_min, model.lat_max),
            rng.uniform(model.lon_min, model.lon_max),
        )
        pos = home
        for s in range(steps):
            records.append(Record(entity=entity, loc=pos, t=s * step_minutes * 60))
            if rng.random() < model.home_return_prob:
                d_home = haversine_km(pos, home)
                if d_home <= max_step:
                    pos = home
                else:
                    bearing = _bearing(pos, home)
                    pos = _clamp_to_box(_destination(pos, bearing, max_step * 0.999), model)
            else:
                bearing = rng.uniform(0.0, 2.0 * math.pi)
                pos = _clamp_to_box(
                    _destination(pos, bearing, rng.uniform(0.0, max_step * 0.999)), model
                )
    return records


def _bearing(a: LatLon, b: LatLon) -> float:
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dlmb = math.radians(b.lon - a.lon)
    y = math.sin(dlmb) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlmb)
    return math.atan2(y, x)


def sample_pair(
    records: list[Record],
    cfg: SampleConfig,
    min_records: int = 5,
) -> tuple[list[Record], list[Record], dict[str, str]]:
    """Draw two overlapping datasets plus the ground-truth id map.

    The entity universe is split into common / A-only / B-only groups so
    that |common| / min(|A|, |B|) matches the intersection ratio; each
    record of a dataset's entities survives independently with the
    inclusion probability; entities left with <= min_records records are
    dropped from that dataset. Ids are re-anonymized per dataset and the
    truth map covers the surviving common entities.
    """
    by_entity: dict[str, list[Record]] = defaultdict(list)
    for r in records:
        by_entity[r.entity].append(r)
    entities = sorted(by_entity)
    n = len(entities)
    if n == 0:
        raise ValueError("no entities to sample from")
    rho = cfg.intersection_ratio
    n_common = round(n * rho / (2.0 - rho)) if rho > 0 else 0
    if rho > 0 and n_common == 0:
        raise ValueError(f"too few entities ({n}) to honor intersection ratio {rho}")

    rng = random.Random(cfg.seed)
    shuffled = entities[:]
    rng.shuffle(shuffled)
    rest = n - n_common
    n_only_a = rest - rest // 2
    common = shuffled[:n_common]
    only_a = shuffled[n_common:n_common + n_only_a]
    only_b = shuffled[n_common + n_only_a:]

    p = cfg.inclusion_probability
    keep_a: dict[str, list[Record]] = {}
    keep_b: dict[str, list[Record]] = {}
    for entity in sorted(common + only_a):
        kept = [r for r in by_entity[entity] if p >= 1.0 or rng.random() < p]
        if len(kept) > min_records:
            keep_a[entity] = kept
    for entity in sorted(common + only_b):
        kept = [r for r in by_entity[entity] if p >= 1.0 or rng.random() < p]
        if len(kept) > min_records:
            keep_b[entity] = kept

    def anonymize(kept: dict[str, list[Record]], prefix: str) -> tuple[list[Record], dict[str, str]]:
        order = sorted(kept)
        rng.shuffle(order)
        id_map = {entity: f"{prefix}{i:06d}" for i, entity in enumerate(order)}
        out = [
            Record(entity=id_map[entity], loc=r.loc, t=r.t)
            for entity in sorted(kept)
            for r in kept[entity]
        ]
        out.sort(key=lambda r: (r.entity, r.t))
        return out, id_map

    records_a, map_a = anonymize(keep_a, "A")
    records_b, map_b = anonymize(keep_b, "B")
    truth = {
        map_a[e]: map_b[e]
        for e in common
        if e in keep_a and e in keep_b
    }
    return records_a, records_b, truth
