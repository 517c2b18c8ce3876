"""Spatial-level auto-tuning via the self-similarity-ratio elbow test.

At coarse levels every entity looks like every other (cross/self
similarity ratio near 1); finer levels drive the ratio down until it
flattens. The elbow of that curve is the level to link at.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from .history import MobilityHistory
from .similarity import SimilarityParams, dataset_stats, score_pair

DEFAULT_LEVELS = (6, 8, 10, 12, 14, 16, 18, 20)
DEFAULT_SAMPLE_SIZE = 50


@dataclass(frozen=True)
class TuningCurve:
    levels: tuple[int, ...]
    ratios: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.levels) != len(self.ratios):
            raise ValueError("levels and ratios must have equal length")


def tuning_curve(
    histories: Mapping[str, MobilityHistory],
    levels: Sequence[int],
    params: SimilarityParams,
    sample_size: int | None = None,
    seed: int = 0,
) -> TuningCurve:
    """Mean cross/self similarity ratio at each candidate level.

    Pivot entities are sampled with `seed` and crossed with every other
    entity; pairs whose pivot self-similarity is zero are excluded.
    """
    entities = sorted(histories)
    n = len(entities)
    if n < 2:
        raise ValueError(f"need at least 2 entities, got {n}")
    if sample_size is None:
        sample_size = min(DEFAULT_SAMPLE_SIZE, n)
    if sample_size < 2:
        raise ValueError(f"sample_size must be >= 2, got {sample_size}")
    max_level = min(h.level for h in histories.values())
    bad = [lv for lv in levels if lv > max_level]
    if bad:
        raise ValueError(f"levels {bad} exceed history build level {max_level}")

    rng = random.Random(seed)
    pivots = sorted(rng.sample(entities, min(sample_size, n)))

    ratios = []
    for level in levels:
        at_level = {e: histories[e].coarsen(level) for e in entities}
        stats = dataset_stats(at_level)
        collected = []
        for u in pivots:
            hu = at_level[u]
            self_sim = score_pair(hu, hu, stats, stats, params)
            if self_sim == 0.0:
                continue
            for v in entities:
                if v == u:
                    continue
                collected.append(score_pair(hu, at_level[v], stats, stats, params) / self_sim)
        if not collected:
            raise ValueError(f"all sampled self-similarities are zero at level {level}")
        ratios.append(sum(collected) / len(collected))
    return TuningCurve(levels=tuple(levels), ratios=tuple(ratios))


def elbow(curve: TuningCurve) -> int:
    """Level of the interior point farthest from the first-last chord
    (coordinates normalized to [0, 1]); ties go to the smaller level."""
    n = len(curve.levels)
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    lv_lo, lv_hi = curve.levels[0], curve.levels[-1]
    r_lo, r_hi = min(curve.ratios), max(curve.ratios)
    lv_span = (lv_hi - lv_lo) or 1
    r_span = (r_hi - r_lo) or 1.0
    xs = [(lv - lv_lo) / lv_span for lv in curve.levels]
    ys = [(r - r_lo) / r_span for r in curve.ratios]
    x0, y0 = xs[0], ys[0]
    x1, y1 = xs[-1], ys[-1]
    chord = math.hypot(x1 - x0, y1 - y0) or 1.0
    best_level = curve.levels[1]
    best_dist = -1.0
    for i in range(1, n - 1):
        dist = abs((x1 - x0) * (y0 - ys[i]) - (x0 - xs[i]) * (y1 - y0)) / chord
        # strict improvement beyond float noise, so ties keep the smaller level
        if dist > best_dist + 1e-12:
            best_dist = dist
            best_level = curve.levels[i]
    return best_level


def tune_spatial_level(
    histories_a: Mapping[str, MobilityHistory],
    histories_b: Mapping[str, MobilityHistory],
    levels: Sequence[int] = DEFAULT_LEVELS,
    params: SimilarityParams = SimilarityParams(),
    sample_size: int | None = None,
    seed: int = 0,
) -> tuple[int, TuningCurve, TuningCurve]:
    """Elbow per dataset (seeds seed and seed+1); returns the higher
    elbow level plus both curves."""
    curve_a = tuning_curve(histories_a, levels, params, sample_size, seed)
    curve_b = tuning_curve(histories_b, levels, params, sample_size, seed + 1)
    return max(elbow(curve_a), elbow(curve_b)), curve_a, curve_b
