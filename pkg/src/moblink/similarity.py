"""Pairwise mobility-history similarity.

Score = sum over mutually-nearest bin pairs of proximity x min-idf,
normalized by relative history lengths, plus negative (alibi) terms from
mutually-furthest pairs. Proximity decays with inter-cell distance and
turns negative past the runaway distance (max distance an entity can
travel within one window).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping

from .geo import CellId, cell_distance_km
from .history import MobilityHistory, TimeLocationBin

# Floor for the log2 argument: caps the alibi penalty at -20 per pair so
# scores stay finite for matching and mixture fitting.
PROXIMITY_FLOOR = 2.0 ** -20


@dataclass(frozen=True)
class SimilarityParams:
    """alpha: max entity speed in km/minute; b: length-normalization mix."""

    alpha: float = 2.0
    b: float = 0.5
    window_width: int = 900

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")
        if self.window_width < 1:
            raise ValueError(f"window_width must be >= 1, got {self.window_width}")


@dataclass(frozen=True)
class DatasetStats:
    """Per-dataset aggregates used by idf and length normalization."""

    n_entities: int
    avg_bins: float
    bin_entity_count: Mapping[TimeLocationBin, int]


def dataset_stats(histories: Mapping[str, MobilityHistory]) -> DatasetStats:
    """Count, for every bin, how many distinct entities contain it."""
    counts: Counter[TimeLocationBin] = Counter()
    total_bins = 0
    for h in histories.values():
        bs = h.bins()
        total_bins += len(bs)
        counts.update(bs)
    n = len(histories)
    avg = total_bins / n if n else 0.0
    return DatasetStats(n_entities=n, avg_bins=avg, bin_entity_count=dict(counts))


def runaway_km(params: SimilarityParams) -> float:
    """Max distance an entity can travel within one window."""
    return (params.window_width / 60.0) * params.alpha


def proximity(e: TimeLocationBin, i: TimeLocationBin, runaway: float) -> float:
    """Proximity of two bins: 1 at zero distance, 0 at the runaway
    distance, negative beyond it (alibi), 0 across different windows."""
    if runaway <= 0:
        raise ValueError(f"runaway distance must be > 0, got {runaway}")
    if e.window != i.window:
        return 0.0
    d = cell_distance_km(e.cell, i.cell)
    return math.log2(max(2.0 - min(d / runaway, 2.0), PROXIMITY_FLOOR))


def idf(e: TimeLocationBin, stats: DatasetStats) -> float:
    """ln(n_entities / entities containing the bin); 0 for ubiquitous bins."""
    count = stats.bin_entity_count.get(e)
    if not count:
        raise ValueError(f"bin not present in dataset stats: {e}")
    return math.log(stats.n_entities / count)


def length_norm(h: MobilityHistory, stats: DatasetStats, b: float) -> float:
    """(1 - b) + b * |H| / avg |H|: discounts oversized histories."""
    if stats.avg_bins <= 0:
        raise ValueError("avg_bins must be > 0")
    return (1.0 - b) + b * (h.n_bins / stats.avg_bins)


def _greedy_pairs(cells_u, cells_v, w: int, furthest: bool):
    if not cells_u or not cells_v:
        return []
    scored = [
        (cell_distance_km(cu, cv), cu, cv)
        for cu in cells_u
        for cv in cells_v
    ]
    # ties broken by (u-side cell, v-side cell) for determinism
    if furthest:
        scored.sort(key=lambda t: (-t[0], t[1], t[2]))
    else:
        scored.sort(key=lambda t: (t[0], t[1], t[2]))
    k = min(len(cells_u), len(cells_v))
    used_u: set[CellId] = set()
    used_v: set[CellId] = set()
    out = []
    for _, cu, cv in scored:
        if cu in used_u or cv in used_v:
            continue
        used_u.add(cu)
        used_v.add(cv)
        out.append((TimeLocationBin(w, cu), TimeLocationBin(w, cv)))
        if len(out) == k:
            break
    return out


def mnn_pairs(cells_u, cells_v, w: int) -> list[tuple[TimeLocationBin, TimeLocationBin]]:
    """Mutually-nearest greedy pairing of the two cell sets of window `w`.

    Repeatedly pairs the closest remaining cross pair until the smaller
    side is exhausted; no cell appears twice.
    """
    return _greedy_pairs(cells_u, cells_v, w, furthest=False)


def mfn_pairs(cells_u, cells_v, w: int) -> list[tuple[TimeLocationBin, TimeLocationBin]]:
    """Mutually-furthest greedy pairing (largest distance first)."""
    return _greedy_pairs(cells_u, cells_v, w, furthest=True)


def score_pair_counted(
    hu: MobilityHistory,
    hv: MobilityHistory,
    stats_u: DatasetStats,
    stats_v: DatasetStats,
    params: SimilarityParams,
) -> tuple[float, int]:
    """Similarity score plus the number of cell-pair comparisons made."""
    if hu.level != hv.level:
        raise ValueError(f"history levels differ: {hu.level} vs {hv.level}")
    r_km = runaway_km(params)
    inv_ll = 1.0 / (length_norm(hu, stats_u, params.b) * length_norm(hv, stats_v, params.b))
    bec_u = stats_u.bin_entity_count
    bec_v = stats_v.bin_entity_count
    n_u = stats_u.n_entities
    n_v = stats_v.n_entities
    log, log2 = math.log, math.log2
    total = 0.0
    comparisons = 0
    for w in sorted(hu.windows.keys() & hv.windows.keys()):
        cu = hu.windows[w]
        cv = hv.windows[w]
        comparisons += len(cu) * len(cv)
        if len(cu) == 1 and len(cv) == 1:
            # single pair: MNN == MFN, counted once via the MNN path
            (cell_u,) = cu
            (cell_v,) = cv
            prox = log2(max(2.0 - min(cell_distance_km(cell_u, cell_v) / r_km, 2.0),
                            PROXIMITY_FLOOR))
            weight = min(log(n_u / bec_u[TimeLocationBin(w, cell_u)]),
                         log(n_v / bec_v[TimeLocationBin(w, cell_v)]))
            total += prox * weight * inv_ll
            continue
        emitted: set[tuple[CellId, CellId]] = set()
        for e, i in mnn_pairs(cu, cv, w):
            emitted.add((e.cell, i.cell))
            prox = log2(max(2.0 - min(cell_distance_km(e.cell, i.cell) / r_km, 2.0),
                            PROXIMITY_FLOOR))
            total += prox * min(log(n_u / bec_u[e]), log(n_v / bec_v[i])) * inv_ll
        for e, i in mfn_pairs(cu, cv, w):
            if (e.cell, i.cell) in emitted:
                continue
            prox = log2(max(2.0 - min(cell_distance_km(e.cell, i.cell) / r_km, 2.0),
                            PROXIMITY_FLOOR))
            term = prox * min(log(n_u / bec_u[e]), log(n_v / bec_v[i])) * inv_ll
            if term < 0.0:
                total += term
    return total, comparisons


def score_pair(
    hu: MobilityHistory,
    hv: MobilityHistory,
    stats_u: DatasetStats,
    stats_v: DatasetStats,
    params: SimilarityParams,
) -> float:
    """Similarity of two histories; windows present on one side only
    contribute nothing, alibi pairs contribute negatively."""
    return score_pair_counted(hu, hv, stats_u, stats_v, params)[0]
