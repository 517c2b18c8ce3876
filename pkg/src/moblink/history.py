"""Per-entity mobility histories: sparse segment trees of per-window cell counts."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

from .geo import MAX_LEVEL, CellId, LatLon, cell_at
from .geo import parent as cell_parent


@dataclass(frozen=True)
class Record:
    """One timestamped, geolocated observation of an entity."""

    entity: str
    loc: LatLon
    t: int

    def __post_init__(self) -> None:
        if not self.entity:
            raise ValueError("entity id must be non-empty")
        if self.t < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.t}")


class TimeLocationBin(NamedTuple):
    """A (temporal window index, spatial cell) pair."""

    window: int
    cell: CellId


@dataclass(frozen=True)
class HistoryConfig:
    """Binning configuration shared by the two datasets of a run.

    epoch_origin is the epoch second that window index 0 starts at; when
    None it is derived from the input (min timestamp floored to a multiple
    of window_width). Both datasets of a run must use the same origin so
    window indices are comparable.
    """

    window_width: int = 900
    spatial_level: int = 12
    epoch_origin: int | None = None

    def __post_init__(self) -> None:
        if self.window_width < 1:
            raise ValueError(f"window_width must be >= 1, got {self.window_width}")
        if not 0 <= self.spatial_level <= MAX_LEVEL:
            raise ValueError(f"spatial_level out of range: {self.spatial_level}")


class _Node:
    __slots__ = ("lo", "hi", "counts", "left", "right")

    def __init__(self, lo, hi, counts, left, right):
        self.lo = lo
        self.hi = hi
        self.counts = counts
        self.left = left
        self.right = right


def _build_tree(leaves: list[tuple[int, dict[CellId, int]]], i: int, j: int) -> _Node:
    if j - i == 1:
        w, counts = leaves[i]
        return _Node(w, w + 1, counts, None, None)
    m = (i + j) // 2
    left = _build_tree(leaves, i, m)
    right = _build_tree(leaves, m, j)
    merged = dict(left.counts)
    for cell, n in right.counts.items():
        merged[cell] = merged.get(cell, 0) + n
    return _Node(left.lo, right.hi, merged, left, right)


def _query(node: _Node | None, w_start: int, w_end: int, out: dict[CellId, int]) -> None:
    if node is None or w_end <= node.lo or node.hi <= w_start:
        return
    if w_start <= node.lo and node.hi <= w_end:
        for cell, n in node.counts.items():
            out[cell] = out.get(cell, 0) + n
        return
    _query(node.left, w_start, w_end, out)
    _query(node.right, w_start, w_end, out)


class MobilityHistory:
    """Immutable per-entity history over (window, cell) bins.

    Leaves are the populated windows only; the segment tree over them
    answers range aggregations in O(log of populated windows) node merges.
    """

    __slots__ = ("entity", "level", "windows", "_tree", "_bins", "_built")

    def __init__(self, entity: str, level: int, windows: Mapping[int, Mapping[CellId, int]]):
        self.entity = entity
        self.level = level
        self.windows: dict[int, dict[CellId, int]] = {
            w: dict(sorted(windows[w].items())) for w in sorted(windows)
        }
        self._tree: _Node | None = None
        self._built = False
        self._bins: frozenset[TimeLocationBin] | None = None

    def bins(self) -> frozenset[TimeLocationBin]:
        """All populated (window, cell) bins."""
        if self._bins is None:
            self._bins = frozenset(
                TimeLocationBin(w, cell)
                for w, cells in self.windows.items()
                for cell in cells
            )
        return self._bins

    @property
    def n_bins(self) -> int:
        return len(self.bins())

    @property
    def min_window(self) -> int | None:
        return min(self.windows) if self.windows else None

    @property
    def max_window(self) -> int | None:
        return max(self.windows) if self.windows else None

    def window_cells(self, w: int) -> dict[CellId, int]:
        """Leaf cell counts of window `w` (empty dict when unpopulated)."""
        return self.windows.get(w, {})

    def _ensure_tree(self) -> None:
        if not self._built:
            leaves = [(w, cells) for w, cells in self.windows.items()]
            self._tree = _build_tree(leaves, 0, len(leaves)) if leaves else None
            self._built = True

    def range_counts(self, w_start: int, w_end: int) -> dict[CellId, int]:
        """Elementwise sum of leaf counts over windows [w_start, w_end)."""
        if w_start >= w_end:
            raise ValueError(f"inverted window range [{w_start}, {w_end})")
        self._ensure_tree()
        out: dict[CellId, int] = {}
        _query(self._tree, w_start, w_end, out)
        return out

    def coarsen(self, level: int) -> "MobilityHistory":
        """Re-key all cells to an ancestor level (identity at own level)."""
        if level > self.level:
            raise ValueError(f"cannot refine history from level {self.level} to {level}")
        if level == self.level:
            return self
        windows: dict[int, dict[CellId, int]] = {}
        for w, cells in self.windows.items():
            agg: dict[CellId, int] = {}
            for cell, n in cells.items():
                p = cell_parent(cell, level)
                agg[p] = agg.get(p, 0) + n
            windows[w] = agg
        return MobilityHistory(self.entity, level, windows)

    def node_count(self) -> int:
        self._ensure_tree()
        def count(node):
            if node is None:
                return 0
            return 1 + count(node.left) + count(node.right)
        return count(self._tree)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MobilityHistory):
            return NotImplemented
        return (self.entity == other.entity and self.level == other.level
                and self.windows == other.windows)

    def __hash__(self):
        return hash((self.entity, self.level))

    def __repr__(self) -> str:
        return (f"MobilityHistory({self.entity!r}, level={self.level}, "
                f"windows={len(self.windows)}, bins={self.n_bins})")


def resolve_origin(timestamps: Iterable[int], window_width: int) -> int:
    """Min timestamp floored to a window_width multiple."""
    t_min = min(timestamps)
    return (t_min // window_width) * window_width


def build_histories(
    records: Iterable[Record], cfg: HistoryConfig
) -> tuple[dict[str, MobilityHistory], int]:
    """Group records into per-entity histories.

    Returns (histories, rejected) where rejected counts records falling
    before the epoch origin. Empty input yields an empty map.
    """
    records = list(records)
    if not records:
        return {}, 0
    origin = cfg.epoch_origin
    if origin is None:
        origin = resolve_origin((r.t for r in records), cfg.window_width)
    acc: dict[str, dict[int, dict[CellId, int]]] = defaultdict(dict)
    rejected = 0
    for r in records:
        w = (r.t - origin) // cfg.window_width
        if w < 0:
            rejected += 1
            continue
        cell = cell_at(r.loc, cfg.spatial_level)
        cells = acc[r.entity].setdefault(w, {})
        cells[cell] = cells.get(cell, 0) + 1
    histories = {
        entity: MobilityHistory(entity, cfg.spatial_level, windows)
        for entity, windows in acc.items()
    }
    return histories, rejected


def total_window_count(histories: Iterable[MobilityHistory]) -> int:
    """Max populated window index across histories, plus one (0 if none)."""
    top = -1
    for h in histories:
        mw = h.max_window
        if mw is not None and mw > top:
            top = mw
    return top + 1
