"""Dominating-cell signatures and banded locality-sensitive hashing.

Each history is summarized by its most-visited cell per fixed query span
(a placeholder marks empty spans). Signatures are split into b bands of r
rows; entities whose band hashes collide in any band become candidate
pairs, approximating a similarity cutoff t = (1/b)^(1/r).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from hashlib import blake2b
from typing import Iterable, Mapping, Union

from .geo import MAX_LEVEL, CellId
from .geo import parent as cell_parent
from .history import MobilityHistory

# Fixed key for the banding hash; recorded in run metadata so runs are
# reproducible bit-for-bit.
SIGNATURE_HASH_SEED = bytes.fromhex("9e3779b97f4a7c15f39cc0605cedc834")


@dataclass(frozen=True)
class LshParams:
    """t: candidate similarity threshold; step: query span in leaf windows."""

    t: float = 0.6
    step: int = 48
    lsh_spatial_level: int = 16
    n_buckets: int = 4096

    def __post_init__(self) -> None:
        if not 0.0 < self.t < 1.0:
            raise ValueError(f"t must be in (0, 1), got {self.t}")
        if self.step < 1:
            raise ValueError(f"step must be >= 1, got {self.step}")
        if not 0 <= self.lsh_spatial_level <= MAX_LEVEL:
            raise ValueError(f"lsh_spatial_level out of range: {self.lsh_spatial_level}")
        if self.n_buckets < 2:
            raise ValueError(f"n_buckets must be >= 2, got {self.n_buckets}")


@dataclass(frozen=True)
class Placeholder:
    """Marks an empty query span; matches no cell and no other entity's
    placeholder."""

    owner: str


Entry = Union[CellId, Placeholder]


@dataclass(frozen=True)
class Signature:
    entity: str
    entries: tuple[Entry, ...]


@dataclass(frozen=True)
class BandingPlan:
    b: int
    r: int
    t_eff: float


def lambert_w(x: float) -> float:
    """Principal-branch Lambert W for x > 0 by Halley iteration.

    Converges to |w*e^w - x| well below 1e-9 across [1e-3, 1e3].
    """
    if not (math.isfinite(x) and x > 0.0):
        raise ValueError(f"lambert_w requires x > 0, got {x}")
    w = math.log1p(x)
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        if abs(f) <= 1e-13 * max(1.0, x):
            break
        denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0)
        w -= f / denom
    return w


def band_count(s: int, t: float) -> int:
    """Band count hitting threshold t for signature length s.

    Starts from b = round(exp(W(-s ln t))) and settles on the neighboring
    integer minimizing |(1/b)^(b/s) - t|; (1/b)^(b/s) is strictly
    decreasing in b, so that local argmin is the global one. Clamped to
    [1, s]; ties go to fewer (stricter) bands.
    """
    if s < 1:
        raise ValueError(f"signature length must be >= 1, got {s}")
    if not 0.0 < t < 1.0:
        raise ValueError(f"t must be in (0, 1), got {t}")
    b0 = min(max(round(math.exp(lambert_w(-s * math.log(t)))), 1), s)
    candidates = [b for b in (b0 - 1, b0, b0 + 1) if 1 <= b <= s]
    return min(candidates, key=lambda b: (abs((1.0 / b) ** (b / s) - t), b))


def banding_plan(s: int, t: float) -> BandingPlan:
    """Bands and rows for signature length s; rows = floor(s / b), the
    s - b*r leftover entries are ignored when hashing."""
    b = band_count(s, t)
    r = s // b
    t_eff = (1.0 / b) ** (1.0 / r)
    return BandingPlan(b=b, r=r, t_eff=t_eff)


def dominating_cell(
    h: MobilityHistory, w_start: int, w_end: int, level: int
) -> Entry:
    """Cell (at `level`) holding most of the entity's records in the span;
    ties go to the smallest cell id, empty spans yield a placeholder."""
    if level > h.level:
        raise ValueError(f"level {level} finer than history level {h.level}")
    counts = h.range_counts(w_start, w_end)
    if not counts:
        return Placeholder(h.entity)
    if level == h.level:
        agg = counts
    else:
        agg = {}
        for cell, n in counts.items():
            p = cell_parent(cell, level)
            agg[p] = agg.get(p, 0) + n
    return min(agg.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def signature_length(total_windows: int, step: int) -> int:
    if total_windows < 1:
        raise ValueError(f"total_windows must be >= 1, got {total_windows}")
    return -(-total_windows // step)


def build_signatures(
    histories: Mapping[str, MobilityHistory] | Iterable[MobilityHistory],
    params: LshParams,
    total_windows: int,
) -> list[Signature]:
    """One signature per history, all using the identical query schedule
    of non-overlapping spans [j*step, (j+1)*step)."""
    if isinstance(histories, Mapping):
        hs = [histories[k] for k in sorted(histories)]
    else:
        hs = sorted(histories, key=lambda h: h.entity)
    s_len = signature_length(total_windows, params.step)
    out = []
    for h in hs:
        entries = tuple(
            dominating_cell(h, j * params.step, (j + 1) * params.step,
                            params.lsh_spatial_level)
            for j in range(s_len)
        )
        out.append(Signature(entity=h.entity, entries=entries))
    return out


def _band_hash(band_index: int, band: tuple[Entry, ...], n_buckets: int) -> int | None:
    parts = [struct.pack("<I", band_index)]
    for entry in band:
        if isinstance(entry, Placeholder):
            return None
        parts.append(struct.pack("<BQ", entry.level, entry.path))
    digest = blake2b(b"".join(parts), digest_size=8, key=SIGNATURE_HASH_SEED).digest()
    return int.from_bytes(digest, "little") % n_buckets


def candidate_pairs(
    sigs_a: Iterable[Signature],
    sigs_b: Iterable[Signature],
    plan: BandingPlan,
    n_buckets: int,
) -> set[tuple[str, str]]:
    """Cross-dataset pairs co-hashed in at least one band.

    Bands containing a placeholder are skipped; each band hashes into its
    own bucket space (band index folded into the hash and the table key).
    """
    sigs_a = list(sigs_a)
    sigs_b = list(sigs_b)
    lengths = {len(s.entries) for s in sigs_a} | {len(s.entries) for s in sigs_b}
    if len(lengths) > 1:
        raise ValueError(f"signatures have mixed lengths: {sorted(lengths)}")
    out: set[tuple[str, str]] = set()
    for k in range(plan.b):
        lo = k * plan.r
        hi = lo + plan.r
        buckets: dict[int, tuple[list[str], list[str]]] = {}
        for side, sigs in ((0, sigs_a), (1, sigs_b)):
            for sig in sigs:
                bucket = _band_hash(k, sig.entries[lo:hi], n_buckets)
                if bucket is None:
                    continue
                slot = buckets.setdefault(bucket, ([], []))
                slot[side].append(sig.entity)
        for a_side, b_side in buckets.values():
            for ua in a_side:
                for vb in b_side:
                    out.add((ua, vb))
    return out


def signature_similarity(a: Signature, b: Signature) -> float:
    """Fraction of positions with equal dominating cells; placeholders
    match nothing."""
    if len(a.entries) != len(b.entries):
        raise ValueError("signature lengths differ")
    if not a.entries:
        return 0.0
    matches = sum(
        1
        for x, y in zip(a.entries, b.entries)
        if not isinstance(x, Placeholder) and not isinstance(y, Placeholder) and x == y
    )
    return matches / len(a.entries)
