"""End-to-end linkage runs: ingestion, orchestration, metrics, outputs.

A run ingests two record files, builds histories on a shared window
origin, optionally auto-tunes the spatial level, restricts pairs via LSH
or scores all pairs, matches and thresholds, then writes links.csv,
metrics.json, gmm.json, histogram.csv and run_meta.json into the output
directory. All outputs except run_meta.json are byte-deterministic for a
fixed config and seed.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import __version__
from .geo import LatLon
from .history import (HistoryConfig, MobilityHistory, Record, build_histories,
                      resolve_origin, total_window_count)
from .linkage import (LinkageResult, WeightedEdge, link, score_histogram)
from .lsh import (SIGNATURE_HASH_SEED, BandingPlan, LshParams, banding_plan,
                  build_signatures, candidate_pairs, signature_length)
from .similarity import SimilarityParams, dataset_stats, score_pair_counted
from .tuning import DEFAULT_LEVELS, tune_spatial_level


class FormatError(ValueError):
    """Input file rejected: too many malformed lines."""


MALFORMED_FRACTION_LIMIT = 0.10


@dataclass(frozen=True)
class RunConfig:
    path_a: str
    path_b: str
    history: HistoryConfig = HistoryConfig()
    similarity: SimilarityParams = SimilarityParams()
    lsh: LshParams | None = None
    tuning: bool = False
    tuning_levels: tuple[int, ...] = DEFAULT_LEVELS
    tuning_sample_size: int | None = None
    min_records: int = 5
    out_dir: str = "run_out"
    seed: int = 0
    truth_path: str | None = None
    dump_scores: bool = False
    workers: int = 1
    hit_k: int = 40

    def __post_init__(self) -> None:
        if self.min_records < 0:
            raise ValueError(f"min_records must be >= 0, got {self.min_records}")
        if self.history.window_width != self.similarity.window_width:
            raise ValueError("history and similarity window widths disagree")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    hit_precision_at_k: float | None
    tp: int
    fp: int
    fn: int
    pair_comparisons: int = 0
    candidate_pairs: int = 0
    bin_comparisons: int = 0
    runtime_ms: float | None = None


@dataclass
class RunArtifacts:
    result: LinkageResult
    metrics: Metrics | None
    out_dir: str
    n_entities_a: int
    n_entities_b: int
    candidate_count: int
    pair_comparisons: int
    bin_comparisons: int
    tuned_level: int | None
    plan: BandingPlan | None
    scores: dict[tuple[str, str], float] = field(default_factory=dict)
    runtime_ms: float = 0.0


def ingest(path: str) -> tuple[list[Record], int]:
    """Parse a `entity_id,timestamp,lat,lon` CSV (header auto-detected).

    Malformed lines are skipped and counted; more than 10% malformed
    raises FormatError.
    """
    records: list[Record] = []
    malformed = 0
    total = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for idx, row in enumerate(reader):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if idx == 0 and _looks_like_header(row):
                continue
            total += 1
            rec = _parse_row(row)
            if rec is None:
                malformed += 1
            else:
                records.append(rec)
    if total > 0 and malformed / total > MALFORMED_FRACTION_LIMIT:
        raise FormatError(
            f"{path}: {malformed}/{total} malformed lines exceeds "
            f"{MALFORMED_FRACTION_LIMIT:.0%} limit"
        )
    return records, malformed


def _looks_like_header(row: Sequence[str]) -> bool:
    if len(row) < 4:
        return True
    for value in row[1:4]:
        try:
            float(value)
        except ValueError:
            return True
    return False


def _parse_row(row: Sequence[str]) -> Record | None:
    if len(row) != 4:
        return None
    entity = row[0].strip()
    if not entity:
        return None
    try:
        t = int(float(row[1]))
        loc = LatLon(float(row[2]), float(row[3]))
        return Record(entity=entity, loc=loc, t=t)
    except (ValueError, OverflowError):
        return None


def write_records_csv(path: str, records: Iterable[Record]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity_id", "timestamp", "lat", "lon"])
        for r in records:
            writer.writerow([r.entity, r.t, repr(r.loc.lat), repr(r.loc.lon)])


def _filter_min_records(records: list[Record], min_records: int) -> list[Record]:
    counts: dict[str, int] = {}
    for r in records:
        counts[r.entity] = counts.get(r.entity, 0) + 1
    return [r for r in records if counts[r.entity] > min_records]


def evaluate(
    result: LinkageResult,
    truth: Mapping[str, str],
    all_scores: Mapping[tuple[str, str], float] | None = None,
    k: int = 40,
    pair_comparisons: int = 0,
    candidate_count: int = 0,
    bin_comparisons: int = 0,
    runtime_ms: float | None = None,
) -> Metrics:
    """Precision/recall/F1 of the linked set against the truth map, plus
    rank-based hit precision when the full score map is supplied.

    Hit precision per truth entity is max(0, (k - rank) / k) with rank the
    0-based position of the true partner in that entity's descending score
    order (0 credit when the partner was never scored)."""
    linked = {(e.u, e.v) for e in result.linked}
    truth_pairs = set(truth.items())
    tp = len(linked & truth_pairs)
    fp = len(linked) - tp
    fn = len(truth_pairs) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0

    hit = None
    if all_scores is not None:
        per_u: dict[str, list[tuple[float, str]]] = {}
        for (u, v), s in all_scores.items():
            per_u.setdefault(u, []).append((-s, v))
        total = 0.0
        for u, v_true in truth.items():
            cands = sorted(per_u.get(u, []))
            rank = next((i for i, (_, v) in enumerate(cands) if v == v_true), None)
            if rank is not None:
                total += max(0.0, (k - rank) / k)
        hit = total / len(truth) if truth else 0.0

    return Metrics(
        precision=precision, recall=recall, f1=f1, hit_precision_at_k=hit,
        tp=tp, fp=fp, fn=fn,
        pair_comparisons=pair_comparisons, candidate_pairs=candidate_count,
        bin_comparisons=bin_comparisons, runtime_ms=runtime_ms,
    )


# --- pair scoring (optionally fanned out across processes) ---------------

_POOL_STATE: dict = {}


def _score_chunk(pairs: list[tuple[str, str]]) -> list[tuple[str, str, float, int]]:
    ha = _POOL_STATE["ha"]
    hb = _POOL_STATE["hb"]
    sa = _POOL_STATE["sa"]
    sb = _POOL_STATE["sb"]
    params = _POOL_STATE["params"]
    out = []
    for u, v in pairs:
        s, ncmp = score_pair_counted(ha[u], hb[v], sa, sb, params)
        out.append((u, v, s, ncmp))
    return out


def score_candidates(
    pairs: Sequence[tuple[str, str]],
    histories_a: Mapping[str, MobilityHistory],
    histories_b: Mapping[str, MobilityHistory],
    stats_a,
    stats_b,
    params: SimilarityParams,
    workers: int = 1,
) -> list[tuple[str, str, float, int]]:
    """Score candidate pairs; deterministic regardless of worker count."""
    _POOL_STATE.update(ha=histories_a, hb=histories_b, sa=stats_a, sb=stats_b, params=params)
    try:
        if workers <= 1 or len(pairs) < 256:
            return _score_chunk(list(pairs))
        chunk = -(-len(pairs) // workers)
        chunks = [list(pairs[i:i + chunk]) for i in range(0, len(pairs), chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_score_chunk, chunks))
        return [row for part in results for row in part]
    finally:
        _POOL_STATE.clear()


# --- output writers -------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_links_csv(path: str, linked: Sequence[WeightedEdge]) -> None:
    rows = sorted(linked, key=lambda e: (-e.weight, e.u, e.v))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "score"])
        for e in rows:
            writer.writerow([e.u, e.v, _fmt(e.weight)])


def _metrics_payload(metrics: Metrics | None, artifacts: RunArtifacts) -> dict:
    payload: dict = {
        "candidate_pairs": artifacts.candidate_count,
        "pair_comparisons": artifacts.pair_comparisons,
        "bin_comparisons": artifacts.bin_comparisons,
        "n_matched": len(artifacts.result.matched),
        "n_linked": len(artifacts.result.linked),
        "threshold": artifacts.result.threshold,
        "thresholded": artifacts.result.thresholded,
    }
    if metrics is not None:
        payload.update(
            precision=metrics.precision,
            recall=metrics.recall,
            f1=metrics.f1,
            hit_precision_at_k=metrics.hit_precision_at_k,
            tp=metrics.tp,
            fp=metrics.fp,
            fn=metrics.fn,
        )
    return payload


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _gmm_payload(result: LinkageResult) -> dict:
    payload: dict = {
        "threshold": result.threshold if math.isfinite(result.threshold) else None,
        "thresholded": result.thresholded,
        "em_init": "sorted-median-split",
        "variance_floor_ratio": 1e-6,
    }
    if result.gmm is None:
        payload["degenerate"] = True
    else:
        payload.update(
            degenerate=False,
            weights=list(result.gmm.weights),
            means=list(result.gmm.means),
            sigmas=list(result.gmm.sigmas),
            log_likelihood=result.gmm.log_likelihood,
            iterations=result.gmm.iterations,
            converged=result.gmm.converged,
        )
    return payload


def write_histogram_csv(path: str, weights: Sequence[float]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, count in score_histogram(weights):
            writer.writerow([_fmt(lo), _fmt(hi), count])


def write_tuning_csv(path: str, curves: dict[str, Sequence[tuple[int, float]]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "level", "ratio"])
        for name in sorted(curves):
            for level, ratio in curves[name]:
                writer.writerow([name, level, _fmt(ratio)])


def read_truth_csv(path: str) -> dict[str, str]:
    truth: dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for idx, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if idx == 0 and row[0].strip().lower() in ("u", "a", "a_id", "entity_a"):
                continue
            truth[row[0].strip()] = row[1].strip()
    return truth


def write_truth_csv(path: str, truth: Mapping[str, str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["a_id", "b_id"])
        for u in sorted(truth):
            writer.writerow([u, truth[u]])


# --- run orchestration ----------------------------------------------------

def run(cfg: RunConfig) -> RunArtifacts:
    """Execute a full linkage run and write its artifacts to cfg.out_dir."""
    t_start = time.perf_counter()
    os.makedirs(cfg.out_dir, exist_ok=True)

    records_a, skipped_a = ingest(cfg.path_a)
    records_b, skipped_b = ingest(cfg.path_b)
    records_a = _filter_min_records(records_a, cfg.min_records)
    records_b = _filter_min_records(records_b, cfg.min_records)

    origin = cfg.history.epoch_origin
    if origin is None and (records_a or records_b):
        origin = resolve_origin(
            (r.t for r in itertools.chain(records_a, records_b)),
            cfg.history.window_width,
        )
    elif origin is None:
        origin = 0

    build_level = cfg.history.spatial_level
    if cfg.lsh is not None:
        build_level = max(build_level, cfg.lsh.lsh_spatial_level)
    if cfg.tuning:
        build_level = max(build_level, max(cfg.tuning_levels))
    build_cfg = HistoryConfig(
        window_width=cfg.history.window_width,
        spatial_level=build_level,
        epoch_origin=origin,
    )
    hist_a_full, rejected_a = build_histories(records_a, build_cfg)
    hist_b_full, rejected_b = build_histories(records_b, build_cfg)

    tuned_level = None
    curves: dict[str, list[tuple[int, float]]] = {}
    sim_level = cfg.history.spatial_level
    if cfg.tuning:
        tuned_level, curve_a, curve_b = tune_spatial_level(
            hist_a_full, hist_b_full, cfg.tuning_levels, cfg.similarity,
            cfg.tuning_sample_size, cfg.seed,
        )
        curves["a"] = list(zip(curve_a.levels, curve_a.ratios))
        curves["b"] = list(zip(curve_b.levels, curve_b.ratios))
        sim_level = tuned_level
        write_tuning_csv(os.path.join(cfg.out_dir, "tuning_curve.csv"), curves)

    hist_a = {e: h.coarsen(sim_level) for e, h in hist_a_full.items()}
    hist_b = {e: h.coarsen(sim_level) for e, h in hist_b_full.items()}
    stats_a = dataset_stats(hist_a)
    stats_b = dataset_stats(hist_b)

    plan = None
    if cfg.lsh is not None:
        total_windows = max(
            1,
            total_window_count(hist_a_full.values()),
            total_window_count(hist_b_full.values()),
        )
        s_len = signature_length(total_windows, cfg.lsh.step)
        plan = banding_plan(s_len, cfg.lsh.t)
        sigs_a = build_signatures(hist_a_full, cfg.lsh, total_windows)
        sigs_b = build_signatures(hist_b_full, cfg.lsh, total_windows)
        pairs = sorted(candidate_pairs(sigs_a, sigs_b, plan, cfg.lsh.n_buckets))
    else:
        pairs = [(u, v) for u in sorted(hist_a) for v in sorted(hist_b)]

    scored = score_candidates(pairs, hist_a, hist_b, stats_a, stats_b,
                              cfg.similarity, cfg.workers)
    scores = {(u, v): s for u, v, s, _ in scored}
    bin_comparisons = sum(ncmp for _, _, _, ncmp in scored)
    edges = [WeightedEdge(u, v, s) for u, v, s, _ in scored if s > 0.0]

    result = link(edges)
    runtime_ms = (time.perf_counter() - t_start) * 1000.0

    artifacts = RunArtifacts(
        result=result,
        metrics=None,
        out_dir=cfg.out_dir,
        n_entities_a=len(hist_a),
        n_entities_b=len(hist_b),
        candidate_count=len(pairs),
        pair_comparisons=len(pairs),
        bin_comparisons=bin_comparisons,
        tuned_level=tuned_level,
        plan=plan,
        scores=scores,
        runtime_ms=runtime_ms,
    )

    metrics = None
    if cfg.truth_path is not None:
        truth = read_truth_csv(cfg.truth_path)
        metrics = evaluate(
            result, truth, scores, k=cfg.hit_k,
            pair_comparisons=len(pairs), candidate_count=len(pairs),
            bin_comparisons=bin_comparisons, runtime_ms=runtime_ms,
        )
        artifacts.metrics = metrics

    write_links_csv(os.path.join(cfg.out_dir, "links.csv"), result.linked)
    _write_json(os.path.join(cfg.out_dir, "metrics.json"),
                _metrics_payload(metrics, artifacts))
    _write_json(os.path.join(cfg.out_dir, "gmm.json"), _gmm_payload(result))
    write_histogram_csv(os.path.join(cfg.out_dir, "histogram.csv"),
                        [e.weight for e in result.matched])
    if cfg.dump_scores:
        with open(os.path.join(cfg.out_dir, "scores.csv"), "w",
                  encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["u", "v", "score"])
            for (u, v) in sorted(scores):
                writer.writerow([u, v, _fmt(scores[(u, v)])])

    meta = {
        "version": __version__,
        "python": platform.python_version(),
        "config": {
            "path_a": cfg.path_a,
            "path_b": cfg.path_b,
            "window_width": cfg.history.window_width,
            "spatial_level": cfg.history.spatial_level,
            "sim_level_used": sim_level,
            "build_level": build_level,
            "epoch_origin_used": origin,
            "window_alignment": "windows aligned to epoch_origin (min timestamp floored to window width)",
            "alpha": cfg.similarity.alpha,
            "b": cfg.similarity.b,
            "min_records": cfg.min_records,
            "seed": cfg.seed,
            "lsh": None if cfg.lsh is None else {
                "t": cfg.lsh.t,
                "step": cfg.lsh.step,
                "lsh_spatial_level": cfg.lsh.lsh_spatial_level,
                "n_buckets": cfg.lsh.n_buckets,
                "bands": plan.b if plan else None,
                "rows": plan.r if plan else None,
                "t_eff": plan.t_eff if plan else None,
                "hash_seed": SIGNATURE_HASH_SEED.hex(),
            },
            "tuning": cfg.tuning,
            "tuned_level": tuned_level,
            "workers": cfg.workers,
        },
        "counts": {
            "entities_a": len(hist_a),
            "entities_b": len(hist_b),
            "skipped_lines_a": skipped_a,
            "skipped_lines_b": skipped_b,
            "rejected_records_a": rejected_a,
            "rejected_records_b": rejected_b,
            "candidate_pairs": len(pairs),
            "matched": len(result.matched),
            "linked": len(result.linked),
        },
        "runtime_ms": runtime_ms,
    }
    _write_json(os.path.join(cfg.out_dir, "run_meta.json"), meta)
    return artifacts
