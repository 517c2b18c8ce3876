"""Command-line entry points: gen, sample, tune, link, eval, bench."""

from __future__ import annotations

import csv
import json
import os
import sys

import click

from .history import HistoryConfig, build_histories
from .lsh import LshParams
from .pipeline import (Metrics, RunConfig, evaluate, ingest, read_truth_csv,
                       run, write_records_csv, write_truth_csv,
                       write_tuning_csv)
from .sampling import MobilityModel, SampleConfig, gen_synthetic, sample_pair
from .similarity import SimilarityParams
from .tuning import DEFAULT_LEVELS, tune_spatial_level
from .linkage import LinkageResult, WeightedEdge


@click.group()
def main() -> None:
    """Link entities across two mobility record files using only
    spatio-temporal information."""


def _fail(exc: Exception) -> None:
    click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc)}), err=True)
    sys.exit(1)


@main.command()
@click.option("--n-entities", type=int, default=100, show_default=True)
@click.option("--steps", type=int, default=200, show_default=True)
@click.option("--step-minutes", type=int, default=15, show_default=True)
@click.option("--lat-min", type=float, default=37.0, show_default=True)
@click.option("--lat-max", type=float, default=38.5, show_default=True)
@click.option("--lon-min", type=float, default=-123.0, show_default=True)
@click.option("--lon-max", type=float, default=-121.5, show_default=True)
@click.option("--step-km", type=float, default=20.0, show_default=True)
@click.option("--home-prob", type=float, default=0.3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def gen(n_entities, steps, step_minutes, lat_min, lat_max, lon_min, lon_max,
        step_km, home_prob, seed, out):
    """Generate synthetic random-walk records."""
    try:
        model = MobilityModel(lat_min=lat_min, lat_max=lat_max, lon_min=lon_min,
                              lon_max=lon_max, step_km=step_km,
                              home_return_prob=home_prob)
        records = gen_synthetic(n_entities, steps, step_minutes, model, seed)
        write_records_csv(out, records)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(f"wrote {len(records)} records for {n_entities} entities to {out}")


@main.command()
@click.option("--records", "records_path", type=click.Path(exists=True), required=True)
@click.option("--rho", type=float, default=0.5, show_default=True,
              help="Entity intersection ratio.")
@click.option("--inclusion-prob", type=float, default=0.5, show_default=True,
              help="Record inclusion probability per dataset.")
@click.option("--min-records", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-a", type=click.Path(), required=True)
@click.option("--out-b", type=click.Path(), required=True)
@click.option("--truth-out", type=click.Path(), required=True)
def sample(records_path, rho, inclusion_prob, min_records, seed, out_a, out_b, truth_out):
    """Sample two overlapping datasets plus ground truth from one pool."""
    try:
        records, _ = ingest(records_path)
        cfg = SampleConfig(intersection_ratio=rho, inclusion_probability=inclusion_prob,
                           seed=seed)
        a, b, truth = sample_pair(records, cfg, min_records)
        write_records_csv(out_a, a)
        write_records_csv(out_b, b)
        write_truth_csv(truth_out, truth)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(f"A: {len(a)} records, B: {len(b)} records, truth pairs: {len(truth)}")


@main.command()
@click.option("--a", "path_a", type=click.Path(exists=True), required=True)
@click.option("--b", "path_b", type=click.Path(exists=True), required=True)
@click.option("--window-width", type=int, default=900, show_default=True)
@click.option("--alpha", type=float, default=2.0, show_default=True)
@click.option("--b-norm", type=float, default=0.5, show_default=True)
@click.option("--levels", default=",".join(map(str, DEFAULT_LEVELS)), show_default=True)
@click.option("--sample-size", type=int, default=None)
@click.option("--min-records", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Curve CSV path.")
def tune(path_a, path_b, window_width, alpha, b_norm, levels, sample_size,
         min_records, seed, out):
    """Pick the spatial level via the self-similarity elbow test."""
    try:
        level_list = tuple(int(x) for x in levels.split(","))
        records_a, _ = ingest(path_a)
        records_b, _ = ingest(path_b)
        counts_a: dict[str, int] = {}
        for r in records_a:
            counts_a[r.entity] = counts_a.get(r.entity, 0) + 1
        records_a = [r for r in records_a if counts_a[r.entity] > min_records]
        counts_b: dict[str, int] = {}
        for r in records_b:
            counts_b[r.entity] = counts_b.get(r.entity, 0) + 1
        records_b = [r for r in records_b if counts_b[r.entity] > min_records]
        origin = (min(r.t for r in records_a + records_b) // window_width) * window_width
        cfg = HistoryConfig(window_width=window_width, spatial_level=max(level_list),
                            epoch_origin=origin)
        hist_a, _ = build_histories(records_a, cfg)
        hist_b, _ = build_histories(records_b, cfg)
        params = SimilarityParams(alpha=alpha, b=b_norm, window_width=window_width)
        level, curve_a, curve_b = tune_spatial_level(
            hist_a, hist_b, level_list, params, sample_size, seed)
        if out:
            write_tuning_csv(out, {
                "a": list(zip(curve_a.levels, curve_a.ratios)),
                "b": list(zip(curve_b.levels, curve_b.ratios)),
            })
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(f"selected spatial level: {level}")


def _load_json_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


@main.command()
@click.option("--a", "path_a", type=click.Path(), default=None)
@click.option("--b", "path_b", type=click.Path(), default=None)
@click.option("--out-dir", type=click.Path(), default=None)
@click.option("--window-width", type=int, default=None)
@click.option("--spatial-level", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--b-norm", type=float, default=None)
@click.option("--min-records", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--lsh/--no-lsh", "use_lsh", default=None)
@click.option("--lsh-threshold", type=float, default=None)
@click.option("--lsh-step", type=int, default=None)
@click.option("--lsh-level", type=int, default=None)
@click.option("--lsh-buckets", type=int, default=None)
@click.option("--tune/--no-tune", "use_tuning", default=None)
@click.option("--truth", "truth_path", type=click.Path(), default=None)
@click.option("--dump-scores", is_flag=True, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--hit-k", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON file with the same keys; explicit flags win.")
def link_cmd(path_a, path_b, out_dir, window_width, spatial_level, alpha, b_norm,
             min_records, seed, use_lsh, lsh_threshold, lsh_step, lsh_level,
             lsh_buckets, use_tuning, truth_path, dump_scores, workers, hit_k,
             config_path):
    """Run the full linkage pipeline on two record files."""
    try:
        base = _load_json_config(config_path)

        def pick(flag_value, key, default):
            if flag_value is not None:
                return flag_value
            return base.get(key, default)

        path_a = pick(path_a, "a", None)
        path_b = pick(path_b, "b", None)
        if not path_a or not path_b:
            raise ValueError("both input files are required (--a/--b or config)")
        width = pick(window_width, "window_width", 900)
        lsh_params = None
        if pick(use_lsh, "lsh", False):
            lsh_params = LshParams(
                t=pick(lsh_threshold, "lsh_threshold", 0.6),
                step=pick(lsh_step, "lsh_step", 48),
                lsh_spatial_level=pick(lsh_level, "lsh_level", 16),
                n_buckets=pick(lsh_buckets, "lsh_buckets", 4096),
            )
        cfg = RunConfig(
            path_a=path_a,
            path_b=path_b,
            history=HistoryConfig(window_width=width,
                                  spatial_level=pick(spatial_level, "spatial_level", 12)),
            similarity=SimilarityParams(alpha=pick(alpha, "alpha", 2.0),
                                        b=pick(b_norm, "b_norm", 0.5),
                                        window_width=width),
            lsh=lsh_params,
            tuning=pick(use_tuning, "tune", False),
            min_records=pick(min_records, "min_records", 5),
            out_dir=pick(out_dir, "out_dir", "run_out"),
            seed=pick(seed, "seed", 0),
            truth_path=pick(truth_path, "truth", None),
            dump_scores=bool(pick(dump_scores, "dump_scores", False)),
            workers=pick(workers, "workers", 1),
            hit_k=pick(hit_k, "hit_k", 40),
        )
        artifacts = run(cfg)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(f"linked {len(artifacts.result.linked)} of "
               f"{len(artifacts.result.matched)} matched pairs "
               f"({artifacts.candidate_count} candidates); outputs in {cfg.out_dir}")
    if artifacts.metrics is not None:
        click.echo(f"precision={artifacts.metrics.precision:.4f} "
                   f"recall={artifacts.metrics.recall:.4f} f1={artifacts.metrics.f1:.4f}")


main.add_command(link_cmd, name="link")


@main.command(name="eval")
@click.option("--links", "links_path", type=click.Path(exists=True), required=True)
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True)
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None)
@click.option("--k", type=int, default=40, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="metrics JSON path")
def eval_cmd(links_path, truth_path, scores_path, k, out):
    """Score a links.csv against a truth.csv."""
    try:
        linked = []
        with open(links_path, "r", encoding="utf-8", newline="") as fh:
            for idx, row in enumerate(csv.reader(fh)):
                if not row or (idx == 0 and row[0] == "u"):
                    continue
                linked.append(WeightedEdge(row[0], row[1], float(row[2])))
        truth = read_truth_csv(truth_path)
        scores = None
        if scores_path:
            scores = {}
            with open(scores_path, "r", encoding="utf-8", newline="") as fh:
                for idx, row in enumerate(csv.reader(fh)):
                    if not row or (idx == 0 and row[0] == "u"):
                        continue
                    scores[(row[0], row[1])] = float(row[2])
        result = LinkageResult(matched=tuple(linked), threshold=float("-inf"),
                               linked=tuple(linked), gmm=None, thresholded=False)
        metrics = evaluate(result, truth, scores, k=k)
        payload = {
            "precision": metrics.precision,
            "recall": metrics.recall,
            "f1": metrics.f1,
            "hit_precision_at_k": metrics.hit_precision_at_k,
            "tp": metrics.tp,
            "fp": metrics.fp,
            "fn": metrics.fn,
        }
        if out:
            with open(out, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(json.dumps(payload, sort_keys=True))


@main.command()
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--n-entities", type=int, default=120, show_default=True)
@click.option("--steps", type=int, default=240, show_default=True)
@click.option("--step-minutes", type=int, default=15, show_default=True)
@click.option("--rhos", default="0.3,0.5,0.7", show_default=True)
@click.option("--inclusion-probs", default="0.25,0.5,0.75", show_default=True)
@click.option("--lsh-step", type=int, default=24, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def bench(out_dir, n_entities, steps, step_minutes, rhos, inclusion_probs,
          lsh_step, seed, config_path):
    """Sweep sampling parameters with and without LSH; emit a CSV table."""
    try:
        base = _load_json_config(config_path)
        n_entities = base.get("n_entities", n_entities)
        steps = base.get("steps", steps)
        step_minutes = base.get("step_minutes", step_minutes)
        rho_list = [float(x) for x in str(base.get("rhos", rhos)).split(",")]
        p_list = [float(x) for x in str(base.get("inclusion_probs", inclusion_probs)).split(",")]
        lsh_step = base.get("lsh_step", lsh_step)
        seed = base.get("seed", seed)

        os.makedirs(out_dir, exist_ok=True)
        pool_path = os.path.join(out_dir, "pool.csv")
        write_records_csv(pool_path, gen_synthetic(n_entities, steps, step_minutes, seed=seed))

        rows = []
        for rho in rho_list:
            for p in p_list:
                records, _ = ingest(pool_path)
                a, b, truth = sample_pair(
                    records, SampleConfig(intersection_ratio=rho,
                                          inclusion_probability=p, seed=seed))
                case = f"rho{rho}_p{p}"
                pa = os.path.join(out_dir, f"{case}_a.csv")
                pb = os.path.join(out_dir, f"{case}_b.csv")
                pt = os.path.join(out_dir, f"{case}_truth.csv")
                write_records_csv(pa, a)
                write_records_csv(pb, b)
                write_truth_csv(pt, truth)
                for use_lsh in (False, True):
                    cfg = RunConfig(
                        path_a=pa, path_b=pb,
                        lsh=LshParams(step=lsh_step) if use_lsh else None,
                        out_dir=os.path.join(out_dir, f"{case}_{'lsh' if use_lsh else 'bf'}"),
                        seed=seed, truth_path=pt,
                    )
                    art = run(cfg)
                    m: Metrics = art.metrics
                    all_pairs = art.n_entities_a * art.n_entities_b
                    rows.append({
                        "rho": rho, "p": p, "lsh": int(use_lsh),
                        "precision": round(m.precision, 6),
                        "recall": round(m.recall, 6),
                        "f1": round(m.f1, 6),
                        "hit_precision_at_40": round(m.hit_precision_at_k or 0.0, 6),
                        "candidate_pairs": art.candidate_count,
                        "all_pairs": all_pairs,
                        "candidate_ratio": round(art.candidate_count / all_pairs, 6) if all_pairs else 0.0,
                        "bin_comparisons": art.bin_comparisons,
                        "runtime_ms": round(art.runtime_ms, 1),
                    })
        table = os.path.join(out_dir, "bench_results.csv")
        with open(table, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(f"wrote {len(rows)} sweep rows to {table}")


if __name__ == "__main__":
    main()
