"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The end-to-end cases use
fixed seeds and the default parameters (15-minute windows, spatial level
12, alpha 2 km/min, b 0.5, min records 5).
"""

import math
import random
import time

import numpy as np
import pytest

from moblink.geo import CellId, LatLon, cell_at, cell_distance_km
from moblink.history import HistoryConfig, build_histories
from moblink.linkage import expected_prf, fit_gmm2, stop_threshold
from moblink.lsh import (LshParams, Signature, band_count, banding_plan,
                         candidate_pairs, lambert_w)
from moblink.pipeline import RunConfig, run, write_records_csv, write_truth_csv
from moblink.sampling import SampleConfig, gen_synthetic, sample_pair
from moblink.similarity import (TimeLocationBin, mfn_pairs, mnn_pairs,
                                proximity)

LEVEL = 12


def report(n, message):
    print(f"\nACCEPTANCE {n} PASS: {message}")


# --- criterion 1: proximity law ------------------------------------------

def test_c01_proximity_law():
    t0 = time.time()
    row = [cell_at(LatLon(0.0, i * 0.2), LEVEL) for i in range(60)]
    same = TimeLocationBin(3, row[0])
    assert proximity(same, same, 30.0) == 1.0

    # zero exactly at the runaway distance
    e, i = TimeLocationBin(0, row[0]), TimeLocationBin(0, row[7])
    d = cell_distance_km(row[0], row[7])
    assert d > 0.0
    assert proximity(e, i, d) == pytest.approx(0.0, abs=1e-12)

    # negative strictly beyond it, zero across windows
    assert proximity(e, i, d * 0.999) < 0.0
    assert proximity(TimeLocationBin(0, row[0]), TimeLocationBin(1, row[0]), 30.0) == 0.0

    # monotone non-increasing in distance
    prev = math.inf
    for c in row[1:]:
        p = proximity(TimeLocationBin(0, row[0]), TimeLocationBin(0, c), 30.0)
        assert p <= prev + 1e-12
        prev = p

    # sign matches the runaway comparison everywhere on the row
    for c in row[1:]:
        d = cell_distance_km(row[0], c)
        p = proximity(TimeLocationBin(0, row[0]), TimeLocationBin(0, c), 30.0)
        if d < 30.0:
            assert p > 0.0
        elif d > 30.0:
            assert p < 0.0

    elapsed = time.time() - t0
    assert elapsed < 1.0
    report(1, f"proximity law (1 at d=0, 0 at d=R, alibi negative, "
              f"window-gated, monotone) in {elapsed:.2f}s")


# --- criterion 2: pairing oracles -----------------------------------------

def rescan_pairing_oracle(cells_u, cells_v, w, furthest):
    remaining_u, remaining_v = list(cells_u), list(cells_v)
    out = []
    while remaining_u and remaining_v:
        best = None
        for cu in remaining_u:
            for cv in remaining_v:
                d = cell_distance_km(cu, cv)
                key = (-d, cu, cv) if furthest else (d, cu, cv)
                if best is None or key < best[0]:
                    best = (key, cu, cv)
        _, cu, cv = best
        remaining_u.remove(cu)
        remaining_v.remove(cv)
        out.append((TimeLocationBin(w, cu), TimeLocationBin(w, cv)))
    return out


def test_c02_pairing_matches_bruteforce():
    t0 = time.time()
    rng = random.Random(20240)
    grid = [cell_at(LatLon(i * 0.25, j * 0.25), LEVEL) for i in range(10) for j in range(10)]
    for _ in range(1000):
        cu = {c: 1 for c in rng.sample(grid, rng.randint(1, 8))}
        cv = {c: 1 for c in rng.sample(grid, rng.randint(1, 8))}
        assert mnn_pairs(cu, cv, 1) == rescan_pairing_oracle(cu, cv, 1, False)
        assert mfn_pairs(cu, cv, 1) == rescan_pairing_oracle(cu, cv, 1, True)
    elapsed = time.time() - t0
    assert elapsed < 5.0
    report(2, f"1000 random MNN/MFN instances equal the re-scan oracle in {elapsed:.2f}s")


# --- criterion 3: segment tree oracle --------------------------------------

def test_c03_range_counts_match_leaf_sums():
    t0 = time.time()
    rng = random.Random(30303)
    records = gen_synthetic(3, 700, 15, seed=30303)
    histories, _ = build_histories(records, HistoryConfig(900, LEVEL, 0))
    hists = list(histories.values())
    tops = {h.entity: h.max_window + 2 for h in hists}
    for k in range(10_000):
        h = hists[k % len(hists)]
        lo = rng.randrange(0, tops[h.entity])
        hi = rng.randrange(lo + 1, tops[h.entity] + 2)
        brute = {}
        for w, cells in h.windows.items():
            if lo <= w < hi:
                for cell, n in cells.items():
                    brute[cell] = brute.get(cell, 0) + n
        assert h.range_counts(lo, hi) == brute
    elapsed = time.time() - t0
    assert elapsed < 5.0
    report(3, f"10,000 random ranges equal leaf-sum brute force in {elapsed:.2f}s")


# --- criterion 4: GMM recovery ---------------------------------------------

def test_c04_gmm_recovery_and_threshold_quality():
    t0 = time.time()
    rng = random.Random(2024)
    samples, labels = [], []
    for _ in range(2000):
        hi = rng.random() < 0.5
        samples.append(rng.gauss(5.0, 0.5) if hi else rng.gauss(1.0, 0.2))
        labels.append(hi)
    fit = fit_gmm2(samples)
    assert fit.means[0] == pytest.approx(1.0, rel=0.10)
    assert fit.means[1] == pytest.approx(5.0, rel=0.10)
    assert abs(fit.weights[0] - 0.5) < 0.1
    assert abs(fit.weights[1] - 0.5) < 0.1

    # expected F1 at the detected threshold vs the empirical best over the
    # same grid, using the known labels
    s_star = stop_threshold(fit)
    _, _, f1_expected = expected_prf(fit, s_star)
    x = np.asarray(samples)
    y = np.asarray(labels)
    grid = np.linspace(fit.means[0] - 4 * fit.sigmas[0],
                       fit.means[1] + 4 * fit.sigmas[1], 10_001)
    true_sorted = np.sort(x[y])
    false_sorted = np.sort(x[~y])
    n = x.size
    tp = true_sorted.size - np.searchsorted(true_sorted, grid, side="left")
    fp = false_sorted.size - np.searchsorted(false_sorted, grid, side="left")
    recall = tp / n
    with np.errstate(invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 1.0)
        f1 = np.where(precision + recall > 0,
                      2 * precision * recall / np.maximum(precision + recall, 1e-300), 0.0)
    f1_best_empirical = float(f1.max())
    assert abs(f1_expected - f1_best_empirical) <= 0.05

    elapsed = time.time() - t0
    assert elapsed < 10.0
    report(4, f"means=({fit.means[0]:.3f},{fit.means[1]:.3f}) "
              f"weights=({fit.weights[0]:.3f},{fit.weights[1]:.3f}); "
              f"F1(s*)={f1_expected:.4f} vs best empirical {f1_best_empirical:.4f} "
              f"in {elapsed:.2f}s")


# --- criterion 5: LSH S-curve ----------------------------------------------

def test_c05_banding_s_curve():
    t0 = time.time()
    s_len = 400
    t = 0.6
    plan = banding_plan(s_len, t)
    n_buckets = 2 ** 20  # collision noise ~ b/n_buckets < 0.005
    rng = random.Random(50505)
    base = tuple(CellId(LEVEL, rng.getrandbits(24)) for _ in range(s_len))
    alt = tuple(CellId(LEVEL, (c.path + 1_000_000) & 0xFFFFFF) for c in base)
    sig_u = Signature("u", base)
    trials = 10_000
    results = {}
    for t_prime in (0.2, 0.5, 0.6, 0.9):
        k = round(t_prime * s_len)
        hits = 0
        for _ in range(trials):
            match_at = set(rng.sample(range(s_len), k))
            entries = tuple(base[i] if i in match_at else alt[i] for i in range(s_len))
            got = candidate_pairs([sig_u], [Signature("v", entries)], plan, n_buckets)
            hits += bool(got)
        empirical = hits / trials
        formula = 1.0 - (1.0 - t_prime ** plan.r) ** plan.b
        assert abs(empirical - formula) <= 0.03, (t_prime, empirical, formula)
        results[t_prime] = (empirical, formula)
    elapsed = time.time() - t0
    assert elapsed < 30.0
    pretty = ", ".join(f"t'={tp}: {e:.3f}/{f:.3f}" for tp, (e, f) in results.items())
    report(5, f"b={plan.b} r={plan.r}; empirical/formula {pretty} in {elapsed:.1f}s")


# --- criterion 6: Lambert W -------------------------------------------------

def test_c06_lambert_w_and_worked_banding():
    t0 = time.time()
    for i in range(500):
        x = 10.0 ** (-3 + 6 * i / 499)
        w = lambert_w(x)
        assert abs(w * math.exp(w) - x) <= 1e-9
    t_example = (1.0 / 2.0) ** 0.5
    assert band_count(4, t_example) == 2
    plan = banding_plan(4, t_example)
    assert plan.b == 2 and plan.r == 2
    assert (1.0 / plan.b) ** (plan.b / 4.0) == pytest.approx(t_example, abs=1e-12)
    elapsed = time.time() - t0
    assert elapsed < 1.0
    report(6, f"W inversion <= 1e-9 over [1e-3, 1e3]; s=4 at t~0.707 gives "
              f"b=2, r=2 in {elapsed:.2f}s")


# --- criteria 7-10: end-to-end synthetic benchmarks -------------------------

@pytest.fixture(scope="module")
def pool200():
    return gen_synthetic(200, 1000, 15, seed=1234)


def write_pair(tmp_path, records, rho, p, seed, tag):
    a, b, truth = sample_pair(records, SampleConfig(rho, p, seed=seed))
    pa = str(tmp_path / f"{tag}_a.csv")
    pb = str(tmp_path / f"{tag}_b.csv")
    pt = str(tmp_path / f"{tag}_truth.csv")
    write_records_csv(pa, a)
    write_records_csv(pb, b)
    write_truth_csv(pt, truth)
    return pa, pb, pt, truth


def test_c07_end_to_end_f1(pool200, tmp_path):
    t0 = time.time()
    pa, pb, pt, _ = write_pair(tmp_path, pool200, 0.5, 0.5, 1234, "c7")
    art = run(RunConfig(path_a=pa, path_b=pb, out_dir=str(tmp_path / "c7_out"),
                        truth_path=pt, seed=1234))
    elapsed = time.time() - t0
    assert art.metrics.f1 >= 0.90
    assert elapsed < 120.0
    report(7, f"200 entities x 1000 steps, rho=0.5 p=0.5: "
              f"F1={art.metrics.f1:.4f} (P={art.metrics.precision:.4f}, "
              f"R={art.metrics.recall:.4f}) in {elapsed:.0f}s")


def test_c08_lsh_speedup(tmp_path):
    t0 = time.time()
    records = gen_synthetic(1000, 480, 15, seed=99)
    pa, pb, pt, _ = write_pair(tmp_path, records, 0.5, 0.5, 99, "c8")

    art_bf = run(RunConfig(path_a=pa, path_b=pb, out_dir=str(tmp_path / "c8_bf"),
                           truth_path=pt, seed=99))
    art_lsh = run(RunConfig(path_a=pa, path_b=pb, out_dir=str(tmp_path / "c8_lsh"),
                            truth_path=pt, seed=99,
                            lsh=LshParams(t=0.6, step=24, lsh_spatial_level=16,
                                          n_buckets=4096)))
    all_pairs = art_bf.candidate_count
    ratio = art_lsh.candidate_count / all_pairs
    rel_f1 = art_lsh.metrics.f1 / art_bf.metrics.f1
    elapsed = time.time() - t0
    assert ratio <= 0.10
    assert rel_f1 >= 0.90
    assert elapsed < 600.0
    report(8, f"1000 entities: candidates {art_lsh.candidate_count}/{all_pairs} "
              f"(ratio {ratio:.4f}), relative F1 {rel_f1:.4f}, "
              f"bin-comparison speedup {art_bf.bin_comparisons / max(1, art_lsh.bin_comparisons):.0f}x "
              f"in {elapsed:.0f}s")


def test_c09_threshold_beats_unfiltered(pool200, tmp_path):
    pa, pb, pt, truth = write_pair(tmp_path, pool200, 0.3, 0.5, 1234, "c9")
    art = run(RunConfig(path_a=pa, path_b=pb, out_dir=str(tmp_path / "c9_out"),
                        truth_path=pt, seed=1234))
    truth_pairs = set(truth.items())
    matched = {(e.u, e.v) for e in art.result.matched}
    precision_unfiltered = len(matched & truth_pairs) / len(matched)
    gain = art.metrics.precision - precision_unfiltered
    assert gain >= 0.15
    report(9, f"rho=0.3: precision {art.metrics.precision:.4f} thresholded vs "
              f"{precision_unfiltered:.4f} unfiltered (gain {gain:+.4f})")


def test_c10_byte_identical_reruns(pool200, tmp_path):
    pa, pb, pt, _ = write_pair(tmp_path, pool200, 0.5, 0.5, 1234, "c10")
    outs = []
    for tag in ("r1", "r2"):
        out_dir = tmp_path / f"c10_{tag}"
        run(RunConfig(path_a=pa, path_b=pb, out_dir=str(out_dir),
                      truth_path=pt, seed=1234))
        outs.append(out_dir)
    links_equal = (outs[0] / "links.csv").read_bytes() == (outs[1] / "links.csv").read_bytes()
    metrics_equal = (outs[0] / "metrics.json").read_bytes() == (outs[1] / "metrics.json").read_bytes()
    assert links_equal and metrics_equal
    report(10, "two identical runs produced byte-identical links.csv and metrics.json")
