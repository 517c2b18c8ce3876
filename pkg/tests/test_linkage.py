import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from moblink.linkage import (DegenerateScoresError, GmmFit, WeightedEdge,
                             expected_prf, fit_gmm2, greedy_match, link,
                             score_histogram, stop_threshold)


def greedy_oracle(edges):
    """Quadratic re-scan oracle: pick the best remaining edge each step."""
    remaining = list(edges)
    used_u, used_v = set(), set()
    out = []
    while True:
        best = None
        for e in remaining:
            if e.u in used_u or e.v in used_v:
                continue
            key = (-e.weight, e.u, e.v)
            if best is None or key < best[0]:
                best = (key, e)
        if best is None:
            return out
        e = best[1]
        used_u.add(e.u)
        used_v.add(e.v)
        out.append(e)


class TestGreedyMatch:
    def test_single_edge_selected(self):
        e = WeightedEdge("a", "x", 1.0)
        assert greedy_match([e]) == [e]

    def test_shared_endpoint_keeps_heavier(self):
        e5 = WeightedEdge("a", "x", 5.0)
        e3 = WeightedEdge("a", "y", 3.0)
        assert greedy_match([e3, e5]) == [e5]

    def test_matches_rescan_oracle(self):
        rng = random.Random(4)
        for _ in range(200):
            edges = [
                WeightedEdge(f"u{rng.randrange(6)}", f"v{rng.randrange(6)}",
                             rng.choice([1.0, 2.0, 3.0, rng.uniform(0.1, 9.0)]))
                for _ in range(rng.randint(1, 20))
            ]
            # dedupe (u, v) pairs keeping first occurrence, as duplicates
            # with equal weight are order-ambiguous
            seen = {}
            for e in edges:
                seen.setdefault((e.u, e.v, e.weight), e)
            edges = list(seen.values())
            assert greedy_match(edges) == greedy_oracle(edges)

    def test_no_entity_matched_twice(self):
        rng = random.Random(8)
        edges = [
            WeightedEdge(f"u{rng.randrange(10)}", f"v{rng.randrange(10)}",
                         rng.uniform(0.1, 5.0))
            for _ in range(60)
        ]
        got = greedy_match(edges)
        assert len({e.u for e in got}) == len(got)
        assert len({e.v for e in got}) == len(got)

    def test_scale_equivariance(self):
        rng = random.Random(15)
        edges = [
            WeightedEdge(f"u{rng.randrange(8)}", f"v{rng.randrange(8)}",
                         rng.uniform(0.1, 5.0))
            for _ in range(40)
        ]
        base = [(e.u, e.v) for e in greedy_match(edges)]
        for c in (2.0, 0.5, 4.0):
            scaled = [WeightedEdge(e.u, e.v, e.weight * c) for e in edges]
            assert [(e.u, e.v) for e in greedy_match(scaled)] == base

    def test_positive_weight_enforced(self):
        with pytest.raises(ValueError):
            WeightedEdge("a", "b", 0.0)
        with pytest.raises(ValueError):
            WeightedEdge("a", "b", -1.0)


def sample_mixture(rng, n, c, mu, sigma):
    out = []
    labels = []
    for _ in range(n):
        k = 1 if rng.random() < c[1] else 0
        out.append(rng.gauss(mu[k], sigma[k]))
        labels.append(k)
    return out, labels


class TestGmmFit:
    def test_recovers_seeded_mixture(self):
        rng = random.Random(2024)
        samples, _ = sample_mixture(rng, 2000, (0.5, 0.5), (1.0, 5.0), (0.2, 0.5))
        fit = fit_gmm2(samples)
        assert fit.means[0] == pytest.approx(1.0, rel=0.10)
        assert fit.means[1] == pytest.approx(5.0, rel=0.10)
        assert abs(fit.weights[0] - 0.5) < 0.1
        assert abs(fit.weights[1] - 0.5) < 0.1
        assert fit.weights[0] + fit.weights[1] == pytest.approx(1.0)
        assert fit.means[0] <= fit.means[1]

    def test_near_constant_engages_variance_floor(self):
        rng = random.Random(3)
        samples = [7.0 + rng.uniform(-1e-6, 1e-6) for _ in range(100)]
        fit = fit_gmm2(samples)
        mean = sum(samples) / len(samples)
        assert fit.means[0] == pytest.approx(mean, abs=1e-5)
        assert fit.means[1] == pytest.approx(mean, abs=1e-5)
        assert fit.sigmas[0] > 0 and fit.sigmas[1] > 0

    def test_point_clusters_recovered_by_responsibilities(self):
        lo = [0.9, 1.0, 1.1, 0.95, 1.05, 1.02]
        hi = [9.9, 10.0, 10.1, 9.95, 10.05, 10.02]
        fit = fit_gmm2(lo + hi)

        def posterior_hi(x):
            # direct density ratio from the fitted parameters
            c1, c2 = fit.weights
            p1 = c1 / fit.sigmas[0] * math.exp(-0.5 * ((x - fit.means[0]) / fit.sigmas[0]) ** 2)
            p2 = c2 / fit.sigmas[1] * math.exp(-0.5 * ((x - fit.means[1]) / fit.sigmas[1]) ** 2)
            return p2 / (p1 + p2)

        assert all(posterior_hi(x) < 0.01 for x in lo)
        assert all(posterior_hi(x) > 0.99 for x in hi)

    def test_too_few_samples(self):
        with pytest.raises(DegenerateScoresError):
            fit_gmm2([1.0, 2.0, 3.0])

    def test_zero_variance(self):
        with pytest.raises(DegenerateScoresError):
            fit_gmm2([2.0] * 50)

    def test_deterministic(self):
        rng = random.Random(5)
        samples, _ = sample_mixture(rng, 500, (0.4, 0.6), (0.0, 3.0), (0.5, 0.5))
        assert fit_gmm2(samples) == fit_gmm2(samples)


SYMMETRIC_FIT = GmmFit(weights=(0.5, 0.5), means=(0.0, 2.0), sigmas=(1.0, 1.0),
                       log_likelihood=0.0, iterations=1, converged=True)


class TestExpectedPrf:
    def test_no_filter_limit(self):
        p, r, _ = expected_prf(SYMMETRIC_FIT, -1e9)
        assert r == pytest.approx(0.5, abs=1e-12)
        assert p == pytest.approx(0.5, abs=1e-12)

    def test_everything_filtered_limit(self):
        p, r, f1 = expected_prf(SYMMETRIC_FIT, 1e9)
        assert r == pytest.approx(0.0, abs=1e-12)
        assert f1 == 0.0
        assert p == 1.0  # defined as 1 on an empty selection

    def test_symmetric_fit_midpoint(self):
        # against normal CDF values: R = .5(1 - Phi(-1)), FP = .5(1 - Phi(1))
        phi = lambda z: 0.5 * (1 + math.erf(z / math.sqrt(2)))
        p, r, f1 = expected_prf(SYMMETRIC_FIT, 1.0)
        r_expect = 0.5 * (1 - phi(-1.0))
        fp_expect = 0.5 * (1 - phi(1.0))
        p_expect = r_expect / (r_expect + fp_expect)
        assert r == pytest.approx(r_expect, abs=1e-12)
        assert r == pytest.approx(0.4207, abs=5e-5)
        assert fp_expect == pytest.approx(0.0793, abs=5e-5)
        assert p == pytest.approx(p_expect, abs=1e-12)
        assert p == pytest.approx(0.8413, abs=5e-5)
        assert f1 == pytest.approx(2 * p_expect * r_expect / (p_expect + r_expect), abs=1e-12)

    @given(st.floats(min_value=-10, max_value=10))
    def test_bounds(self, s):
        p, r, f1 = expected_prf(SYMMETRIC_FIT, s)
        assert 0.0 <= p <= 1.0
        assert 0.0 <= r <= 1.0
        assert 0.0 <= f1 <= 1.0

    def test_recall_non_increasing(self):
        values = [expected_prf(SYMMETRIC_FIT, s)[1] for s in np.linspace(-5, 7, 200)]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_matches_monte_carlo(self):
        # classify 10^6 mixture samples by true component, threshold, count
        rng = np.random.default_rng(7)
        n = 1_000_000
        labels = rng.random(n) < 0.5
        x = np.where(labels, rng.normal(2.0, 1.0, n), rng.normal(0.0, 1.0, n))
        for s in (0.3, 1.0, 1.7):
            sel = x >= s
            tp = np.count_nonzero(sel & labels)
            fp = np.count_nonzero(sel & ~labels)
            emp_r = tp / n
            emp_p = tp / (tp + fp)
            p, r, _ = expected_prf(SYMMETRIC_FIT, s)
            assert abs(r - emp_r) < 0.01
            assert abs(p - emp_p) < 0.01


class TestStopThreshold:
    def test_lies_between_separated_means(self):
        fit = GmmFit(weights=(0.5, 0.5), means=(0.0, 10.0), sigmas=(1.0, 1.0),
                     log_likelihood=0.0, iterations=1, converged=True)
        s = stop_threshold(fit)
        assert 0.0 < s < 10.0

    def test_single_component_keeps_everything(self):
        fit = GmmFit(weights=(0.0, 1.0), means=(2.0, 2.0), sigmas=(1.0, 1.0),
                     log_likelihood=0.0, iterations=1, converged=True)
        s = stop_threshold(fit)
        # F1 is non-increasing in s, so the grid minimum wins
        assert s == pytest.approx(2.0 - 4.0, abs=1e-9)

    def test_beats_random_probes(self):
        rng = random.Random(2024)
        samples, _ = sample_mixture(rng, 2000, (0.5, 0.5), (1.0, 5.0), (0.2, 0.5))
        fit = fit_gmm2(samples)
        s_star = stop_threshold(fit)
        _, _, f1_star = expected_prf(fit, s_star)
        probe_rng = random.Random(1)
        lo = fit.means[0] - 4 * fit.sigmas[0]
        hi = fit.means[1] + 4 * fit.sigmas[1]
        for _ in range(1000):
            s = probe_rng.uniform(lo, hi)
            assert f1_star >= expected_prf(fit, s)[2] - 1e-12


class TestLink:
    def edges_from_mixture(self, seed=0, n=120):
        rng = random.Random(seed)
        edges = []
        for i in range(n):
            lowish = rng.random() < 0.5
            w = abs(rng.gauss(1.0, 0.2)) if lowish else abs(rng.gauss(5.0, 0.5))
            edges.append(WeightedEdge(f"u{i}", f"v{i}", w + 1e-9))
        return edges

    def test_composition_and_validity(self):
        result = link(self.edges_from_mixture())
        assert set(result.linked) <= set(result.matched)
        assert result.thresholded
        assert len({e.u for e in result.matched}) == len(result.matched)
        # the threshold separates the two synthetic clusters
        assert all(e.weight >= result.threshold for e in result.linked)

    def test_monotone_filter(self):
        result = link(self.edges_from_mixture(seed=9))
        weights = [e.weight for e in result.matched]
        below = [s for s in weights if s < result.threshold]
        linked_at = {e for e in result.matched if e.weight >= result.threshold}
        assert set(result.linked) == linked_at
        for bump in (0.1, 1.0, 3.0):
            higher = {e for e in result.matched if e.weight >= result.threshold + bump}
            assert higher <= linked_at

    def test_degenerate_flagged_unfiltered(self):
        edges = [WeightedEdge("a", "x", 1.0), WeightedEdge("b", "y", 1.0)]
        result = link(edges)
        assert not result.thresholded
        assert result.gmm is None
        assert result.linked == result.matched
        assert result.threshold == -math.inf

    def test_empty_edges(self):
        result = link([])
        assert result.matched == ()
        assert result.linked == ()
        assert not result.thresholded


class TestScoreHistogram:
    def test_bins_cover_all_values(self):
        rng = random.Random(12)
        values = [rng.uniform(0, 10) for _ in range(500)]
        rows = score_histogram(values, n_bins=20)
        assert len(rows) == 20
        assert sum(count for _, _, count in rows) == len(values)
        assert rows[0][0] == pytest.approx(min(values))
        assert rows[-1][1] == pytest.approx(max(values))

    def test_empty(self):
        assert score_histogram([]) == []
