"""Greedy maximum-weight bipartite matching and GMM-based stop thresholding.

Matched edge weights are modeled as a two-component univariate Gaussian
mixture (low component = false links, high component = true links); the
stop threshold is the score maximizing the expected F1 under that model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

VARIANCE_FLOOR_RATIO = 1e-6
THRESHOLD_GRID_POINTS = 10_001


class DegenerateScoresError(ValueError):
    """Too few or zero-variance scores; mixture fitting is meaningless."""


@dataclass(frozen=True)
class WeightedEdge:
    """A cross-dataset entity pair with a positive similarity score."""

    u: str
    v: str
    weight: float

    def __post_init__(self) -> None:
        if not self.weight > 0:
            raise ValueError(f"edge weight must be > 0, got {self.weight}")


@dataclass(frozen=True)
class GmmFit:
    """Two univariate components ordered so means[0] <= means[1]."""

    weights: tuple[float, float]
    means: tuple[float, float]
    sigmas: tuple[float, float]
    log_likelihood: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class LinkageResult:
    matched: tuple[WeightedEdge, ...]
    threshold: float
    linked: tuple[WeightedEdge, ...]
    gmm: GmmFit | None
    thresholded: bool  # False when the fit was degenerate and no filter applied


def greedy_match(edges: Iterable[WeightedEdge]) -> list[WeightedEdge]:
    """Select edges in descending weight, skipping used endpoints.

    Ties broken by (u, v) so the result is deterministic and depends only
    on the weight ordering.
    """
    used_u: set[str] = set()
    used_v: set[str] = set()
    out: list[WeightedEdge] = []
    for e in sorted(edges, key=lambda e: (-e.weight, e.u, e.v)):
        if e.u in used_u or e.v in used_v:
            continue
        used_u.add(e.u)
        used_v.add(e.v)
        out.append(e)
    return out


def fit_gmm2(weights: Sequence[float], max_iter: int = 200, tol: float = 1e-8) -> GmmFit:
    """EM fit of a 2-component univariate Gaussian mixture.

    Init: sort samples, split at the median, take each half's moments,
    component weights 0.5/0.5. Variances floored at 1e-6 x sample variance.
    Stops when the relative log-likelihood change drops below `tol`.
    """
    x = np.asarray(list(weights), dtype=float)
    n = x.size
    if n < 4:
        raise DegenerateScoresError(f"need >= 4 samples, got {n}")
    var_total = float(np.var(x))
    if var_total <= 0.0:
        raise DegenerateScoresError("scores have zero variance")
    var_floor = VARIANCE_FLOOR_RATIO * var_total

    xs = np.sort(x)
    half = n // 2
    mu = np.array([xs[:half].mean(), xs[half:].mean()])
    var = np.maximum(np.array([xs[:half].var(), xs[half:].var()]), var_floor)
    c = np.array([0.5, 0.5])

    prev_ll = -math.inf
    ll = prev_ll
    converged = False
    iterations = 0
    col = x[:, None]
    for iterations in range(1, max_iter + 1):
        log_pdf = (-0.5 * (col - mu) ** 2 / var
                   - 0.5 * np.log(2.0 * math.pi * var)
                   + np.log(c))
        m = np.logaddexp(log_pdf[:, 0], log_pdf[:, 1])
        ll = float(m.sum())
        resp = np.exp(log_pdf - m[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        c = nk / n
        mu = (resp * col).sum(axis=0) / nk
        var = np.maximum((resp * (col - mu) ** 2).sum(axis=0) / nk, var_floor)
        if math.isfinite(prev_ll) and abs(ll - prev_ll) <= tol * max(1.0, abs(prev_ll)):
            converged = True
            break
        prev_ll = ll

    if mu[0] > mu[1]:
        mu, var, c = mu[::-1], var[::-1], c[::-1]
    sig = np.sqrt(var)
    return GmmFit(
        weights=(float(c[0]), float(c[1])),
        means=(float(mu[0]), float(mu[1])),
        sigmas=(float(sig[0]), float(sig[1])),
        log_likelihood=ll,
        iterations=iterations,
        converged=converged,
    )


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def expected_prf(fit: GmmFit, s: float) -> tuple[float, float, float]:
    """Model-expected (precision, recall, F1) of thresholding at `s`.

    Recall = high-component mass above s; precision = that mass over all
    mass above s. Precision defined as 1 when nothing lies above s.
    """
    c1, c2 = fit.weights
    mu1, mu2 = fit.means
    sg1, sg2 = fit.sigmas
    recall = c2 * (1.0 - _norm_cdf((s - mu2) / sg2))
    false_pos = c1 * (1.0 - _norm_cdf((s - mu1) / sg1))
    denom = recall + false_pos
    precision = 1.0 if denom == 0.0 else recall / denom
    f1 = 0.0 if precision + recall == 0.0 else 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def stop_threshold(fit: GmmFit) -> float:
    """Score maximizing expected F1 over a dense grid spanning the fit.

    Grid covers [mu1 - 4*sigma1, mu2 + 4*sigma2] with 10,001 points; ties
    resolve to the smaller score.
    """
    lo = fit.means[0] - 4.0 * fit.sigmas[0]
    hi = fit.means[1] + 4.0 * fit.sigmas[1]
    if hi <= lo:
        hi = lo + 1.0
    grid = np.linspace(lo, hi, THRESHOLD_GRID_POINTS)
    best_s = lo
    best_f1 = -1.0
    for s in grid:
        _, _, f1 = expected_prf(fit, float(s))
        if f1 > best_f1:
            best_f1 = f1
            best_s = float(s)
    return best_s


def link(edges: Iterable[WeightedEdge]) -> LinkageResult:
    """Match greedily, fit the mixture to matched weights, filter at the
    detected threshold. A degenerate fit yields an unfiltered, flagged
    result."""
    matched = tuple(greedy_match(edges))
    try:
        fit = fit_gmm2([e.weight for e in matched])
    except DegenerateScoresError:
        return LinkageResult(matched=matched, threshold=-math.inf,
                             linked=matched, gmm=None, thresholded=False)
    s_star = stop_threshold(fit)
    linked = tuple(e for e in matched if e.weight >= s_star)
    return LinkageResult(matched=matched, threshold=s_star,
                         linked=linked, gmm=fit, thresholded=True)


def score_histogram(values: Sequence[float], n_bins: int = 50) -> list[tuple[float, float, int]]:
    """(bin_lo, bin_hi, count) rows for dumping score distributions."""
    if len(values) == 0:
        return []
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=n_bins)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]
