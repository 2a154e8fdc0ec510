"""Nonparametric and parametric tests backing the learning metrics.

The one-tailed Mann-Whitney test uses the exact permutation distribution of U
whenever both samples have at most ``EXACT_MAX_N`` elements and the pooled
data is tie-free; otherwise it falls back to a normal approximation with a
tie-corrected variance and a 0.5 continuity correction. Spearman correlation
is the Pearson correlation of average-tie ranks.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as _scipy_stats

EXACT_MAX_N = 12


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined (constant input or length mismatch)."""


class DegenerateSamplesError(ValueError):
    """A test's sampling distribution is degenerate for these inputs."""


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_value: float
    method: str  # "exact" | "normal-approximation"
    direction: str  # one-tailed alternative, e.g. "first-greater"


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    p_value: float
    df: float


def average_ranks(values: np.ndarray) -> np.ndarray:
    """Fractional ranks (1-based); tied values share the mean of their ranks."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def exact_u_counts(n: int, m: int) -> np.ndarray:
    """Counts of each U value over all C(n+m, m) orderings (tie-free null).

    Entry ``u`` is the number of rank assignments of the second sample (size
    ``m``) giving U == u against the first sample (size ``n``); counts sum to
    C(n+m, m).
    """
    max_u = n * m
    # W(i, j)[u] counts interleavings of i "a" and j "b" items reaching U == u
    # when items are placed in increasing rank order: a "b" placed after i
    # "a" items contributes i, so W(i,j)[u] = W(i-1,j)[u] + W(i,j-1)[u-i].
    prev = [np.zeros(max_u + 1, dtype=np.int64) for _ in range(m + 1)]
    for j in range(m + 1):
        prev[j][0] = 1  # i == 0: every b sits below all a's, contributing 0
    for i in range(1, n + 1):
        cur = [np.zeros(max_u + 1, dtype=np.int64) for _ in range(m + 1)]
        cur[0][0] = 1
        for j in range(1, m + 1):
            cur[j][:] = prev[j]
            cur[j][i:] += cur[j - 1][: max_u + 1 - i]
        prev = cur
    return prev[m]


def _u_statistic(sample_hi: np.ndarray, sample_lo: np.ndarray) -> float:
    """U for the first sample: #(hi > lo) + 0.5 * #(ties), via fractional ranks."""
    m, n = sample_hi.size, sample_lo.size
    pooled = np.concatenate([sample_hi, sample_lo])
    ranks = average_ranks(pooled)
    r_hi = float(ranks[:m].sum())
    return r_hi - m * (m + 1) / 2.0


def mann_whitney_one_tailed(
    sample_hi: Sequence[float], sample_lo: Sequence[float]
) -> UTestResult:
    """One-tailed Mann-Whitney U test of H1: ``sample_hi`` stochastically
    greater than ``sample_lo``.

    Degenerate inputs (zero variance after tie correction) yield p == 1.0
    rather than an error so callers can treat them as non-significant.
    """
    hi = np.asarray(list(sample_hi), dtype=np.float64)
    lo = np.asarray(list(sample_lo), dtype=np.float64)
    if hi.size == 0 or lo.size == 0:
        raise ValueError("both samples must be non-empty")
    m, n = hi.size, lo.size
    pooled = np.concatenate([hi, lo])
    has_ties = np.unique(pooled).size < pooled.size
    u = _u_statistic(hi, lo)

    if not has_ties and m <= EXACT_MAX_N and n <= EXACT_MAX_N:
        counts = exact_u_counts(n, m)
        total = int(counts.sum())
        tail = int(counts[int(round(u)) :].sum())
        return UTestResult(
            u_statistic=float(u),
            p_value=tail / total,
            method="exact",
            direction="first-greater",
        )

    mean_u = m * n / 2.0
    big_n = m + n
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts))
    var_u = (m * n / 12.0) * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)))
    if var_u <= 0.0:
        return UTestResult(float(u), 1.0, "normal-approximation", "first-greater")
    z = (u - mean_u - 0.5) / math.sqrt(var_u)
    p = 0.5 * math.erfc(z / math.sqrt(2.0))
    p = min(max(p, sys.float_info.min), 1.0)
    return UTestResult(float(u), p, "normal-approximation", "first-greater")


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson correlation of average-tie ranks."""
    x = np.asarray(list(x), dtype=np.float64)
    y = np.asarray(list(y), dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise UndefinedCorrelationError(
            f"inputs must be equal-length vectors, got {x.shape} vs {y.shape}"
        )
    if x.size < 2:
        raise UndefinedCorrelationError("correlation needs at least two points")
    rx = average_ranks(x)
    ry = average_ranks(y)
    if np.ptp(rx) == 0.0 or np.ptp(ry) == 0.0:
        raise UndefinedCorrelationError("constant series has no defined rank correlation")
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(np.dot(rx, rx)) * float(np.dot(ry, ry)))
    return float(np.dot(rx, ry)) / denom


def unpaired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided Welch t-test (unequal variances)."""
    a = np.asarray(list(a), dtype=np.float64)
    b = np.asarray(list(b), dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DegenerateSamplesError("both samples need at least two values")
    if np.var(a, ddof=1) == 0.0 and np.var(b, ddof=1) == 0.0:
        raise DegenerateSamplesError("both samples have zero variance")
    res = _scipy_stats.ttest_ind(a, b, equal_var=False)
    return TTestResult(statistic=float(res.statistic), p_value=float(res.pvalue), df=float(res.df))
