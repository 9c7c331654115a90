"""Evaluation statistics: MAPE, band classification, Mann-Whitney, A12.

The Mann-Whitney U test takes the exact path (full enumeration of group
assignments over the combined sample, midranks for ties) whenever the
pooled size is at most 16, and the normal approximation with tie and
continuity corrections otherwise. Vargha-Delaney A12 is classified with
the standard thresholds: negligible below 0.56, then small, medium at
0.64, large at 0.71 (applied to max(A, 1-A)).
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np

from .errors import LengthMismatch, ZeroTruth

EXACT_LIMIT = 16


def mape(predictions: list[float], truths: list[float]) -> float:
    """Mean absolute percentage error."""
    if len(predictions) != len(truths) or not truths:
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(truths)} truths")
    if any(t == 0 for t in truths):
        raise ZeroTruth("MAPE undefined for zero ground truth")
    return float(np.mean([abs(p - t) / abs(t) for p, t in zip(predictions, truths)]))


def classify_tv(value: float, safe_range: tuple[float, float]) -> str:
    lo, hi = safe_range
    if value < lo:
        return "low"
    if value > hi:
        return "high"
    return "ok"


def accuracy(predicted: list[str], truth: list[str]) -> float:
    if len(predicted) != len(truth) or not truth:
        raise LengthMismatch(f"{len(predicted)} predictions vs {len(truth)} truths")
    return sum(p == t for p, t in zip(predicted, truth)) / len(truth)


# ---------------------------------------------------------------------------
# Mann-Whitney U


def _midranks(values: list[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2 + 1  # average of positions i..j, 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def _u_statistic(ranks: list[float], idx_a: tuple[int, ...], n: int) -> float:
    r_a = sum(ranks[i] for i in idx_a)
    return r_a - n * (n + 1) / 2


def mann_whitney(a: list[float], b: list[float]) -> tuple[float, float]:
    """Two-sided Mann-Whitney U; returns (U of the first sample, p)."""
    if not a or not b:
        raise LengthMismatch("both samples must be nonempty")
    n, m = len(a), len(b)
    pooled = list(a) + list(b)
    ranks = _midranks(pooled)
    u = _u_statistic(ranks, tuple(range(n)), n)

    if n + m <= EXACT_LIMIT:
        # exact: every n-subset of the pooled sample is equally likely
        total = 0
        extreme = 0
        u_lo = min(u, n * m - u)
        for subset in combinations(range(n + m), n):
            total += 1
            u_s = _u_statistic(ranks, subset, n)
            if u_s <= u_lo + 1e-9 or u_s >= n * m - u_lo - 1e-9:
                extreme += 1
        return u, min(1.0, extreme / total)

    # normal approximation with tie and continuity corrections
    counts: dict[float, int] = {}
    for v in pooled:
        counts[v] = counts.get(v, 0) + 1
    big_n = n + m
    tie_term = sum(t**3 - t for t in counts.values()) / (big_n * (big_n - 1))
    sigma2 = n * m / 12 * (big_n + 1 - tie_term)
    if sigma2 <= 0:
        return u, 1.0
    mean = n * m / 2
    z = (abs(u - mean) - 0.5) / math.sqrt(sigma2)
    z = max(z, 0.0)
    p = math.erfc(z / math.sqrt(2))
    return u, min(1.0, p)


# ---------------------------------------------------------------------------
# Vargha-Delaney effect size


A12_THRESHOLDS = (0.56, 0.64, 0.71)  # S, M, L on max(A, 1-A)


def a12(a: list[float], b: list[float]) -> tuple[float, str]:
    """Probability of superiority of a over b, with N/S/M/L class."""
    if not a or not b:
        raise LengthMismatch("both samples must be nonempty")
    wins = ties = 0
    for x in a:
        for y in b:
            if x > y:
                wins += 1
            elif x == y:
                ties += 1
    value = (wins + 0.5 * ties) / (len(a) * len(b))
    magnitude = max(value, 1.0 - value)
    if magnitude >= A12_THRESHOLDS[2]:
        cls = "L"
    elif magnitude >= A12_THRESHOLDS[1]:
        cls = "M"
    elif magnitude >= A12_THRESHOLDS[0]:
        cls = "S"
    else:
        cls = "N"
    return value, cls
