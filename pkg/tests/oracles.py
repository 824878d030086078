"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def silhouette_bruteforce(X, labels) -> float:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    labels = list(labels)
    n = len(X)
    clusters = sorted(set(labels))
    total = 0.0
    for i in range(n):
        dist = {c: [] for c in clusters}
        for j in range(n):
            if i != j:
                dist[labels[j]].append(math.sqrt(sum((X[i, t] - X[j, t]) ** 2 for t in range(X.shape[1]))))
        own = dist[labels[i]]
        if not own:
            continue  # singleton scores 0
        a = sum(own) / len(own)
        b = min(sum(v) / len(v) for c, v in dist.items() if c != labels[i])
        m = max(a, b)
        total += 0.0 if m == 0 else (b - a) / m
    return total / n


def mwu_exact(a, b):
    """U_a (pairs a > b, ties 1/2) and exact two-sided p by enumerating every
    assignment of the pooled values to the first sample."""
    a, b = list(a), list(b)
    pooled = a + b
    n1 = len(a)

    def u_stat(x, y):
        return sum(1.0 if xi > yi else 0.5 if xi == yi else 0.0 for xi in x for yi in y)

    u_obs = u_stat(a, b)
    mean = n1 * len(b) / 2.0
    dev = abs(u_obs - mean)
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), n1):
        chosen = set(idx)
        x = [pooled[i] for i in idx]
        y = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        total += 1
        if abs(u_stat(x, y) - mean) >= dev - 1e-12:
            hits += 1
    return u_obs, hits / total


def ari_reference(a, b) -> float:
    """Pair-counting adjusted Rand index over all n(n-1)/2 pairs."""
    n = len(a)
    same_a = same_b = both = 0
    for i in range(n):
        for j in range(i + 1, n):
            sa, sb = a[i] == a[j], b[i] == b[j]
            same_a += sa
            same_b += sb
            both += sa and sb
    total = n * (n - 1) / 2
    expected = same_a * same_b / total
    mx = (same_a + same_b) / 2
    return 1.0 if mx == expected else (both - expected) / (mx - expected)


def hadlock_reference(hc, ac, fl) -> float:
    """Three-plane HC/AC/FL estimated fetal weight, grams, written out term by term."""
    log10_w = 1.326 - 0.00326 * ac * fl + 0.0107 * hc + 0.0438 * ac + 0.158 * fl
    return math.pow(10.0, log10_w)


def polyval_reference(coefficients, x) -> float:
    return float(sum(c * x ** i for i, c in enumerate(coefficients)))
