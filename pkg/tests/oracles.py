"""Independent brute-force oracles used by the test-suite."""

from __future__ import annotations

import functools
from fractions import Fraction

import numpy as np


def all_matchings(costs, forbidden):
    """Every matching over allowed cells, as sorted pair tuples."""
    n_rows, n_cols = costs.shape
    out = []

    def extend(row, used, pairs):
        if row == n_rows:
            out.append(tuple(pairs))
            return
        extend(row + 1, used, pairs)
        for c in range(n_cols):
            if c not in used and not forbidden[row, c]:
                extend(row + 1, used | {c}, pairs + [(row, c)])

    extend(0, frozenset(), [])
    return out


def ranked_max_cardinality(costs, forbidden):
    """All max-cardinality matchings sorted by (exact cost, pair list)."""
    ms = all_matchings(costs, forbidden)
    best = max(len(m) for m in ms)
    ms = [m for m in ms if len(m) == best]
    exact = lambda m: sum((Fraction(float(costs[r, c])) for r, c in m), Fraction(0))
    return sorted(ms, key=lambda m: (exact(m), m))


def best_max_cardinality(costs, forbidden):
    """(cardinality, exact cost) of the cheapest maximum-cardinality matching.

    Exhaustive search over rows with a memo on the set of used columns.
    """
    n_rows, n_cols = costs.shape
    exact = [[Fraction(float(costs[r, c])) for c in range(n_cols)] for r in range(n_rows)]

    @functools.lru_cache(maxsize=None)
    def best(row, used):
        if row == n_rows:
            return 0, Fraction(0)
        options = [best(row + 1, used)]
        for c in range(n_cols):
            if not used >> c & 1 and not forbidden[row, c]:
                k, cost = best(row + 1, used | 1 << c)
                options.append((k + 1, cost + exact[row][c]))
        return max(options, key=lambda o: (o[0], -o[1]))

    return best(0, 0)


def naive_min_ade(samples, gt):
    best = float("inf")
    for s in samples:
        acc = 0.0
        for (x, y), (gx, gy) in zip(s, gt):
            acc += ((x - gx) ** 2 + (y - gy) ** 2) ** 0.5
        best = min(best, acc / len(gt))
    return best


def naive_min_fde(samples, gt):
    gx, gy = gt[-1]
    return min(((s[-1][0] - gx) ** 2 + (s[-1][1] - gy) ** 2) ** 0.5 for s in samples)


def mc_iou3d(a, b, n, seed=0, qmc=False):
    """Volume IoU by sampling points inside box ``a`` and testing membership in ``b``."""
    rng = np.random.default_rng(seed)
    if qmc:
        from scipy.stats import qmc as _qmc
        u = _qmc.Sobol(d=3, scramble=True, seed=rng).random(n)
    else:
        u = rng.random((n, 3))
    local = (u - 0.5) * np.array([a.length, a.width, a.height])
    ca, sa = np.cos(a.yaw), np.sin(a.yaw)
    wx = a.cx + ca * local[:, 0] - sa * local[:, 1]
    wy = a.cy + sa * local[:, 0] + ca * local[:, 1]
    wz = a.cz + local[:, 2]
    cb, sb = np.cos(b.yaw), np.sin(b.yaw)
    dx, dy = wx - b.cx, wy - b.cy
    bx = cb * dx + sb * dy
    by = -sb * dx + cb * dy
    inside = ((np.abs(bx) <= b.length / 2) & (np.abs(by) <= b.width / 2)
              & (np.abs(wz - b.cz) <= b.height / 2))
    inter = inside.mean() * a.length * a.width * a.height
    union = a.length * a.width * a.height + b.length * b.width * b.height - inter
    return inter / union
