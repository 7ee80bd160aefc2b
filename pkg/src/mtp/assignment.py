"""Optimal and ranked (Murty) linear assignment over gated cost matrices.

Every solution is a maximum-cardinality matching over the allowed cells.
Among those, matchings are ordered by exact total cost (float entries are
summed as exact rationals) and then by lexicographic order of the sorted
``(row, col)`` pair list.  That order is total, so the optimum and the
ranked list are unique and independent of solver internals.

Internally every allowed cell is mapped to one integer that encodes both the
scaled cost and the lexicographic tie-break, so all comparisons are exact.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FORBIDDEN = math.inf
"""Convenience marker: cells equal to this value are masked as forbidden."""


class CostMatrix:
    """Rectangular cost matrix with an explicit forbidden mask.

    Rows are tracklets, columns detections.  Lower cost is better.  When no
    mask is given, non-finite entries are treated as forbidden.
    """

    __slots__ = ("costs", "forbidden")

    def __init__(self, costs, forbidden=None):
        costs = np.array(costs, dtype=float)
        if costs.ndim == 1 and costs.size == 0:
            costs = costs.reshape(0, 0)
        if costs.ndim != 2:
            raise ValueError(f"cost matrix must be 2-D, got shape {costs.shape}")
        if forbidden is None:
            mask = ~np.isfinite(costs)
        else:
            mask = np.array(forbidden, dtype=bool)
            if mask.shape != costs.shape:
                raise ValueError(f"mask shape {mask.shape} != cost shape {costs.shape}")
        if not np.all(np.isfinite(costs[~mask])):
            raise ValueError("allowed cells must hold finite costs")
        costs[mask] = 0.0
        costs.setflags(write=False)
        mask.setflags(write=False)
        self.costs = costs
        self.forbidden = mask

    @property
    def n_rows(self) -> int:
        return self.costs.shape[0]

    @property
    def n_cols(self) -> int:
        return self.costs.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.costs.shape

    def allowed(self, row: int, col: int) -> bool:
        return not self.forbidden[row, col]

    def __repr__(self) -> str:
        return f"CostMatrix(shape={self.shape}, forbidden={int(self.forbidden.sum())})"


@dataclass(frozen=True)
class Assignment:
    matches: tuple[tuple[int, int], ...]
    unmatched_rows: tuple[int, ...]
    unmatched_cols: tuple[int, ...]
    total_cost: float
    _key: int = field(default=0, repr=False, compare=False)

    def col_of_row(self) -> dict[int, int]:
        return dict(self.matches)

    def row_of_col(self) -> dict[int, int]:
        return {c: r for r, c in self.matches}


def _scaled_ints(values: Sequence[float]) -> list[int]:
    """Exact integers proportional to ``values`` (common power-of-two scale)."""
    ratios = [float(v).as_integer_ratio() for v in values]
    scale = max((den for _, den in ratios), default=1)
    return [num * (scale // den) for num, den in ratios]


class _Problem:
    """Integer-keyed view of a cost matrix shared by all sub-problems."""

    def __init__(self, c: CostMatrix):
        self.c = c
        n_rows, n_cols = c.shape
        cells = [(r, col) for r in range(n_rows) for col in range(n_cols)
                 if not c.forbidden[r, col]]
        ints = _scaled_ints([c.costs[r, col] for r, col in cells])
        base = n_cols + 1
        span = base ** n_rows
        self.key: dict[tuple[int, int], int] = {}
        for (r, col), q in zip(cells, ints):
            # matched (r, col) beats row r unmatched, and low columns beat high ones
            lex = (n_cols - col) * base ** (n_rows - 1 - r)
            self.key[(r, col)] = q * span - lex
        self.adj: dict[int, list[int]] = {}
        for r, col in cells:
            self.adj.setdefault(r, []).append(col)

    def components(self) -> list[tuple[list[int], list[int]]]:
        parent: dict[tuple[str, int], tuple[str, int]] = {}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for r, cols in self.adj.items():
            parent.setdefault(("r", r), ("r", r))
            for col in cols:
                parent.setdefault(("c", col), ("c", col))
                ra, rb = find(("r", r)), find(("c", col))
                if ra != rb:
                    parent[rb] = ra
        groups: dict[tuple[str, int], tuple[list[int], list[int]]] = {}
        for node in sorted(parent):
            rows, cols = groups.setdefault(find(node), ([], []))
            (rows if node[0] == "r" else cols).append(node[1])
        return sorted((sorted(r), sorted(c)) for r, c in groups.values())


def _hungarian_square(a: list[list[int]]) -> list[int]:
    """Min-sum perfect matching on a square integer matrix; returns col per row."""
    n = len(a)
    inf = math.inf
    u = [0] * (n + 1)
    v = [0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of = [0] * n
    for j in range(1, n + 1):
        if p[j]:
            col_of[p[j] - 1] = j - 1
    return col_of


def _solve_block(prob: _Problem, rows: Sequence[int], cols: Sequence[int],
                 excluded: frozenset | set = frozenset()) -> tuple[int, list[tuple[int, int]]]:
    """Best max-cardinality matching restricted to ``rows`` x ``cols``."""
    if not rows or not cols:
        return 0, []
    key = prob.key
    cells = {}
    for r in rows:
        for col in cols:
            k = key.get((r, col))
            if k is not None and (r, col) not in excluded:
                cells[(r, col)] = k
    if not cells:
        return 0, []
    n = max(len(rows), len(cols))
    bound = max(abs(k) for k in cells.values())
    penalty = 2 * n * bound + 1
    a = [[penalty] * n for _ in range(n)]
    for i, r in enumerate(rows):
        line = a[i]
        for j, col in enumerate(cols):
            k = cells.get((r, col))
            if k is not None:
                line[j] = k
    col_of = _hungarian_square(a)
    pairs = []
    total = 0
    for i, j in enumerate(col_of):
        if i < len(rows) and j < len(cols):
            cell = (rows[i], cols[j])
            k = cells.get(cell)
            if k is not None:
                pairs.append(cell)
                total += k
    pairs.sort()
    return total, pairs


def _ranked_block(prob: _Problem, rows: list[int], cols: list[int],
                  h: int) -> list[tuple[int, tuple[tuple[int, int], ...]]]:
    """Murty partitioning on one connected block: ``h`` best max-cardinality matchings."""
    key0, best = _solve_block(prob, rows, cols)
    target = len(best)
    out: list[tuple[int, tuple[tuple[int, int], ...]]] = []
    counter = 0
    heap = [(key0, counter, tuple(best), (), frozenset())]
    while heap and len(out) < h:
        key, _, pairs, fixed, excluded = heapq.heappop(heap)
        out.append((key, pairs))
        if len(out) >= h:
            break
        fixed_set = set(fixed)
        free = [p for p in pairs if p not in fixed_set]
        fixed_now = list(fixed)
        for pair in free:
            sub_excluded = excluded | {pair}
            used_r = {r for r, _ in fixed_now}
            used_c = {c for _, c in fixed_now}
            sub_rows = [r for r in rows if r not in used_r]
            sub_cols = [c for c in cols if c not in used_c]
            sub_key, sub_pairs = _solve_block(prob, sub_rows, sub_cols, sub_excluded)
            if len(sub_pairs) + len(fixed_now) == target:
                fixed_key = sum(prob.key[p] for p in fixed_now)
                counter += 1
                heapq.heappush(heap, (fixed_key + sub_key, counter,
                                      tuple(sorted(fixed_now + sub_pairs)),
                                      tuple(fixed_now), sub_excluded))
            fixed_now.append(pair)
    return out


def _combine(lists: list[list[tuple[int, tuple]]], h: int) -> list[tuple[int, tuple]]:
    """``h`` smallest sums choosing one entry from each sorted list."""
    if not lists:
        return [(0, ())]
    start = (0,) * len(lists)
    heap = [(sum(lst[0][0] for lst in lists), start)]
    seen = {start}
    out = []
    while heap and len(out) < h:
        total, idx = heapq.heappop(heap)
        pairs = tuple(sorted(p for lst, i in zip(lists, idx) for p in lst[i][1]))
        out.append((total, pairs))
        for pos in range(len(lists)):
            if idx[pos] + 1 < len(lists[pos]):
                nxt = idx[:pos] + (idx[pos] + 1,) + idx[pos + 1:]
                if nxt not in seen:
                    seen.add(nxt)
                    delta = lists[pos][idx[pos] + 1][0] - lists[pos][idx[pos]][0]
                    heapq.heappush(heap, (total + delta, nxt))
    return out


def _to_assignment(c: CostMatrix, key: int, pairs: Iterable[tuple[int, int]]) -> Assignment:
    pairs = tuple(pairs)
    rows = {r for r, _ in pairs}
    cols = {col for _, col in pairs}
    return Assignment(
        matches=pairs,
        unmatched_rows=tuple(r for r in range(c.n_rows) if r not in rows),
        unmatched_cols=tuple(col for col in range(c.n_cols) if col not in cols),
        total_cost=math.fsum(float(c.costs[r, col]) for r, col in pairs),
        _key=key,
    )


def murty_h_best(c: CostMatrix, h: int) -> list[Assignment]:
    """The ``h`` best maximum-cardinality assignments, best first.

    Returns fewer than ``h`` entries when the matrix admits fewer distinct
    maximum-cardinality matchings.  Independent gating components are ranked
    separately and merged, which is exact because costs add across them.
    """
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    prob = _Problem(c)
    ranked = [_ranked_block(prob, rows, cols, h) for rows, cols in prob.components()]
    return [_to_assignment(c, key, pairs) for key, pairs in _combine(ranked, h)]


def hungarian(c: CostMatrix) -> Assignment:
    """Minimum-cost maximum-cardinality assignment (ties: lexicographic pairs)."""
    return murty_h_best(c, 1)[0]
