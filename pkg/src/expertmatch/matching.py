"""Per-round expert/case graph and exact maximum-weight assignment.

Every case must receive an expert and an expert takes at most one case, so
the solver works over all reals (negative edge weights included). Among all
optimal assignments the lexicographically smallest assignment vector
``(expert of case 0, expert of case 1, ...)`` is returned.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .domain import DecisionCase, Expert, case_arrays

TIE_TOL = 1e-9
BRUTE_FORCE_MAX_CASES = 8


@dataclass
class AssignmentGraph:
    """Weights and decision bits, indexed ``[expert j, case i]``."""

    weights: np.ndarray
    decision_bits: np.ndarray
    experts: Sequence[Expert]
    cases: Sequence[DecisionCase]

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    @property
    def z(self) -> np.ndarray:
        return case_arrays(self.cases)[1]


@dataclass(frozen=True)
class Matching:
    assign: tuple[int, ...]  # case i -> expert assign[i]
    total_weight: float

    def decisions(self, graph: AssignmentGraph) -> np.ndarray:
        """Decision bit of each case under this assignment."""
        return graph.decision_bits[list(self.assign), np.arange(len(self.assign))].astype(np.int64)


def graph_arrays(p: np.ndarray, z: np.ndarray, thetas: np.ndarray, c: float):
    """Weights and bits for probabilities ``p``/groups ``z`` against an ``(n, 2)`` threshold table."""
    bits = (p[None, :] >= thetas[:, z]).astype(np.int8)
    weights = np.where(bits == 1, (p - c)[None, :], 0.0)
    return weights, bits


def build_graph(cases: Sequence[DecisionCase], experts: Sequence[Expert], c) -> AssignmentGraph:
    c = float(getattr(c, "c", c))
    if len(experts) < len(cases):
        raise ValueError(f"{len(experts)} experts cannot cover {len(cases)} cases")
    p, z = case_arrays(cases)
    thetas = np.array([e.thresholds for e in experts], dtype=float).reshape(len(experts), 2)
    weights, bits = graph_arrays(p, z, thetas, c)
    return AssignmentGraph(weights, bits, list(experts), list(cases))


def _check(graph_or_weights):
    w = graph_or_weights.weights if isinstance(graph_or_weights, AssignmentGraph) else graph_or_weights
    w = np.asarray(w, dtype=float)
    if w.ndim != 2:
        raise ValueError("weights must be a 2-d (experts x cases) matrix")
    if w.shape[0] < w.shape[1]:
        raise ValueError(f"{w.shape[0]} experts cannot cover {w.shape[1]} cases")
    return w


def _shortest_augmenting_path(cost: np.ndarray):
    """Min-cost assignment of every row of a non-negative ``(m, n)`` cost matrix, m <= n.

    Returns ``(col4row, u, v)`` with optimal duals: ``cost - u[:, None] - v >= 0``,
    zero on the assignment, and ``v == 0`` on unassigned columns.
    """
    m, n = cost.shape
    u = np.zeros(m)
    v = np.zeros(n)
    col4row = np.full(m, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)
    for cur in range(m):
        shortest = np.full(n, np.inf)
        path = np.full(n, -1, dtype=np.int64)
        remaining = np.ones(n, dtype=bool)
        scanned_rows = [cur]
        i, min_val, sink = cur, 0.0, -1
        while sink < 0:
            reduced = min_val + cost[i] - u[i] - v
            better = remaining & (reduced < shortest)
            shortest[better] = reduced[better]
            path[better] = i
            cand = np.where(remaining, shortest, np.inf)
            lowest = cand.min()
            ties = np.flatnonzero(cand == lowest)
            free = ties[row4col[ties] < 0]
            j = int(free[0]) if free.size else int(ties[0])
            min_val = lowest
            remaining[j] = False
            if row4col[j] < 0:
                sink = j
            else:
                i = int(row4col[j])
                scanned_rows.append(i)
        rows = np.asarray(scanned_rows[1:], dtype=np.int64)
        u[cur] += min_val
        if rows.size:
            u[rows] += min_val - shortest[col4row[rows]]
        done = ~remaining
        v[done] -= min_val - shortest[done]
        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur:
                break
    return col4row, u, v


def lex_min_assignment(adjacency: Sequence[Sequence[int]], n_cols: int, droppable: np.ndarray,
                       start: Sequence[int]) -> tuple[int, ...]:
    """Lexicographically smallest assignment with the same feasibility as ``start``.

    ``adjacency[i]`` lists the columns row i may take, ``droppable[j]`` says
    whether column j may stay unassigned, and ``start`` is any valid assignment.
    Rows are fixed in order, each to the smallest column for which a valid
    completion still exists (checked by one augmenting-path search).
    """
    m = len(adjacency)
    row_col = list(start)
    col_row = [-1] * n_cols
    for i, j in enumerate(row_col):
        col_row[j] = i
    drop_cols = [k for k in range(n_cols) if droppable[k]]
    blocked = [False] * n_cols

    def force(i: int, j: int) -> bool:
        j0 = row_col[i]
        r = col_row[j]
        src = r if r >= 0 else (-1, j)  # (-1, k): the free slot currently on column k
        blocked[j] = True
        parent: dict[int, object] = {}
        queue = deque([src])
        free_expanded = False
        found = False
        while queue and not found:
            x = queue.popleft()
            if isinstance(x, tuple):
                if free_expanded:
                    continue
                free_expanded = True
                nbrs = drop_cols
            else:
                nbrs = adjacency[x]
            for k in nbrs:
                if blocked[k] or k in parent:
                    continue
                parent[k] = x
                if k == j0:
                    found = True
                    break
                owner = col_row[k]
                queue.append(owner if owner >= 0 else (-1, k))
        blocked[j] = False
        if not found:
            return False
        k = j0
        while True:
            x = parent[k]
            if isinstance(x, tuple):
                prev = x[1]
                col_row[k] = -1
            else:
                prev = row_col[x]
                row_col[x] = k
                col_row[k] = x
            if x == src:
                break
            k = prev
        row_col[i] = j
        col_row[j] = i
        return True

    for i in range(m):
        for j in sorted(adjacency[i]):
            if j >= row_col[i]:
                break
            if not blocked[j] and force(i, j):
                break
        blocked[row_col[i]] = True
    return tuple(row_col)


def max_weight_matching(graph) -> Matching:
    """Exact maximum-weight assignment of every case to a distinct expert."""
    w = _check(graph)
    n, m = w.shape
    if m == 0:
        return Matching((), 0.0)
    cost = (w.max() - w).T  # shifted so every entry is >= 0
    col4row, u, v = _shortest_augmenting_path(cost)
    reduced = cost - u[:, None] - v[None, :]
    adjacency = [np.flatnonzero(reduced[i] <= TIE_TOL).tolist() for i in range(m)]
    droppable = v >= -TIE_TOL
    assign = lex_min_assignment(adjacency, n, droppable, col4row.tolist())
    total = float(w[list(assign), np.arange(m)].sum())
    return Matching(assign, total)


def brute_force_matching(graph) -> Matching:
    """Exhaustive search over all injective assignments (memoised on the used-expert set)."""
    w = _check(graph)
    n, m = w.shape
    if m > BRUTE_FORCE_MAX_CASES:
        raise ValueError(f"brute force refuses m={m} > {BRUTE_FORCE_MAX_CASES}")
    wl = w.tolist()

    @lru_cache(maxsize=None)
    def best(i: int, used: int) -> float:
        if i == m:
            return 0.0
        return max(wl[j][i] + best(i + 1, used | (1 << j)) for j in range(n) if not used >> j & 1)

    assign = []
    used = 0
    for i in range(m):
        target = best(i, used)
        for j in range(n):
            if used >> j & 1:
                continue
            if wl[j][i] + best(i + 1, used | (1 << j)) >= target - TIE_TOL:
                assign.append(j)
                used |= 1 << j
                break
    total = float(sum(wl[j][i] for i, j in enumerate(assign)))
    return Matching(tuple(assign), total)


def is_valid_matching(matching: Matching, n: int, m: int) -> bool:
    a = matching.assign
    return len(a) == m and len(set(a)) == m and all(0 <= j < n for j in a)
