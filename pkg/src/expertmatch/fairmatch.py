"""Assignment under per-group benefit bands.

Each group z present in a round gets an integer band ``[lower, upper]`` on the
number of its cases that receive the beneficial decision. The bands are
centred on the fair reference rule's benefit count with ``alpha * m_z`` slack.
The production path is an LP relaxation followed by iterative rounding; an
exhaustive solver is kept for small rounds and as the reference in tests.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import BenefitConvention, FairThresholds, case_arrays, threshold_decisions
from .matching import (
    BRUTE_FORCE_MAX_CASES,
    TIE_TOL,
    AssignmentGraph,
    Matching,
    lex_min_assignment,
    max_weight_matching,
)
from .simplex import LPInfeasible, LPNumericalError, solve_bounded_lp

INTEGRAL_TOL = 1e-9

__all__ = [
    "BandConstraint",
    "FractionalSolution",
    "Infeasible",
    "LPNumericalError",
    "compute_bands",
    "solve_constrained_exact",
    "solve_lp",
    "round_fractional",
    "solve_constrained",
    "check_feasibility",
    "benefit_counts",
    "band_violation",
]


class Infeasible(Exception):
    """No assignment (or no fractional point) meets every band."""


@dataclass(frozen=True)
class BandConstraint:
    z: int
    lower: int
    upper: int
    convention: BenefitConvention = BenefitConvention.IDENTITY

    def __post_init__(self):
        if not 0 <= self.lower <= self.upper:
            raise ValueError(f"bad band [{self.lower}, {self.upper}] for group {self.z}")


@dataclass
class FractionalSolution:
    x: np.ndarray  # (n, m), rows are experts
    objective: float


def _benefit_bits(graph: AssignmentGraph, convention) -> np.ndarray:
    return BenefitConvention(convention).apply(graph.decision_bits)


def compute_bands(cases, c, theta_star: FairThresholds, alpha: float,
                  convention: BenefitConvention = BenefitConvention.IDENTITY) -> list[BandConstraint]:
    """Bands ``[ceil(b* - alpha m_z), floor(b* + alpha m_z)]`` clipped to ``[0, m_z]``.

    ``cases`` may be DecisionCase objects or a ``(p, z)`` pair of arrays.
    """
    if isinstance(cases, tuple):
        p, z = np.asarray(cases[0], dtype=float), np.asarray(cases[1], dtype=np.int64)
    else:
        p, z = case_arrays(cases)
    convention = BenefitConvention(convention)
    f = convention.apply(threshold_decisions(p, z, theta_star))
    bands = []
    for g in (0, 1):
        mz = int(np.sum(z == g))
        if mz == 0:
            continue
        target = int(f[z == g].sum())
        lo = max(0, math.ceil(target - alpha * mz - 1e-9))
        hi = min(mz, math.floor(target + alpha * mz + 1e-9))
        bands.append(BandConstraint(g, lo, hi, convention))
    return bands


def benefit_counts(decisions: np.ndarray, z: np.ndarray, convention=BenefitConvention.IDENTITY) -> dict[int, int]:
    f = BenefitConvention(convention).apply(decisions)
    return {g: int(f[z == g].sum()) for g in (0, 1)}


def band_violation(matching: Matching, graph: AssignmentGraph, bands: Sequence[BandConstraint]) -> int:
    """Largest amount by which any band is missed (0 when all are met)."""
    d = matching.decisions(graph)
    z = graph.z
    worst = 0
    for band in bands:
        b = benefit_counts(d, z, band.convention)[band.z]
        worst = max(worst, band.lower - b, b - band.upper)
    return worst


def satisfies_bands(matching: Matching, graph: AssignmentGraph, bands) -> bool:
    return band_violation(matching, graph, bands) == 0


def _lex_min_restricted(allowed: Sequence[Sequence[int]], n: int):
    """Lexicographically smallest injective assignment with case i drawn from ``allowed[i]``, or None."""
    m = len(allowed)
    col_row = [-1] * n
    row_col = [-1] * m

    def augment(i, seen):
        for j in allowed[i]:
            if j in seen:
                continue
            seen.add(j)
            if col_row[j] < 0 or augment(col_row[j], seen):
                col_row[j] = i
                row_col[i] = j
                return True
        return False

    for i in range(m):
        if not augment(i, set()):
            return None
    return lex_min_assignment([sorted(a) for a in allowed], n, np.ones(n, dtype=bool), row_col)


def solve_constrained_exact(graph: AssignmentGraph, bands: Sequence[BandConstraint]) -> Matching:
    """Best band-respecting assignment by exhaustive search; raises Infeasible.

    Experts are grouped per case by their (weight, benefit bit) edge, and every
    combination of edge classes is enumerated. Combinations that pass the bands
    and admit an injective assignment are ranked by weight, ties going to the
    lexicographically smallest assignment.
    """
    n, m = graph.n, graph.m
    if m > BRUTE_FORCE_MAX_CASES:
        raise ValueError(f"exact solver refuses m={m} > {BRUTE_FORCE_MAX_CASES}")
    if m == 0:
        return Matching((), 0.0)
    w = graph.weights
    z = graph.z
    gbits = _benefit_bits(graph, bands[0].convention) if bands else graph.decision_bits
    classes = []
    for i in range(m):
        groups: dict[tuple, list[int]] = {}
        for j in range(n):
            groups.setdefault((float(w[j, i]), int(gbits[j, i])), []).append(j)
        classes.append(list(groups.items()))
    band_of = {b.z: b for b in bands}
    feasible = []
    for combo in itertools.product(*classes):
        counts = {0: 0, 1: 0}
        for i, (key, _) in enumerate(combo):
            counts[int(z[i])] += key[1]
        if any(not b.lower <= counts[g] <= b.upper for g, b in band_of.items()):
            continue
        feasible.append((sum(key[0] for key, _ in combo), [experts for _, experts in combo]))
    feasible.sort(key=lambda t: -t[0])
    best_value = None
    best = None
    for value, allowed in feasible:
        if best_value is not None and value < best_value - TIE_TOL:
            break
        assign = _lex_min_restricted(allowed, n)
        if assign is None:
            continue
        if best is None:
            best_value, best = value, assign
        elif assign < best:
            best = assign
    if best is None:
        raise Infeasible("no assignment satisfies the bands")
    return Matching(best, float(w[list(best), np.arange(m)].sum()))


def _prune(graph: AssignmentGraph, keep_cases, keep_experts, gbits) -> np.ndarray:
    """Edges kept for the LP: per case, at most ``m`` experts from each (weight, bit) class.

    Any fractional or integral solution can be moved onto the kept edges without
    changing its weight or benefit counts, since at most ``m - 1`` units of
    expert capacity are taken by the other cases.
    """
    m_res = len(keep_cases)
    mask = np.zeros((graph.n, graph.m), dtype=bool)
    experts = np.asarray(keep_experts, dtype=np.int64)
    for i in keep_cases:
        w = graph.weights[experts, i]
        g = gbits[experts, i]
        order = np.lexsort((experts, g, w))
        ws, gs = w[order], g[order]
        starts = np.flatnonzero(np.r_[True, (ws[1:] != ws[:-1]) | (gs[1:] != gs[:-1])])
        rank = np.arange(order.size) - np.repeat(starts, np.diff(np.r_[starts, order.size]))
        mask[experts[order[rank < m_res]], i] = True
    return mask


def _lp(graph: AssignmentGraph, bands, keep_cases, keep_experts, rule="dantzig", phase1_only=False):
    """LP over the residual cases/experts; returns the full (n, m) fractional matrix.

    The simplex is warm-started from the unconstrained optimum on the kept
    edges, so only band rows that it violates start with an artificial.
    """
    z = graph.z
    conv = {b.convention for b in bands}
    if len(conv) > 1:
        raise ValueError("bands must share one benefit convention")
    gbits = _benefit_bits(graph, conv.pop()) if bands else graph.decision_bits
    mask = _prune(graph, keep_cases, keep_experts, gbits)
    edges = np.argwhere(mask)  # (j, i) pairs
    n_e = len(edges)
    experts = np.unique(edges[:, 0]).tolist()
    n_c, n_x = len(keep_cases), len(experts)
    case_row = {i: k for k, i in enumerate(keep_cases)}
    exp_row = {j: n_c + k for k, j in enumerate(experts)}
    n_rows = n_c + n_x + len(bands)
    n_cols = n_e + n_x + len(bands)
    A = np.zeros((n_rows, n_cols))
    b = np.zeros(n_rows)
    b[: n_c + n_x] = 1.0
    lb = np.zeros(n_cols)
    ub = np.ones(n_cols)
    cost = np.zeros(n_cols)
    ci = np.array([case_row[i] for i in edges[:, 1]], dtype=np.int64)
    ej = np.array([exp_row[j] for j in edges[:, 0]], dtype=np.int64)
    cols = np.arange(n_e)
    A[ci, cols] = 1.0
    A[ej, cols] = 1.0
    cost[:n_e] = graph.weights[edges[:, 0], edges[:, 1]]
    A[n_c + np.arange(n_x), n_e + np.arange(n_x)] = 1.0
    for k, band in enumerate(bands):
        row = n_c + n_x + k
        in_group = z[edges[:, 1]] == band.z
        A[row, cols[in_group]] = gbits[edges[in_group, 0], edges[in_group, 1]]
        A[row, n_e + n_x + k] = -1.0
        lb[n_e + n_x + k] = band.lower
        ub[n_e + n_x + k] = band.upper

    # warm start from the best unconstrained assignment on the kept edges
    sub_w = graph.weights[np.ix_(experts, keep_cases)]
    sub_mask = mask[np.ix_(experts, keep_cases)]
    penalty = 2.0 * (np.abs(sub_w).sum() + 1.0)
    start = max_weight_matching(np.where(sub_mask, sub_w, sub_w - penalty)).assign
    edge_id = np.full((graph.n, graph.m), -1, dtype=np.int64)
    edge_id[edges[:, 0], edges[:, 1]] = cols
    x0 = np.zeros(n_cols)
    hint = np.full(n_rows, -1, dtype=np.int64)
    start_edges = edge_id[np.asarray(experts)[list(start)], keep_cases]
    x0[start_edges] = 1.0
    hint[:n_c] = start_edges
    x0[n_e: n_e + n_x] = 1.0 - A[n_c: n_c + n_x, :n_e] @ x0[:n_e]
    hint[n_c: n_c + n_x] = n_e + np.arange(n_x)
    for k, band in enumerate(bands):
        row, col = n_c + n_x + k, n_e + n_x + k
        count = A[row, :n_e] @ x0[:n_e]
        x0[col] = min(max(count, band.lower), band.upper)
        if band.lower <= count <= band.upper:
            hint[row] = col
    res = solve_bounded_lp(cost, A, b, lb, ub, rule=rule, x0=x0, basis_hint=hint, phase1_only=phase1_only)
    x = np.zeros((graph.n, graph.m))
    x[edges[:, 0], edges[:, 1]] = res.x[:n_e]
    return x, float(cost[:n_e] @ res.x[:n_e])


def solve_lp(graph: AssignmentGraph, bands: Sequence[BandConstraint], rule: str = "dantzig") -> FractionalSolution:
    """LP relaxation of the banded assignment; raises Infeasible or LPNumericalError."""
    if graph.m == 0:
        return FractionalSolution(np.zeros((graph.n, 0)), 0.0)
    try:
        x, obj = _lp(graph, list(bands), list(range(graph.m)), list(range(graph.n)), rule=rule)
    except LPInfeasible as exc:
        raise Infeasible(str(exc)) from exc
    return FractionalSolution(x, obj)


def _support_matching(graph: AssignmentGraph, x: np.ndarray, fixed: dict[int, int]) -> dict[int, int]:
    """Max-weight assignment of the unfixed cases using only edges in the support of ``x``."""
    free_cases = [i for i in range(graph.m) if i not in fixed]
    used = set(fixed.values())
    free_experts = [j for j in range(graph.n) if j not in used]
    if not free_cases:
        return {}
    sub_x = x[np.ix_(free_experts, free_cases)]
    sub_w = graph.weights[np.ix_(free_experts, free_cases)]
    penalty = 2.0 * (np.abs(sub_w).sum() + 1.0)
    w = np.where(sub_x > INTEGRAL_TOL, sub_w, sub_w - penalty)
    sol = max_weight_matching(w)
    return {free_cases[k]: free_experts[j] for k, j in enumerate(sol.assign)}


def _residual_bands(bands, widen, offsets, free_cases, z):
    out = []
    for b in bands:
        mz_left = int(sum(1 for i in free_cases if z[i] == b.z))
        lo = max(0, b.lower - widen - offsets[b.z])
        hi = min(mz_left, b.upper + widen - offsets[b.z])
        if lo > hi:
            return None
        out.append(BandConstraint(b.z, lo, hi, b.convention))
    return out


def round_fractional(fractional: FractionalSolution, graph: AssignmentGraph,
                     bands: Sequence[BandConstraint], rule: str = "dantzig") -> Matching:
    """Iterative rounding of an LP point into an assignment.

    Each pass fixes every edge with value at least 1/2 (largest first, skipping
    conflicts) and re-solves the LP on what is left, with the bands shifted by
    the fixed benefits. A residual LP that became infeasible gets its bands
    widened by one unit, then by two, then dropped. Once no edge reaches 1/2 the
    remaining cases are matched on the support of the last LP point.
    """
    m = graph.m
    bands = list(bands)
    x = fractional.x
    fixed: dict[int, int] = {}
    gbits = _benefit_bits(graph, bands[0].convention) if bands else graph.decision_bits
    z = graph.z
    while len(fixed) < m:
        used = set(fixed.values())
        free_cases = [i for i in range(m) if i not in fixed]
        cand = [(-x[j, i], i, j) for i in free_cases for j in np.flatnonzero(x[:, i] >= 0.5 - INTEGRAL_TOL)
                if j not in used]
        if not cand:
            fixed.update(_support_matching(graph, x, fixed))
            break
        cand.sort()
        for _, i, j in cand:
            if i in fixed or j in used:
                continue
            fixed[i] = int(j)
            used.add(int(j))
        free_cases = [i for i in range(m) if i not in fixed]
        if not free_cases:
            break
        free_experts = [j for j in range(graph.n) if j not in used]
        offsets = {g: 0 for g in (0, 1)}
        for i, j in fixed.items():
            offsets[int(z[i])] += int(gbits[j, i])
        x = None
        for widen in (0, 1, 2, None):
            res_bands = [] if widen is None else _residual_bands(bands, widen, offsets, free_cases, z)
            if res_bands is None:
                continue
            try:
                x, _ = _lp(graph, res_bands, free_cases, free_experts, rule=rule)
                break
            except LPInfeasible:
                continue
        if x is None:
            raise LPNumericalError("residual LP failed with every band dropped")
    assign = tuple(fixed[i] for i in range(m))
    return Matching(assign, float(graph.weights[list(assign), np.arange(m)].sum()))


def solve_constrained(graph: AssignmentGraph, bands: Sequence[BandConstraint],
                      rule: str = "dantzig") -> tuple[Matching, bool]:
    """Round-engine entry point: ``(matching, feasible)``.

    When the unconstrained optimum already meets the bands it is returned as is.
    When even the LP relaxation is infeasible, the unconstrained optimum is
    returned with ``feasible=False``.
    """
    best = max_weight_matching(graph)
    if not bands or satisfies_bands(best, graph, bands):
        return best, True
    try:
        frac = solve_lp(graph, bands, rule=rule)
    except Infeasible:
        return best, False
    return round_fractional(frac, graph, bands, rule=rule), True


def check_feasibility(graph: AssignmentGraph, bands: Sequence[BandConstraint]) -> bool:
    """Whether some assignment meets every band.

    Exact for ``m <= 8``; above that the LP relaxation's feasibility is used.
    """
    if not bands:
        return True
    if satisfies_bands(max_weight_matching(graph), graph, bands):
        return True
    if graph.m <= BRUTE_FORCE_MAX_CASES:
        try:
            solve_constrained_exact(graph, bands)
            return True
        except Infeasible:
            return False
    try:
        _lp(graph, list(bands), list(range(graph.m)), list(range(graph.n)), phase1_only=True)
        return True
    except LPInfeasible:
        return False
