"""Dense bounded-variable primal simplex.

Solves ``max c @ x`` subject to ``A @ x == b`` and ``lb <= x <= ub`` with a
two-phase tableau method. Entering variables are priced by Bland's rule, so
the method cannot cycle; ``rule="dantzig"`` switches to largest-coefficient
pricing and falls back to Bland after a run of degenerate pivots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9


class LPInfeasible(Exception):
    pass


class LPNumericalError(Exception):
    """The simplex broke down (unbounded ray, iteration limit, drift)."""


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int


class _Tableau:
    def __init__(self, A, b, lb, ub, rule, max_iter, x0=None, basis_hint=None):
        self.rule = rule
        self.max_iter = max_iter
        self.iterations = 0
        m, n = A.shape
        if x0 is None:
            x = np.where(np.isfinite(lb), lb, 0.0).astype(float)
        else:
            x = np.clip(np.asarray(x0, dtype=float), lb, ub)
        basis = np.full(m, -1, dtype=np.int64)
        if basis_hint is not None:
            basis[:] = basis_hint
        resid = b - A @ x
        if basis_hint is None:
            # crash basis: a unit column of row k absorbs the residual when its bounds allow
            nnz = np.count_nonzero(A, axis=0)
            for j in np.flatnonzero(nnz == 1):
                k = int(np.flatnonzero(A[:, j])[0])
                if basis[k] >= 0:
                    continue
                val = x[j] + resid[k] / A[k, j]
                if lb[j] - FEAS_TOL <= val <= ub[j] + FEAS_TOL:
                    basis[k] = j
                    x[j] = min(max(val, lb[j]), ub[j])
                    resid[k] = 0.0
        elif np.any(np.abs(resid[basis >= 0]) > FEAS_TOL):
            raise ValueError("starting point must satisfy every row that has a hinted basic column")
        art_rows = np.flatnonzero(basis < 0)
        n_art = art_rows.size
        sign = np.where(resid[art_rows] >= 0, 1.0, -1.0)
        full = np.zeros((m, n + n_art))
        full[:, :n] = A
        full[art_rows, n + np.arange(n_art)] = sign
        basis[art_rows] = n + np.arange(n_art)
        self.n_struct = n
        self.lb = np.concatenate([lb, np.zeros(n_art)]).astype(float)
        self.ub = np.concatenate([ub, np.full(n_art, np.inf)]).astype(float)
        self.x = np.concatenate([x, np.abs(resid[art_rows])])
        self.basis = basis
        # tableau rows are B^-1 [A | art]; the basis columns are unit vectors once reduced
        B = full[:, basis]
        try:
            self.T = np.linalg.solve(B, full)
        except np.linalg.LinAlgError as exc:
            raise LPNumericalError("singular starting basis") from exc
        self.is_basic = np.zeros(n + n_art, dtype=bool)
        self.is_basic[basis] = True

    def _reduced(self, cost):
        return cost - cost[self.basis] @ self.T

    def run(self, cost, frozen):
        """Optimise ``cost`` from the current basic feasible point; ``frozen`` columns never enter."""
        T, x, lb, ub = self.T, self.x, self.lb, self.ub
        d = self._reduced(cost)
        degenerate_run = 0
        while True:
            if self.iterations >= self.max_iter:
                raise LPNumericalError(f"iteration limit {self.max_iter} reached")
            nonbasic = ~self.is_basic & ~frozen
            up = nonbasic & (d > OPT_TOL) & (x < ub - PIVOT_TOL)
            down = nonbasic & (d < -OPT_TOL) & (x > lb + PIVOT_TOL)
            eligible = np.flatnonzero(up | down)
            if eligible.size == 0:
                return
            if self.rule == "dantzig" and degenerate_run < 50:
                e = int(eligible[np.argmax(np.abs(d[eligible]))])
            else:
                e = int(eligible[0])
            sigma = 1.0 if up[e] else -1.0
            col = T[:, e] * sigma
            xb = x[self.basis]
            step = ub[e] - lb[e]
            leave = -1
            pos = col > PIVOT_TOL
            neg = col < -PIVOT_TOL
            ratios = np.full(col.size, np.inf)
            ratios[pos] = (xb[pos] - lb[self.basis[pos]]) / col[pos]
            ratios[neg] = (ub[self.basis[neg]] - xb[neg]) / -col[neg]
            ratios = np.maximum(ratios, 0.0)
            rmin = ratios.min() if ratios.size else np.inf
            if rmin < step:
                ties = np.flatnonzero(ratios <= rmin + PIVOT_TOL)
                # Bland: among tied leaving rows take the smallest variable index
                leave = int(ties[np.argmin(self.basis[ties])])
                step = ratios[leave]
            if not np.isfinite(step):
                raise LPNumericalError("objective is unbounded")
            self.iterations += 1
            degenerate_run = degenerate_run + 1 if step <= PIVOT_TOL else 0
            x[self.basis] = xb - step * col
            x[e] += sigma * step
            if leave < 0:
                continue  # bound flip
            out = self.basis[leave]
            x[out] = lb[out] if col[leave] > 0 else ub[out]
            piv = T[leave, e]
            T[leave] /= piv
            rows = np.flatnonzero(T[:, e])
            rows = rows[rows != leave]
            T[rows] -= T[rows, e][:, None] * T[leave]
            d -= d[e] * T[leave]
            self.basis[leave] = e
            self.is_basic[out] = False
            self.is_basic[e] = True


def solve_bounded_lp(c, A, b, lb, ub, rule: str = "bland", max_iter: int = 50_000,
                     x0=None, basis_hint=None, phase1_only: bool = False) -> LPResult:
    """Maximise ``c @ x`` over ``{A x = b, lb <= x <= ub}``.

    ``x0`` with ``basis_hint`` (one column index per row, -1 for "artificial")
    warm-starts the method; rows owning a hinted column must already be
    satisfied by ``x0`` and the hinted columns must form a nonsingular basis
    together with the artificials. Raises LPInfeasible when phase 1 cannot push
    the artificial sum below ``FEAS_TOL`` and LPNumericalError for unbounded
    or broken-down runs.
    """
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if rule not in ("bland", "dantzig"):
        raise ValueError(f"unknown pricing rule {rule!r}")
    if np.any(lb > ub + FEAS_TOL):
        raise LPInfeasible("empty variable bounds")
    tab = _Tableau(A, b, lb, ub, rule, max_iter, x0, basis_hint)
    n = tab.n_struct
    n_tot = tab.x.size
    no_frozen = np.zeros(n_tot, dtype=bool)
    if n_tot > n:
        phase1 = np.zeros(n_tot)
        phase1[n:] = -1.0
        tab.run(phase1, no_frozen)
        infeas = tab.x[n:].sum()
        if infeas > FEAS_TOL:
            raise LPInfeasible(f"phase 1 residual {infeas:.3g}")
        tab.ub[n:] = 0.0
        tab.x[n:] = 0.0
    if phase1_only:
        return LPResult(tab.x[:n].copy(), float(c @ tab.x[:n]), tab.iterations)
    frozen = no_frozen.copy()
    frozen[n:] = True
    cost = np.concatenate([c, np.zeros(n_tot - n)])
    tab.run(cost, frozen)
    x = tab.x[:n].copy()
    if np.any(np.abs(A @ x - b) > 1e-6) or np.any(x < lb - 1e-6) or np.any(x > ub + 1e-6):
        raise LPNumericalError("solution drifted outside the feasible region")
    return LPResult(x, float(c @ x), tab.iterations)


def feasible_point(A, b, lb, ub, max_iter: int = 50_000, x0=None, basis_hint=None) -> np.ndarray:
    """Phase 1 only; raises LPInfeasible when the region is empty."""
    A = np.asarray(A, dtype=float)
    return solve_bounded_lp(np.zeros(A.shape[1]), A, b, lb, ub, max_iter=max_iter,
                            x0=x0, basis_hint=basis_hint, phase1_only=True).x
