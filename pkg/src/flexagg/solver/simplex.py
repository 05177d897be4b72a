"""Dense bounded-variable revised primal simplex.

Rows ``row_lo <= A x <= row_hi`` are turned into equalities ``A x - s = 0``
with a bounded logical column ``s`` per row, so every column (structural or
logical) is a bounded variable and the simplex works on bounds only.  Phase I
starts from an all-artificial basis.  Dantzig pricing is used until a run of
degenerate pivots is detected, then Bland's rule takes over until progress
resumes.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .model import CompiledModel, NumericalInstability, Status
from .lpresult import LPResult

_REFACTOR_EVERY = 64
_DEGENERATE_RUN = 50
_PIVOT_TOL = 1e-9


def _refactor(M, basis, xv, nonbasic_mask):
    B = M[:, basis]
    eye = np.eye(B.shape[0])
    # second attempt goes through a pivoted LU instead of the plain inverse
    for invert in (np.linalg.inv, lambda mat: sla.lu_solve(sla.lu_factor(mat), eye)):
        try:
            B_inv = invert(B)
        except (np.linalg.LinAlgError, ValueError):
            continue
        if np.all(np.isfinite(B_inv)) and np.abs(B @ B_inv - eye).max(initial=0.0) < 1e-6:
            return B_inv, B_inv @ -(M[:, nonbasic_mask] @ xv[nonbasic_mask])
    raise NumericalInstability("basis factorization failed after refactorization retry")


def simplex_solve(cm: CompiledModel, tol: float = 1e-6, lb: np.ndarray | None = None,
                  ub: np.ndarray | None = None, max_iter: int | None = None) -> LPResult:
    A = cm.A.toarray()
    m, n = A.shape
    lb_x = cm.lb if lb is None else lb
    ub_x = cm.ub if ub is None else ub
    if np.any(lb_x > ub_x + tol):
        return LPResult(Status.INFEASIBLE)

    # columns: [x (n) | s (m) | artificial (m)]
    N = n + 2 * m
    lo = np.concatenate([lb_x, cm.row_lo, np.zeros(m)])
    hi = np.concatenate([ub_x, cm.row_hi, np.full(m, np.inf)])
    xv = np.zeros(N)
    xv[:n] = np.where(np.isfinite(lb_x), lb_x, np.where(np.isfinite(ub_x), ub_x, 0.0))
    ax = A @ xv[:n]
    xv[n:n + m] = np.clip(ax, cm.row_lo, cm.row_hi)
    gap = xv[n:n + m] - ax
    D = np.where(gap >= 0, 1.0, -1.0)
    xv[n + m:] = np.abs(gap)
    M = np.hstack([A, -np.eye(m), np.diag(D)])

    basis = np.arange(n + m, N)
    is_basic = np.zeros(N, dtype=bool)
    is_basic[basis] = True
    B_inv = np.diag(D)

    cost1 = np.concatenate([np.zeros(n + m), np.ones(m)])
    cost2 = np.concatenate([cm.c, np.zeros(2 * m)])
    if max_iter is None:
        max_iter = 50 * (n + m) + 1000

    iters = 0
    y = np.zeros(m)
    d = np.zeros(N)
    for phase in (1, 2):
        cost = cost1 if phase == 1 else cost2
        degenerate = 0
        since_refactor = 0
        while True:
            if iters >= max_iter:
                return LPResult(Status.ITER_LIMIT, iterations=iters)
            if since_refactor >= _REFACTOR_EVERY:
                B_inv, xv[basis] = _refactor(M, basis, xv, ~is_basic)
                since_refactor = 0
            y = cost[basis] @ B_inv
            d = cost - y @ M
            movable_up = xv < hi - 1e-12
            movable_dn = xv > lo + 1e-12
            cand = (~is_basic) & (((d < -tol) & movable_up) | ((d > tol) & movable_dn))
            if not cand.any():
                break
            bland = degenerate >= _DEGENERATE_RUN
            idx = np.flatnonzero(cand)
            j = int(idx[0]) if bland else int(idx[np.argmax(np.abs(d[idx]))])
            direction = 1.0 if d[j] < 0 else -1.0
            alpha = B_inv @ M[:, j]
            step = direction * alpha  # basic values move by -theta * step

            theta = np.inf
            leave = -1
            leave_to = 0.0
            xb = xv[basis]
            lob, hib = lo[basis], hi[basis]
            dec = step > _PIVOT_TOL
            inc = step < -_PIVOT_TOL
            ratios = np.full(m, np.inf)
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios[dec] = (xb[dec] - lob[dec]) / step[dec]
                ratios[inc] = (hib[inc] - xb[inc]) / (-step[inc])
            ratios = np.maximum(ratios, 0.0)
            ratios[~np.isfinite(ratios)] = np.inf
            if np.isfinite(ratios).any():
                theta = ratios.min()
                ties = np.flatnonzero(ratios <= theta + 1e-12)
                if bland:
                    r = int(ties[np.argmin(basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(alpha[ties]))])
                leave = r
                leave_to = lob[r] if step[r] > 0 else hib[r]
            span = hi[j] - xv[j] if direction > 0 else xv[j] - lo[j]
            if span <= theta:
                theta = span
                leave = -1
            if not np.isfinite(theta):
                if phase == 1:
                    raise NumericalInstability("phase I ray; basis numerically broken")
                return LPResult(Status.UNBOUNDED, iterations=iters)

            xv[j] += direction * theta
            xv[basis] -= theta * step
            if leave >= 0:
                out = basis[leave]
                xv[out] = leave_to
                row = B_inv[leave] / alpha[leave]
                B_inv -= np.outer(alpha, row)
                B_inv[leave] = row
                basis[leave] = j
                is_basic[out] = False
                is_basic[j] = True
                since_refactor += 1
            else:
                # bound flip: snap entering value exactly onto its bound
                xv[j] = hi[j] if direction > 0 else lo[j]
            degenerate = degenerate + 1 if theta <= 1e-12 else 0
            iters += 1

        if phase == 1:
            infeas = xv[n + m:].sum()
            if infeas > tol * max(1.0, m) ** 0.5:
                return LPResult(Status.INFEASIBLE, iterations=iters)
            hi[n + m:] = 0.0
            xv[n + m:] = 0.0
            B_inv, xv[basis] = _refactor(M, basis, xv, ~is_basic)

    x = xv[:n].copy()
    obj = float(cm.c @ x)
    row_dual = y.copy()
    col_dual = d[:n].copy()
    return LPResult(Status.OPTIMAL, x=x, obj=obj, row_dual=row_dual, col_dual=col_dual,
                    iterations=iters)
