"""MILP backend that hands the whole tree search to HiGHS' branch-and-cut.

HiGHS has no native SOS2 rows, so every set is rewritten with binaries (see
``_sos2_rows``).  The extra columns are appended after the model's own and
dropped from the returned point.
"""
from __future__ import annotations

import time

import highspy
import numpy as np
import scipy.sparse as sp

from .model import CompiledModel, Solution, Status

_HINF = highspy.kHighsInf
_MS = highspy.HighsModelStatus

_STATUS = {
    _MS.kOptimal: Status.OPTIMAL,
    _MS.kInfeasible: Status.INFEASIBLE,
    _MS.kUnbounded: Status.UNBOUNDED,
    _MS.kUnboundedOrInfeasible: Status.INFEASIBLE,
    _MS.kTimeLimit: Status.TIME_LIMIT,
    _MS.kIterationLimit: Status.ITER_LIMIT,
    _MS.kSolutionLimit: Status.ITER_LIMIT,
}


def _convexity_rows(cm: CompiledModel) -> set[tuple[int, ...]]:
    """Member tuples of rows reading ``sum w = 1`` with unit coefficients."""
    A = cm.A
    eq = np.flatnonzero((cm.row_lo == 1.0) & (cm.row_hi == 1.0))
    out = set()
    for i in eq:
        a, b = A.indptr[i], A.indptr[i + 1]
        if b - a >= 3 and np.all(A.data[a:b] == 1.0):
            out.add(tuple(sorted(A.indices[a:b].tolist())))
    return out


def _sos2_rows(cm: CompiledModel, formulation: str = "auto"):
    """Extra columns/rows encoding the SOS2 sets with binaries.

    Sets whose weights already sum to one through a model row get the
    incremental form: binary ``y_k`` sandwiched between consecutive tail sums,
    ``sum_{j>k} w_j <= y_k <= sum_{j>=k} w_j``.  Other sets get one segment
    binary per adjacent pair.
    """
    n = cm.n_vars
    convex = _convexity_rows(cm) if formulation != "segment" else set()
    layout = []
    rows, cols, vals, lo, hi = [], [], [], [], []
    n_extra = 0
    r = 0

    def put(row, col, val):
        rows.append(row)
        cols.append(int(col))
        vals.append(val)

    for members in cm.sos2:
        K = len(members)
        if tuple(sorted(members.tolist())) in convex:
            y = n + n_extra + np.arange(K - 2)
            layout.append(("incremental", members, y - n))
            n_extra += K - 2
            for k in range(1, K - 1):
                # y_k - sum_{j>=k} w_j <= 0  and  y_k - sum_{j>k} w_j >= 0
                put(r, y[k - 1], 1.0)
                for j in range(k, K):
                    put(r, members[j], -1.0)
                lo.append(-np.inf)
                hi.append(0.0)
                r += 1
                put(r, y[k - 1], 1.0)
                for j in range(k + 1, K):
                    put(r, members[j], -1.0)
                lo.append(0.0)
                hi.append(np.inf)
                r += 1
            continue
        z = n + n_extra + np.arange(K - 1)
        layout.append(("segment", members, z - n))
        n_extra += K - 1
        for k in range(K - 1):
            put(r, z[k], 1.0)
        lo.append(1.0)
        hi.append(1.0)
        r += 1
        for k, w in enumerate(members):
            put(r, w, 1.0)
            if k > 0:
                put(r, z[k - 1], -1.0)
            if k < K - 1:
                put(r, z[k], -1.0)
            lo.append(-np.inf)
            hi.append(0.0)
            r += 1
    B = sp.csr_matrix((vals, (rows, cols)), shape=(r, n + n_extra))
    return n_extra, B, np.array(lo), np.array(hi), layout


def _extra_start(layout, n_extra: int, start: np.ndarray) -> np.ndarray:
    """Values of the added SOS2 binaries matching the weights in ``start``."""
    extra = np.zeros(n_extra)
    for kind, members, cols in layout:
        w = np.clip(start[members], 0.0, None)
        nz = np.flatnonzero(w > 1e-9)
        first = int(nz[0]) if nz.size else 0
        if kind == "incremental":
            # y_k = 1 exactly when every member before k is zero
            extra[cols] = (np.arange(1, len(members) - 1) <= first).astype(float)
        else:
            extra[cols[min(first, len(members) - 2)]] = 1.0
    return extra


def solve_highs_mip(cm: CompiledModel, gap_tol: float, node_limit: int | None,
                    time_limit: float | None, tol: float, int_tol: float,
                    formulation: str = "auto", start: np.ndarray | None = None) -> Solution:
    t0 = time.perf_counter()
    n = cm.n_vars
    n_extra, B, blo, bhi, layout = _sos2_rows(cm, formulation)
    A = sp.vstack([sp.hstack([cm.A, sp.csr_matrix((cm.n_rows, n_extra))]), B]).tocsc()
    lp = highspy.HighsLp()
    lp.num_col_ = n + n_extra
    lp.num_row_ = A.shape[0]
    lp.col_cost_ = np.concatenate([cm.c, np.zeros(n_extra)])
    lp.col_lower_ = np.clip(np.concatenate([cm.lb, np.zeros(n_extra)]), -_HINF, _HINF)
    lp.col_upper_ = np.clip(np.concatenate([cm.ub, np.ones(n_extra)]), -_HINF, _HINF)
    lp.row_lower_ = np.clip(np.concatenate([cm.row_lo, blo]), -_HINF, _HINF)
    lp.row_upper_ = np.clip(np.concatenate([cm.row_hi, bhi]), -_HINF, _HINF)
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = A.indptr.astype(np.int32)
    lp.a_matrix_.index_ = A.indices.astype(np.int32)
    lp.a_matrix_.value_ = A.data
    integ = np.zeros(n + n_extra, dtype=bool)
    integ[cm.binaries] = True
    integ[n:] = True
    lp.integrality_ = [highspy.HighsVarType.kInteger if f else highspy.HighsVarType.kContinuous
                       for f in integ]
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("threads", 1)
    h.setOptionValue("random_seed", 0)
    h.setOptionValue("mip_rel_gap", gap_tol)
    h.setOptionValue("mip_abs_gap", gap_tol)
    h.setOptionValue("mip_feasibility_tolerance", min(tol, int_tol))
    h.setOptionValue("primal_feasibility_tolerance", min(tol, 1e-7))
    if node_limit is not None:
        h.setOptionValue("mip_max_nodes", int(node_limit))
    if time_limit is not None:
        h.setOptionValue("time_limit", float(time_limit))
    h.passModel(lp)
    if start is not None:
        # integer part only; HiGHS completes the continuous columns with an LP
        start = np.asarray(start, dtype=float)
        idx = np.concatenate([cm.binaries, n + np.arange(n_extra)]).astype(np.int32)
        val = np.concatenate([np.round(start[cm.binaries]), _extra_start(layout, n_extra, start)])
        h.setSolution(idx.size, idx, val)
    h.run()
    ms = h.getModelStatus()
    status = _STATUS.get(ms)
    if status is None:
        raise RuntimeError(f"HiGHS returned {h.modelStatusToString(ms)}")
    info = h.getInfo()
    const = cm.obj_constant
    nodes = int(info.mip_node_count)
    wall = time.perf_counter() - t0
    meta = {"lp_iterations": int(info.simplex_iteration_count), "engine": "highs-mip"}
    has_x = info.primal_solution_status == 2  # kSolutionStatusFeasible
    if not has_x or status in (Status.INFEASIBLE, Status.UNBOUNDED):
        if status is Status.OPTIMAL:
            status = Status.INFEASIBLE
        return Solution(status, nodes=nodes, wall_time=wall, info=meta)
    x = np.asarray(h.getSolution().col_value)[:n].copy()
    b = cm.binaries
    x[b] = np.round(x[b])
    obj = float(cm.c @ x) + const
    bound = float(info.mip_dual_bound) + const if np.isfinite(info.mip_dual_bound) else None
    return Solution(status, x=x, objective=obj, nodes=nodes, wall_time=wall,
                    best_bound=bound, iterations=meta["lp_iterations"], info=meta)
