"""LP relaxation engine on top of HiGHS' dual simplex, kept warm across bound changes."""
from __future__ import annotations

import highspy
import numpy as np

from .lpresult import LPResult
from .model import CompiledModel, Status

_HINF = highspy.kHighsInf

_STATUS = {
    highspy.HighsModelStatus.kOptimal: Status.OPTIMAL,
    highspy.HighsModelStatus.kInfeasible: Status.INFEASIBLE,
    highspy.HighsModelStatus.kUnbounded: Status.UNBOUNDED,
    highspy.HighsModelStatus.kUnboundedOrInfeasible: Status.UNBOUNDED,
    highspy.HighsModelStatus.kTimeLimit: Status.TIME_LIMIT,
    highspy.HighsModelStatus.kIterationLimit: Status.ITER_LIMIT,
}


def _finite(a: np.ndarray) -> np.ndarray:
    return np.clip(a, -_HINF, _HINF)


class HighsEngine:
    """Holds one HiGHS instance for a compiled model; ``solve`` takes column bounds.

    Only the bounds that differ from the previous call are pushed, so the
    previous optimal basis is reused as a warm start.
    """

    def __init__(self, cm: CompiledModel, tol: float = 1e-6):
        self.cm = cm
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("threads", 1)
        h.setOptionValue("presolve", "off")
        h.setOptionValue("solver", "simplex")
        h.setOptionValue("random_seed", 0)
        h.setOptionValue("primal_feasibility_tolerance", min(tol, 1e-7))
        h.setOptionValue("dual_feasibility_tolerance", min(tol, 1e-7))
        lp = highspy.HighsLp()
        lp.num_col_ = cm.n_vars
        lp.num_row_ = cm.n_rows
        lp.col_cost_ = cm.c
        lp.col_lower_ = _finite(cm.lb)
        lp.col_upper_ = _finite(cm.ub)
        lp.row_lower_ = _finite(cm.row_lo)
        lp.row_upper_ = _finite(cm.row_hi)
        A = cm.A.tocsc()
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = A.indptr.astype(np.int32)
        lp.a_matrix_.index_ = A.indices.astype(np.int32)
        lp.a_matrix_.value_ = A.data
        h.passModel(lp)
        self.h = h
        self.cur_lb = cm.lb.copy()
        self.cur_ub = cm.ub.copy()

    def _push_bounds(self, lb: np.ndarray, ub: np.ndarray) -> None:
        changed = np.flatnonzero((lb != self.cur_lb) | (ub != self.cur_ub))
        if changed.size:
            self.h.changeColsBounds(changed.size, changed.astype(np.int32),
                                    _finite(lb[changed]), _finite(ub[changed]))
            self.cur_lb[changed] = lb[changed]
            self.cur_ub[changed] = ub[changed]

    def solve(self, lb: np.ndarray | None = None, ub: np.ndarray | None = None,
              time_limit: float | None = None) -> LPResult:
        if lb is not None:
            if np.any(lb > ub):
                return LPResult(Status.INFEASIBLE)
            self._push_bounds(lb, ub)
        self.h.setOptionValue("time_limit", float(time_limit) if time_limit else _HINF)
        self.h.run()
        ms = self.h.getModelStatus()
        if ms not in _STATUS:
            # warm start went astray; retry once from scratch
            self.h.clearSolver()
            self.h.run()
            ms = self.h.getModelStatus()
        status = _STATUS.get(ms)
        if status is None:
            raise RuntimeError(f"HiGHS returned {self.h.modelStatusToString(ms)}")
        iters = self.h.getInfo().simplex_iteration_count
        if status is not Status.OPTIMAL:
            return LPResult(status, iterations=iters)
        sol = self.h.getSolution()
        x = np.asarray(sol.col_value)
        return LPResult(Status.OPTIMAL, x=x, obj=float(self.cm.c @ x),
                        row_dual=np.asarray(sol.row_dual), col_dual=np.asarray(sol.col_dual),
                        iterations=iters)


class NativeEngine:
    """Same interface as HighsEngine, backed by the dense native simplex."""

    def __init__(self, cm: CompiledModel, tol: float = 1e-6):
        self.cm = cm
        self.tol = tol

    def solve(self, lb=None, ub=None, time_limit=None) -> LPResult:
        from .simplex import simplex_solve
        return simplex_solve(self.cm, tol=self.tol, lb=lb, ub=ub)


ENGINES = {"highs": HighsEngine, "native": NativeEngine}
