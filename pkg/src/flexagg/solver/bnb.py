"""LP/MILP entry points: ``solve_lp`` and best-bound branch-and-bound ``solve_milp``."""
from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .highs_engine import ENGINES
from .model import Model, Solution, Status

FEAS_TOL = 1e-6
INT_TOL = 1e-5
GAP_TOL = 1e-4


BACKENDS = ("highs", "native", "highs-mip")


def _engine(backend: str):
    if backend not in BACKENDS:
        raise ValueError(f"unknown solver backend {backend!r}; choose from {BACKENDS}")
    return ENGINES["highs" if backend == "highs-mip" else backend]


def solve_lp(model: Model, tol: float = FEAS_TOL, backend: str = "highs",
             relax: bool = False) -> Solution:
    """Solve the LP; integrality flags and SOS2 sets are rejected unless ``relax``."""
    if not relax and (model.n_binaries or model.sos2_sets):
        raise ValueError("model has integer structure; call solve_milp or pass relax=True")
    t0 = time.perf_counter()
    cm = model.compile()
    res = _engine(backend)(cm, tol).solve()
    wall = time.perf_counter() - t0
    if res.status is not Status.OPTIMAL:
        return Solution(res.status, wall_time=wall, iterations=res.iterations)
    return Solution(Status.OPTIMAL, x=res.x, objective=res.obj + cm.obj_constant,
                    duals=res.row_dual, reduced_costs=res.col_dual, wall_time=wall,
                    best_bound=res.obj + cm.obj_constant, iterations=res.iterations)


def sos2_violation(w: np.ndarray, tol: float = INT_TOL) -> float:
    """Weight lying outside the heaviest adjacent pair; 0 when the set is SOS2-feasible."""
    nz = np.flatnonzero(w > tol)
    if nz.size == 0 or nz[-1] - nz[0] <= 1:
        return 0.0
    pair = w[:-1] + w[1:]
    return float(w.sum() - pair.max())


def _ref_position(w: np.ndarray, ref: np.ndarray) -> float:
    total = w.sum()
    return float(np.dot(ref, w) / total) if total > 0 else float(ref[0])


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    depth: int = field(compare=False)
    lb: np.ndarray = field(compare=False, repr=False)
    ub: np.ndarray = field(compare=False, repr=False)
    x: np.ndarray = field(compare=False, repr=False)


class _Search:
    def __init__(self, model: Model, gap_tol, node_limit, time_limit, tol, int_tol, backend):
        self.cm = model.compile()
        self.engine = _engine(backend)(self.cm, tol)
        self.gap_tol = gap_tol
        self.node_limit = node_limit
        self.time_limit = time_limit
        self.int_tol = int_tol
        self.t0 = time.perf_counter()
        self.nodes = 0
        self.lp_iters = 0
        self.inc_x: np.ndarray | None = None
        self.inc_obj = np.inf
        self.seq = itertools.count()
        self.tol = tol
        self.A_csc = self.cm.A.tocsc()

    # -- helpers -------------------------------------------------------
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def remaining(self) -> float | None:
        if self.time_limit is None:
            return None
        return max(self.time_limit - self.elapsed(), 1e-3)

    def cutoff(self) -> float:
        if not np.isfinite(self.inc_obj):
            return np.inf
        scale = max(1.0, abs(self.inc_obj + self.cm.obj_constant))
        return self.inc_obj - self.gap_tol * scale

    def lp(self, lb, ub):
        self.nodes += 1
        res = self.engine.solve(lb, ub, self.remaining())
        self.lp_iters += res.iterations
        return res

    def fractional_binary(self, x) -> int:
        b = self.cm.binaries
        if b.size == 0:
            return -1
        f = np.abs(x[b] - np.round(x[b]))
        k = int(np.argmax(f))
        return int(b[k]) if f[k] > self.int_tol else -1

    def violated_set(self, x) -> int:
        best, which = 0.0, -1
        for s, members in enumerate(self.cm.sos2):
            v = sos2_violation(x[members], self.int_tol)
            if v > best:
                best, which = v, s
        return which

    def is_integral(self, x) -> bool:
        return self.fractional_binary(x) < 0 and self.violated_set(x) < 0

    def offer(self, x, obj) -> None:
        if obj < self.inc_obj:
            self.inc_obj, self.inc_x = obj, x.copy()

    # -- primal heuristics --------------------------------------------
    def round_binaries(self, x, lb, ub) -> np.ndarray:
        """Round fractional binaries one at a time, keeping every touched row satisfied.

        The nearer integer is tried first.  A binary that fits neither way keeps
        its nearest rounding, so the result may still be infeasible.
        """
        cm, A = self.cm, self.A_csc
        x = x.copy()
        ax = cm.A @ x
        tol = 10 * self.tol
        for j in cm.binaries:
            v = x[j]
            if abs(v - round(v)) <= self.int_tol:
                x[j] = round(v)
                continue
            rows = A.indices[A.indptr[j]:A.indptr[j + 1]]
            coef = A.data[A.indptr[j]:A.indptr[j + 1]]
            near = float(round(v))
            choice = near
            for cand in (near, 1.0 - near):
                if cand < lb[j] or cand > ub[j]:
                    continue
                act = ax[rows] + coef * (cand - v)
                if np.all(act >= cm.row_lo[rows] - tol) and np.all(act <= cm.row_hi[rows] + tol):
                    choice = cand
                    break
            ax[rows] += coef * (choice - v)
            x[j] = choice
        return x

    def try_rounded(self, x, lb, ub) -> bool:
        """Offer the rounded LP point as incumbent when it is feasible as is."""
        if self.violated_set(x) >= 0:
            return False
        xr = self.round_binaries(x, lb, ub)
        ax = self.cm.A @ xr
        tol = 10 * self.tol
        if np.all(ax >= self.cm.row_lo - tol) and np.all(ax <= self.cm.row_hi + tol):
            self.offer(xr, float(self.cm.c @ xr))
            return True
        return False

    def round_and_fix(self, lb, ub, x) -> None:
        lb, ub = lb.copy(), ub.copy()
        b = self.cm.binaries
        if b.size:
            r = np.clip(self.round_binaries(x, lb, ub)[b], lb[b], ub[b])
            lb[b] = r
            ub[b] = r
        for members, ref in zip(self.cm.sos2, self.cm.sos2_ref):
            w = x[members]
            if sos2_violation(w, self.int_tol) == 0.0:
                continue
            pos = _ref_position(w, ref)
            k = min(max(int(np.searchsorted(ref, pos, side="right")) - 1, 0), len(w) - 2)
            keep = np.zeros(len(w), dtype=bool)
            keep[k:k + 2] = True
            ub[members[~keep]] = 0.0
        res = self.lp(lb, ub)
        if res.status is Status.OPTIMAL and self.is_integral(res.x):
            self.offer(res.x, res.obj)

    def seed(self, start: np.ndarray) -> None:
        """Fix the integer part of ``start``, re-solve, and keep the result if integral."""
        cm = self.cm
        lb, ub = cm.lb.copy(), cm.ub.copy()
        b = cm.binaries
        lb[b] = ub[b] = np.clip(np.round(start[b]), cm.lb[b], cm.ub[b])
        for members in cm.sos2:
            off = np.ones(len(members), dtype=bool)
            nz = np.flatnonzero(start[members] > self.int_tol)
            k = min(int(nz[0]), len(members) - 2) if nz.size else 0
            off[k:k + 2] = False
            ub[members[off]] = 0.0
        res = self.lp(lb, ub)
        if res.status is Status.OPTIMAL and self.is_integral(res.x):
            self.offer(res.x, res.obj)

    # -- branching -----------------------------------------------------
    def children(self, node: _Node):
        j = self.fractional_binary(node.x)
        if j >= 0:
            down_ub = node.ub.copy()
            down_ub[j] = 0.0
            up_lb = node.lb.copy()
            up_lb[j] = 1.0
            return [(node.lb, down_ub), (up_lb, node.ub)]
        s = self.violated_set(node.x)
        members, ref = self.cm.sos2[s], self.cm.sos2_ref[s]
        w = node.x[members]
        nz = np.flatnonzero(w > self.int_tol)
        first, last = int(nz[0]), int(nz[-1])
        # split at the member whose reference value is nearest the weighted position
        r = int(np.argmin(np.abs(ref - _ref_position(w, ref))))
        r = min(max(r, first + 1), last - 1)
        left_ub = node.ub.copy()
        left_ub[members[r + 1:]] = 0.0
        right_ub = node.ub.copy()
        right_ub[members[:r]] = 0.0
        return [(node.lb, left_ub), (node.lb, right_ub)]

    def run(self, heuristic_every: int) -> Solution:
        cm = self.cm
        root = self.lp(cm.lb.copy(), cm.ub.copy())
        if root.status is not Status.OPTIMAL:
            return self.finish(root.status, best_bound=None)
        if self.is_integral(root.x):
            self.offer(root.x, root.obj)
            return self.finish(Status.OPTIMAL, best_bound=root.obj)
        self.try_rounded(root.x, cm.lb, cm.ub)
        heap: list[_Node] = []
        heapq.heappush(heap, _Node(root.obj, next(self.seq), 0, cm.lb.copy(), cm.ub.copy(), root.x))
        if heuristic_every:
            self.round_and_fix(cm.lb, cm.ub, root.x)
        expanded = 0
        while heap:
            if heap[0].bound >= self.cutoff():
                heap.clear()
                break
            if self.node_limit is not None and self.nodes >= self.node_limit:
                return self.finish(Status.ITER_LIMIT, best_bound=heap[0].bound)
            if self.time_limit is not None and self.elapsed() >= self.time_limit:
                return self.finish(Status.TIME_LIMIT, best_bound=heap[0].bound)
            node = heapq.heappop(heap)
            expanded += 1
            for lb, ub in self.children(node):
                res = self.lp(lb, ub)
                if res.status is Status.TIME_LIMIT:
                    heapq.heappush(heap, node)
                    return self.finish(Status.TIME_LIMIT, best_bound=heap[0].bound)
                if res.status is not Status.OPTIMAL or res.obj >= self.cutoff():
                    continue
                if self.is_integral(res.x):
                    self.offer(res.x, res.obj)
                    continue
                if self.try_rounded(res.x, lb, ub) and res.obj >= self.cutoff():
                    continue
                child = _Node(res.obj, next(self.seq), node.depth + 1, lb, ub, res.x)
                heapq.heappush(heap, child)
                if heuristic_every and (not np.isfinite(self.inc_obj)
                                        or expanded % heuristic_every == 0):
                    self.round_and_fix(lb, ub, res.x)
        best = self.inc_obj if np.isfinite(self.inc_obj) else None
        status = Status.OPTIMAL if best is not None else Status.INFEASIBLE
        return self.finish(status, best_bound=best)

    def finish(self, status: Status, best_bound) -> Solution:
        const = self.cm.obj_constant
        info = {"lp_iterations": self.lp_iters}
        bb = None if best_bound is None else best_bound + const
        if self.inc_x is None:
            if status is Status.OPTIMAL:
                status = Status.INFEASIBLE
            return Solution(status, nodes=self.nodes, wall_time=self.elapsed(), best_bound=bb,
                            iterations=self.lp_iters, info=info)
        if status is Status.OPTIMAL:
            bb = min(bb, self.inc_obj + const) if bb is not None else self.inc_obj + const
        return Solution(status, x=self.inc_x, objective=self.inc_obj + const, nodes=self.nodes,
                        wall_time=self.elapsed(), best_bound=bb, iterations=self.lp_iters,
                        info=info)


def solve_milp(model: Model, gap_tol: float = GAP_TOL, node_limit: int | None = None,
               time_limit: float | None = None, tol: float = FEAS_TOL,
               int_tol: float = INT_TOL, backend: str = "highs",
               heuristic_every: int = 10, start: np.ndarray | None = None) -> Solution:
    """Best-bound branch-and-bound over LP relaxations.

    Fractional binaries are branched first (most fractional); SOS2 sets are
    split afterwards by zeroing the members right or left of a split point.
    On node/time limits the best incumbent is returned with IterLimit/TimeLimit.

    ``backend`` picks the LP engine under this search ("highs" or "native"), or
    "highs-mip" to hand the whole tree search to HiGHS' branch-and-cut.
    ``start`` is an optional point whose integer part seeds the incumbent.
    """
    _engine(backend)
    if backend == "highs-mip":
        from .highs_mip import solve_highs_mip
        return solve_highs_mip(model.compile(), gap_tol, node_limit, time_limit, tol, int_tol,
                               start=start)
    search = _Search(model, gap_tol, node_limit, time_limit, tol, int_tol, backend)
    if start is not None:
        search.seed(np.asarray(start, dtype=float))
    return search.run(heuristic_every)


@dataclass(frozen=True)
class MilpOptions:
    """Bundle of solve_milp keyword arguments that travels with higher-level calls."""

    gap_tol: float = GAP_TOL
    node_limit: int | None = None
    time_limit: float | None = None
    backend: str = "highs-mip"

    def solve(self, model: Model, start: np.ndarray | None = None) -> Solution:
        return solve_milp(model, gap_tol=self.gap_tol, node_limit=self.node_limit,
                          time_limit=self.time_limit, backend=self.backend, start=start)
