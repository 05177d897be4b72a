"""Distributed fulfilment of a flexibility request by exchange-form ADMM.

Every site solves its own MILP against a shared price lambda_t on the
constrained periods plus a quadratic pull toward the aggregate target; the
coordinator then updates the penalty rho and the prices from the aggregate
residual.  Variants switch on adaptive rho ("fast"), a proximal term on each
site's previous iterate ("pj"), and a second phase in which the price update
gains integral and derivative corrections ("two-step").
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .central import FlexRequest
from .site import Baseline, SiteSchedule, SiteSpec, SolveError, compute_baseline, emit_site
from .solver import MilpOptions, Model, ModelError, Status, add_separable_quadratic

log = logging.getLogger(__name__)

FAST, SOFT = "Fast", "Soft"
CONVERGED, ITER_CAP, TIME_CAP = "Converged", "IterCap", "TimeCap"

# variant -> (adaptive rho, proximal term, soft second phase)
VARIANTS = {
    "regular": (False, False, False),
    "fast": (True, False, False),
    "pj": (False, True, False),
    "fast-pj": (True, True, False),
    "two-step": (True, True, True),
}


@dataclass(frozen=True)
class AdmmParams:
    rho0: float = 1e-4
    gamma: float = 1.5
    tau_incr: float = 1.5
    tau_decr: float = 2.0
    mu: float = 2.0
    k_i: float = 2e-4
    k_d: float = -5e-7
    eps_pri: float = 0.05           # kWh
    eps_dual: float = 0.05          # kWh
    switch_fraction: float = 0.05   # of ||FR||_2
    switch_absolute: float | None = None  # kWh; overrides the fraction when set
    max_iters: int = 100
    max_time: float | None = None   # s
    n_segments: int = 16            # tangents per side of each linearized quadratic
    resolution: float = 1e-3        # innermost tangent spacing [kWh or EUR]
    variant: str = "two-step"
    milp: MilpOptions = field(default_factory=MilpOptions)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.rho0 > 0:
            raise ModelError("rho0 must be positive")
        if not (self.tau_incr > 1 and self.tau_decr > 1):
            raise ModelError("tau_incr and tau_decr must exceed 1")
        if not self.mu > 1:
            raise ModelError("mu must exceed 1")
        if not 0 < self.gamma < 2:
            raise ModelError("gamma must lie in (0, 2)")
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if self.eps_pri < 0 or self.eps_dual < 0 or self.switch_fraction < 0:
            raise ModelError("thresholds must be nonnegative")
        if self.switch_absolute is not None and self.switch_absolute < 0:
            raise ModelError("absolute switch threshold must be nonnegative")
        if self.max_iters < 0:
            raise ModelError("max_iters must be nonnegative")
        if self.n_segments < 1 or not self.resolution > 0:
            raise ModelError("quadratic linearization needs n_segments >= 1, resolution > 0")

    @property
    def adaptive(self) -> bool:
        return VARIANTS[self.variant][0]

    @property
    def proximal(self) -> bool:
        return VARIANTS[self.variant][1]

    @property
    def two_step(self) -> bool:
        return VARIANTS[self.variant][2]

    def switch_threshold(self, fr_norm: float) -> float:
        if self.switch_absolute is not None:
            return self.switch_absolute
        return self.switch_fraction * fr_norm


@dataclass
class AdmmState:
    """Everything the coordinator carries between iterations.

    ``x[i]`` is site i's last primal vector [chi_tot series, zeta series];
    ``lam``, ``r``, ``s`` and ``acc`` are indexed like ``periods``.
    """

    site_ids: list[str]
    periods: tuple[int, ...]
    target: np.ndarray              # W_flex on the constrained periods
    x: list[np.ndarray]
    schedules: list[SiteSchedule]
    lam: np.ndarray
    rho: float
    k: int = 0
    phase: str = FAST
    k_switch: int | None = None
    r: np.ndarray | None = None
    s: np.ndarray | None = None
    r_hist: list[np.ndarray] = field(default_factory=list)
    acc: np.ndarray | None = None   # sum of r from k_switch through k

    @property
    def n_sites(self) -> int:
        return len(self.site_ids)

    @property
    def horizon(self) -> int:
        return len(self.x[0]) // 2

    def chi(self, i: int) -> np.ndarray:
        return self.x[i][:self.horizon]

    def zeta(self, i: int) -> np.ndarray:
        return self.x[i][self.horizon:]

    def aggregate(self) -> np.ndarray:
        """Sum over sites of chi_tot on the constrained periods, in site order."""
        p = list(self.periods)
        total = np.zeros(len(p))
        for i in range(self.n_sites):
            total = total + self.chi(i)[p]
        return total

    @property
    def total_cost(self) -> float:
        return float(sum(s.cost for s in self.schedules))


@dataclass
class TraceRecord:
    k: int
    phase: str
    rho: float
    lam: dict[int, float]
    r_norm: float
    s_norm: float
    total_cost: float
    wall_s: float

    def to_json(self) -> dict:
        return {"k": self.k, "phase": self.phase, "rho": self.rho,
                "lambda": {str(t): v for t, v in self.lam.items()}, "r_norm": self.r_norm,
                "s_norm": self.s_norm, "total_cost": self.total_cost, "wall_s": self.wall_s}

    @classmethod
    def from_json(cls, d: dict) -> "TraceRecord":
        return cls(int(d["k"]), d["phase"], float(d["rho"]),
                   {int(t): float(v) for t, v in d["lambda"].items()}, float(d["r_norm"]),
                   float(d["s_norm"]), float(d["total_cost"]), float(d["wall_s"]))


@dataclass
class ConvergenceTrace:
    records: list[TraceRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.wall_s < self.records[-1].wall_s:
            raise ValueError("trace wall time must be non-decreasing")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i) -> TraceRecord:
        return self.records[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def first_k_below(self, threshold: float) -> int | None:
        """First iteration whose primal residual norm is at most ``threshold``."""
        for r in self.records:
            if r.r_norm <= threshold:
                return r.k
        return None

    @property
    def switch_k(self) -> int | None:
        for r in self.records:
            if r.phase == SOFT:
                return r.k
        return None

    def cost_oscillation(self, last: int = 10) -> float:
        c = self.column("total_cost")[-last:]
        return float(c.max() - c.min()) if c.size else 0.0


@dataclass
class AdmmResult:
    schedules: list[SiteSchedule]
    trace: ConvergenceTrace
    reason: str
    state: AdmmState

    @property
    def total_cost(self) -> float:
        return float(sum(s.cost for s in self.schedules))

    @property
    def iterations(self) -> int:
        return self.state.k


# -- pure update rules --------------------------------------------------------

def residuals(state: AdmmState) -> tuple[np.ndarray, np.ndarray]:
    """Primal r_t = sum_i chi_i,t - W_flex,t and dual s_t = r_t - r_t(previous)."""
    r = state.aggregate() - state.target
    s = r - state.r_hist[-1] if state.r_hist else np.zeros_like(r)
    return r, s


def update_rho(state: AdmmState, params: AdmmParams) -> float:
    rn, sn = float(np.linalg.norm(state.r)), float(np.linalg.norm(state.s))
    if rn > params.mu * sn:
        return state.rho * params.tau_incr
    if sn > params.mu * rn:
        return state.rho / params.tau_decr
    return state.rho


def update_dual_fast(state: AdmmState, params: AdmmParams) -> np.ndarray:
    """lambda + gamma * rho * r, with ``state.rho`` already advanced."""
    return state.lam + params.gamma * state.rho * state.r


def update_dual_soft(state: AdmmState, params: AdmmParams) -> np.ndarray:
    """lambda + gamma*rho0*r + K_i * (r summed since the switch) + K_d * s."""
    return (state.lam + params.gamma * params.rho0 * state.r + params.k_i * state.acc
            + params.k_d * state.s)


# -- subproblems --------------------------------------------------------------

@dataclass(frozen=True)
class SubproblemData:
    """The frozen slice of the coordinator state one site needs."""

    periods: tuple[int, ...]
    lam: np.ndarray
    rho: float
    center: np.ndarray      # W_flex - sum_{j != i} chi_j on the constrained periods
    share: np.ndarray       # W_flex / N
    x_prev: np.ndarray
    proximal: bool
    n_segments: int
    resolution: float


def subproblem_data(state: AdmmState, i: int, params: AdmmParams) -> SubproblemData:
    p = list(state.periods)
    return SubproblemData(state.periods, state.lam.copy(), state.rho,
                          state.target - (state.aggregate() - state.chi(i)[p]),
                          state.target / state.n_sites, state.x[i].copy(), params.proximal,
                          params.n_segments, params.resolution)


def _build(site: SiteSpec, d: SubproblemData):
    model = Model(f"admm-{site.site_id}")
    sv = emit_site(site, model, prefix=f"s{site.site_id}")
    T = site.horizon
    chi_prev, zeta_prev = d.x_prev[:T], d.x_prev[T:]
    quad = dict(resolution=d.resolution, form="segments")
    for j, t in enumerate(d.periods):
        v = int(sv.chi_tot[t])
        model.add_objective(v, float(d.lam[j]))
        model.add_objective_constant(-float(d.lam[j] * d.share[j]))
        add_separable_quadratic(model, v, float(d.center[j]), d.rho / 2.0, d.n_segments,
                                anchor=float(chi_prev[t]), name=f"aug[{t}]", **quad)
    if d.proximal:
        for t in range(T):
            add_separable_quadratic(model, int(sv.chi_tot[t]), float(chi_prev[t]), 0.5,
                                    d.n_segments, name=f"pjchi[{t}]", **quad)
            add_separable_quadratic(model, int(sv.zeta[t]), float(zeta_prev[t]), 0.5,
                                    d.n_segments, name=f"pjzeta[{t}]", **quad)
    return model, sv


def build_subproblem(site: SiteSpec, state: AdmmState, params: AdmmParams) -> Model:
    """Site MILP with price, augmented and (optionally) proximal terms added."""
    i = state.site_ids.index(site.site_id)
    return _build(site, subproblem_data(state, i, params))[0]


def _solve_site(args) -> SiteSchedule:
    site, data, milp, k = args
    model, sv = _build(site, data)
    sol = milp.solve(model)
    if sol.status is not Status.OPTIMAL:
        raise SolveError(f"site {site.site_id} subproblem at iteration {k}", sol.status)
    return sv.schedule(sol.x)


# -- driver -------------------------------------------------------------------

def init_state(sites: Sequence[SiteSpec], request: FlexRequest, baseline: Baseline,
               params: AdmmParams) -> AdmmState:
    ids = [s.site_id for s in sites]
    if len(set(ids)) != len(ids):
        raise ModelError("site ids must be unique")
    p = request.periods
    sched = list(baseline.schedules)
    if [s.site_id for s in sched] != ids:
        raise ModelError("baseline schedules do not match the site list")
    state = AdmmState(ids, p, request.w_flex[list(p)].copy(),
                      [s.primal_vector() for s in sched], sched, np.zeros(len(p)), params.rho0)
    state.r, state.s = residuals(state)
    return state


def _record(state: AdmmState, t0: float) -> TraceRecord:
    return TraceRecord(state.k, state.phase, state.rho,
                       {t: float(v) for t, v in zip(state.periods, state.lam)},
                       float(np.linalg.norm(state.r)), float(np.linalg.norm(state.s)),
                       state.total_cost, time.perf_counter() - t0)


def _update(state: AdmmState, params: AdmmParams, threshold: float) -> None:
    """Phase choice and price/penalty update after iterate k has been evaluated."""
    if (params.two_step and state.phase == FAST
            and np.linalg.norm(state.r) <= threshold):
        state.phase, state.k_switch = SOFT, state.k   # latched: never back to Fast
        state.acc = np.zeros_like(state.r)
    if state.phase == SOFT:
        # rho is left where the fast phase put it; only the price step uses rho0
        state.acc = state.acc + state.r
        state.lam = update_dual_soft(state, params)
    else:
        if params.adaptive:
            state.rho = update_rho(state, params)
        state.lam = update_dual_fast(state, params)


def solve_iteration(state: AdmmState, sites: Sequence[SiteSpec], params: AdmmParams,
                    pool=None) -> AdmmState:
    """One Jacobi round: every site solves against the frozen state, then residuals."""
    tasks = [(site, subproblem_data(state, i, params), params.milp, state.k + 1)
             for i, site in enumerate(sites)]
    if pool is None:
        new = [_solve_site(a) for a in tasks]
    else:
        new = list(pool.map(_solve_site, tasks))
    state.r_hist.append(state.r)
    state.schedules = new
    state.x = [s.primal_vector() for s in new]
    state.k += 1
    state.r, state.s = residuals(state)
    return state


def run(sites: Sequence[SiteSpec], request: FlexRequest, params: AdmmParams = AdmmParams(),
        baseline: Baseline | None = None, workers: int = 1) -> AdmmResult:
    """Iterate until both residual norms are within tolerance or a budget runs out."""
    t0 = time.perf_counter()
    sites = list(sites)
    if baseline is None:
        baseline = compute_baseline(sites, workers=workers, options=params.milp)
    state = init_state(sites, request, baseline, params)
    threshold = params.switch_threshold(request.fr_norm)
    trace = ConvergenceTrace(meta={"variant": params.variant, "n_sites": len(sites),
                                   "periods": list(request.periods),
                                   "fr_norm": request.fr_norm, "switch_threshold": threshold,
                                   "params": _params_meta(params)})
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 and len(sites) > 1 else None
    try:
        while True:
            rn, sn = np.linalg.norm(state.r), np.linalg.norm(state.s)
            lam_used, rho_used = state.lam.copy(), state.rho
            # k=0 is the baseline itself; stopping is tested from the first round on
            done = state.k >= 1 and rn <= params.eps_pri and sn <= params.eps_dual
            if not done:
                _update(state, params, threshold)
            rec = _record(state, t0)
            rec.lam = {t: float(v) for t, v in zip(state.periods, lam_used)}
            rec.rho = rho_used
            trace.append(rec)
            log.info("k=%d %s rho=%.3g |r|=%.4g |s|=%.4g cost=%.6f", rec.k, rec.phase,
                     rec.rho, rec.r_norm, rec.s_norm, rec.total_cost)
            if done:
                reason = CONVERGED
                break
            if state.k >= params.max_iters:
                reason = ITER_CAP
                break
            if params.max_time is not None and time.perf_counter() - t0 >= params.max_time:
                reason = TIME_CAP
                break
            solve_iteration(state, sites, params, pool)
    finally:
        if pool is not None:
            pool.shutdown()
    trace.meta["reason"] = reason
    trace.meta["k_switch"] = state.k_switch
    return AdmmResult(state.schedules, trace, reason, state)


def _params_meta(params: AdmmParams) -> dict:
    d = asdict(replace(params))
    d["milp"] = asdict(params.milp)
    return d

