"""Portfolio-wide optimization of a flexibility request in one monolithic MILP.

The offer problem maximizes deliverable flexibility with a quadratic shortfall
penalty; the management problem fulfils an accepted request at minimum cost.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .site import Baseline, SiteSchedule, SiteSpec, SolveError, compute_baseline, emit_site
from .solver import MilpOptions, Model, ModelError, Status, add_separable_quadratic

log = logging.getLogger(__name__)

DEFAULT_PENALTY = 10.0  # EUR/kWh^2


@dataclass(frozen=True)
class FlexRequest:
    """Requested deviation FR_t from the baseline W_base on the constrained periods.

    FR_t > 0 asks for a consumption decrease (up-regulation, periods in ``up``),
    FR_t < 0 for an increase (``down``).  The target is W_flex = W_base - FR.
    """

    baseline: np.ndarray
    fr: np.ndarray
    up: tuple[int, ...] = ()
    down: tuple[int, ...] = ()
    peak_caps: bool = False
    penalty: float = DEFAULT_PENALTY

    def __post_init__(self):
        for name in ("baseline", "fr"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "up", tuple(sorted(int(t) for t in self.up)))
        object.__setattr__(self, "down", tuple(sorted(int(t) for t in self.down)))
        self.validate()

    @classmethod
    def from_amounts(cls, baseline, amounts: Mapping[int, float], *, peak_caps: bool = False,
                     penalty: float = DEFAULT_PENALTY) -> "FlexRequest":
        """Build from ``{t: FR_t}``; the sign of each amount picks its period set.

        Zero amounts land in the up-regulation set, where they are inert.
        """
        baseline = np.asarray(baseline, dtype=float)
        fr = np.zeros_like(baseline)
        up, down = [], []
        for t, v in amounts.items():
            t = int(t)
            if not 0 <= t < len(baseline):
                raise ModelError(f"request period {t} outside horizon 0..{len(baseline) - 1}")
            fr[t] = float(v)
            (down if v < 0 else up).append(t)
        return cls(baseline, fr, tuple(up), tuple(down), peak_caps, penalty)

    @property
    def horizon(self) -> int:
        return len(self.baseline)

    @property
    def periods(self) -> tuple[int, ...]:
        """Constrained periods T+ and T-, in time order."""
        return tuple(sorted(self.up + self.down))

    @property
    def w_flex(self) -> np.ndarray:
        return self.baseline - self.fr

    @property
    def fr_norm(self) -> float:
        p = list(self.periods)
        return float(np.linalg.norm(self.fr[p])) if p else 0.0

    @property
    def peak_limit(self) -> float:
        """Horizon maximum of the target profile, the cap on aggregate buy and sell."""
        return float(np.max(self.w_flex))

    def validate(self) -> None:
        T = len(self.baseline)
        if len(self.fr) != T:
            raise ModelError(f"request: FR has length {len(self.fr)}, baseline {T}")
        if set(self.up) & set(self.down):
            raise ModelError(f"request: periods {sorted(set(self.up) & set(self.down))} are "
                             "in both the up and down sets")
        for t in self.up + self.down:
            if not 0 <= t < T:
                raise ModelError(f"request: period {t} outside horizon 0..{T - 1}")
        if any(self.fr[t] < 0 for t in self.up):
            raise ModelError("request: up-regulation periods need FR >= 0")
        if any(self.fr[t] > 0 for t in self.down):
            raise ModelError("request: down-regulation periods need FR <= 0")
        free = np.ones(T, dtype=bool)
        free[list(self.up + self.down)] = False
        if np.any(self.fr[free] != 0):
            raise ModelError("request: FR is nonzero outside the constrained periods")
        if self.penalty < 0:
            raise ModelError("request: shortfall penalty must be nonnegative")

    def scaled(self, fraction: float, periods: Sequence[int] | None = None) -> "FlexRequest":
        """Accept ``fraction`` of FR, optionally only on a subset of the periods."""
        if not 0.0 <= fraction <= 1.0:
            raise ModelError(f"acceptance fraction {fraction} outside [0, 1]")
        keep = set(self.periods if periods is None else (int(t) for t in periods))
        if not keep <= set(self.periods):
            raise ModelError(f"accepted periods {sorted(keep - set(self.periods))} were "
                             "not requested")
        fr = np.where([t in keep for t in range(self.horizon)], self.fr * fraction, 0.0)
        return FlexRequest(self.baseline, fr, tuple(t for t in self.up if t in keep),
                           tuple(t for t in self.down if t in keep), self.peak_caps,
                           self.penalty)

    def __eq__(self, other):
        if not isinstance(other, FlexRequest):
            return NotImplemented
        return (np.array_equal(self.baseline, other.baseline)
                and np.array_equal(self.fr, other.fr) and self.up == other.up
                and self.down == other.down and self.peak_caps == other.peak_caps
                and self.penalty == other.penalty)

    __hash__ = None


@dataclass
class FlexOffer:
    """Flexibility the portfolio can deliver on each constrained period."""

    periods: tuple[int, ...]
    requested: np.ndarray
    offered: np.ndarray
    total_cost: float

    @property
    def shortfall(self) -> np.ndarray:
        return self.requested - self.offered

    def to_dict(self) -> dict:
        return {
            "periods": list(self.periods),
            "requested_kwh": [float(v) for v in self.requested],
            "offered_kwh": [float(v) for v in self.offered],
            "shortfall_kwh": [float(v) for v in self.shortfall],
            "total_cost_eur": self.total_cost,
        }


def aggregate_net(schedules: Sequence[SiteSchedule]) -> np.ndarray:
    """Sum of chi_tot over sites, in the given (fixed) order."""
    total = np.zeros_like(schedules[0].chi_tot)
    for s in schedules:
        total = total + s.chi_tot
    return total


def make_offer(request: FlexRequest, schedules: Sequence[SiteSchedule]) -> FlexOffer:
    p = list(request.periods)
    net = aggregate_net(schedules)
    return FlexOffer(tuple(p), request.fr[p].copy(), request.baseline[p] - net[p],
                     float(sum(s.cost for s in schedules)))


def _check_sites(sites: Sequence[SiteSpec], request: FlexRequest) -> None:
    if not sites:
        raise ValueError("no sites given")
    ids = [s.site_id for s in sites]
    if len(set(ids)) != len(ids):
        raise ModelError("site ids must be unique")
    for s in sites:
        if s.horizon != request.horizon:
            raise ModelError(f"site {s.site_id}: horizon {s.horizon} differs from the "
                             f"request's {request.horizon}")


def _portfolio_model(name: str, sites, request: FlexRequest, discrete_actions: bool = False):
    model = Model(name)
    svs = [emit_site(s, model, prefix=f"s{s.site_id}", discrete_actions=discrete_actions)
           for s in sites]
    if request.peak_caps:
        cap = request.peak_limit
        for t in range(request.horizon):
            model.add_constr({int(sv.buy[t]): 1.0 for sv in svs}, "<=", cap, f"peakbuy[{t}]")
            model.add_constr({int(sv.sell[t]): 1.0 for sv in svs}, "<=", cap, f"peaksell[{t}]")
    return model, svs


def _solve(model: Model, svs, what: str, options: MilpOptions) -> list[SiteSchedule]:
    sol = options.solve(model)
    if sol.status is not Status.OPTIMAL:
        raise SolveError(what, sol.status)
    log.info("%s: objective %.6f, %d nodes, %.2fs", what, sol.objective, sol.nodes,
             sol.wall_time)
    return [sv.schedule(sol.x) for sv in svs]


def build_alfo_model(sites: Sequence[SiteSpec], request: FlexRequest, n_segments: int = 16,
                     resolution: float | None = 1e-3, discrete_actions: bool = False):
    """Offer model: site costs plus P_penal * deviation**2 on every constrained period.

    The deviation d_t = sum_i chi_tot - W_flex is one-sided (the aggregate may not
    overshoot the target) and its square is linearized with tangents packed
    around zero.
    """
    _check_sites(sites, request)
    model, svs = _portfolio_model("alfo", sites, request, discrete_actions)
    w = request.w_flex
    imp = sum(s.import_cap for s in sites)
    exp = sum(s.export_cap for s in sites)
    devs = {}
    for t in request.periods:
        lo, hi = -exp - w[t], imp - w[t]
        if t in request.up:
            lo = 0.0
        else:
            hi = 0.0
        if lo > hi:
            raise SolveError(f"offer period {t}: target outside the grid limits",
                             Status.INFEASIBLE)
        d = model.add_var(f"dev[{t}]", lo, hi)
        model.add_constr({**{int(sv.chi_tot[t]): 1.0 for sv in svs}, d: -1.0}, "=", float(w[t]),
                         f"dev[{t}]")
        add_separable_quadratic(model, d, 0.0, request.penalty, n_segments,
                                resolution=resolution, form="segments", name=f"pen[{t}]")
        devs[t] = d
    return model, svs, devs


def solve_alfo(sites: Sequence[SiteSpec], request: FlexRequest,
               options: MilpOptions = MilpOptions(), n_segments: int = 16,
               resolution: float | None = 1e-3) -> tuple[list[SiteSchedule], FlexOffer]:
    """Maximum deliverable flexibility; returns the schedules and the resulting offer."""
    model, svs, _ = build_alfo_model(sites, request, n_segments, resolution)
    schedules = _solve(model, svs, "offer problem", options)
    return schedules, make_offer(request, schedules)


def build_alfm_model(sites: Sequence[SiteSpec], accepted: FlexRequest,
                     discrete_actions: bool = False):
    """Fulfilment model: site costs with the aggregate held at or beyond the target."""
    _check_sites(sites, accepted)
    model, svs = _portfolio_model("alfm", sites, accepted, discrete_actions)
    w = accepted.w_flex
    for t in accepted.periods:
        sense = "<=" if t in accepted.up else ">="
        model.add_constr({int(sv.chi_tot[t]): 1.0 for sv in svs}, sense, float(w[t]),
                         f"target[{t}]")
    return model, svs


def solve_alfm(sites: Sequence[SiteSpec], accepted: FlexRequest,
               options: MilpOptions = MilpOptions()) -> list[SiteSchedule]:
    """Cheapest schedules delivering the accepted request; Infeasible if it is too large."""
    model, svs = build_alfm_model(sites, accepted)
    return _solve(model, svs, "fulfilment problem", options)


@dataclass
class WorkflowOutcome:
    decision: str
    baseline: Baseline
    offer: FlexOffer
    schedules: list[SiteSchedule]
    accepted: FlexRequest | None = None
    alfo_schedules: list[SiteSchedule] = field(default_factory=list, repr=False)

    @property
    def total_cost(self) -> float:
        return float(sum(s.cost for s in self.schedules))


def run_request_workflow(sites: Sequence[SiteSpec], request: FlexRequest,
                         acceptance: str | float = "full", periods: Sequence[int] | None = None,
                         options: MilpOptions = MilpOptions(),
                         baseline: Baseline | None = None) -> WorkflowOutcome:
    """Baseline, then offer; the requester declines, takes it all, or takes a part.

    ``acceptance`` is "decline", "full", or a fraction in (0, 1]; a fraction (and/or a
    period subset) scales FR and re-plans with the fulfilment problem, while full
    acceptance reuses the offer schedules without another solve.
    """
    if baseline is None:
        baseline = compute_baseline(list(sites), workers=1, options=options)
    alfo_sched, offer = solve_alfo(sites, request, options)
    if acceptance == "decline":
        return WorkflowOutcome("decline", baseline, offer, baseline.schedules,
                               alfo_schedules=alfo_sched)
    if acceptance == "full" and periods is None:
        return WorkflowOutcome("full", baseline, offer, alfo_sched, accepted=request,
                               alfo_schedules=alfo_sched)
    fraction = 1.0 if acceptance == "full" else float(acceptance)
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"acceptance must be 'decline', 'full' or a fraction in (0, 1], "
                         f"got {acceptance!r}")
    accepted = request.scaled(fraction, periods)
    schedules = solve_alfm(sites, accepted, options)
    return WorkflowOutcome("partial", baseline, offer, schedules, accepted=accepted,
                           alfo_schedules=alfo_sched)
