"""Per-site prosumer MILP: energy balance, grid caps, PV curtailment and battery costs."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .battery import BatterySchedule, BatterySpec, BatteryVars, emit_battery_constraints
from .solver import MilpOptions, Model, ModelError, Status

log = logging.getLogger(__name__)


class SolveError(RuntimeError):
    """A solve ended without an optimal solution."""

    def __init__(self, what: str, status: Status):
        super().__init__(f"{what}: solver status {status.value}")
        self.what = what
        self.status = status


@dataclass(frozen=True)
class SiteSpec:
    site_id: str
    import_cap: float
    export_cap: float
    buy_price: np.ndarray
    sell_price: np.ndarray
    curtail_penalty: np.ndarray
    load: np.ndarray
    pv: np.ndarray
    battery: BatterySpec

    def __post_init__(self):
        for name in ("buy_price", "sell_price", "curtail_penalty", "load", "pv"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def horizon(self) -> int:
        return len(self.load)

    def validate(self) -> None:
        if self.import_cap < 0 or self.export_cap < 0:
            raise ModelError(f"site {self.site_id}: import/export caps must be nonnegative")
        T = self.horizon
        for name in ("buy_price", "sell_price", "curtail_penalty", "load", "pv"):
            if len(getattr(self, name)) != T:
                raise ModelError(f"site {self.site_id}: series {name!r} has length "
                                 f"{len(getattr(self, name))}, expected {T}")
        if np.any(self.load < 0) or np.any(self.pv < 0):
            raise ModelError(f"site {self.site_id}: load and PV must be nonnegative")
        if np.any(self.curtail_penalty < 0):
            raise ModelError(f"site {self.site_id}: curtailment penalty must be nonnegative")

    def __eq__(self, other):
        if not isinstance(other, SiteSpec):
            return NotImplemented
        arrays = ("buy_price", "sell_price", "curtail_penalty", "load", "pv")
        return (self.site_id == other.site_id and self.import_cap == other.import_cap
                and self.export_cap == other.export_cap and self.battery == other.battery
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))

    __hash__ = None


@dataclass
class SiteVars:
    site: SiteSpec
    buy: np.ndarray
    sell: np.ndarray
    d_buy: np.ndarray
    d_sell: np.ndarray
    psi: np.ndarray
    zeta: np.ndarray
    chi_tot: np.ndarray
    battery: BatteryVars

    def cost_terms(self) -> dict[int, float]:
        """Linear objective of the site: sum_t P_buy*buy - P_sell*sell + zeta."""
        s = self.site
        terms: dict[int, float] = {}
        for t in range(s.horizon):
            terms[int(self.buy[t])] = float(s.buy_price[t])
            terms[int(self.sell[t])] = -float(s.sell_price[t])
            terms[int(self.zeta[t])] = 1.0
        return terms

    def schedule(self, x: np.ndarray) -> "SiteSchedule":
        g = lambda h: np.asarray(x)[h].copy()  # noqa: E731
        return SiteSchedule(
            site_id=self.site.site_id, buy=g(self.buy), sell=g(self.sell), d_buy=g(self.d_buy),
            d_sell=g(self.d_sell), psi=g(self.psi), zeta=g(self.zeta), chi_tot=g(self.chi_tot),
            battery=self.battery.schedule(x), buy_price=self.site.buy_price,
            sell_price=self.site.sell_price,
        )


@dataclass
class SiteSchedule:
    site_id: str
    buy: np.ndarray
    sell: np.ndarray
    d_buy: np.ndarray
    d_sell: np.ndarray
    psi: np.ndarray
    zeta: np.ndarray
    chi_tot: np.ndarray
    battery: BatterySchedule
    buy_price: np.ndarray = field(repr=False, default=None)
    sell_price: np.ndarray = field(repr=False, default=None)

    @property
    def cost(self) -> float:
        """Site cost f(x): energy purchases minus sales plus flexibility cost."""
        return float(np.sum(self.buy_price * self.buy - self.sell_price * self.sell + self.zeta))

    def primal_vector(self) -> np.ndarray:
        """x_i = [chi_tot series, zeta series]."""
        return np.concatenate([self.chi_tot, self.zeta])


def emit_site(site: SiteSpec, model: Model, prefix: str | None = None, *,
              objective: bool = True, discrete_actions: bool = False) -> SiteVars:
    """Add all site rows (balance, caps, exclusivity, flexibility cost, battery block)."""
    site.validate()
    p = prefix if prefix is not None else f"s{site.site_id}"
    T = site.horizon
    bat = emit_battery_constraints(site.battery, T, model, prefix=f"{p}.bat",
                                   discrete_actions=discrete_actions)
    spec = site.battery
    zeta_hi = (site.curtail_penalty * site.pv
               + max(spec.segment_cost) * float(model.ub[int(bat.dc_discharge[0])])
               + spec.calendar_rate * (spec.cal_s0 + spec.cal_ssoc) + 1.0)
    buy = np.array([model.add_var(f"{p}.buy[{t}]", 0, site.import_cap) for t in range(T)])
    sell = np.array([model.add_var(f"{p}.sell[{t}]", 0, site.export_cap) for t in range(T)])
    d_buy = np.array([model.add_var(f"{p}.dbuy[{t}]", binary=True) for t in range(T)])
    d_sell = np.array([model.add_var(f"{p}.dsell[{t}]", binary=True) for t in range(T)])
    psi = np.array([model.add_var(f"{p}.psi[{t}]", 0, site.pv[t]) for t in range(T)])
    zeta = np.array([model.add_var(f"{p}.zeta[{t}]", 0, zeta_hi[t]) for t in range(T)])
    chi = np.array([model.add_var(f"{p}.chitot[{t}]", -site.export_cap, site.import_cap)
                    for t in range(T)])
    for t in range(T):
        model.add_constr({buy[t]: 1.0, bat.discharge[t]: 1.0, psi[t]: 1.0, sell[t]: -1.0,
                          bat.charge[t]: -1.0}, "=", float(site.load[t]), f"{p}.balance[{t}]")
        model.add_constr({buy[t]: 1.0, d_buy[t]: -site.import_cap}, "<=", 0.0, f"{p}.imp[{t}]")
        model.add_constr({sell[t]: 1.0, d_sell[t]: -site.export_cap}, "<=", 0.0, f"{p}.exp[{t}]")
        model.add_constr({d_buy[t]: 1.0, d_sell[t]: 1.0}, "<=", 1.0, f"{p}.excl[{t}]")
        model.add_constr({chi[t]: 1.0, buy[t]: -1.0, sell[t]: 1.0}, "=", 0.0, f"{p}.chitot[{t}]")
        # zeta = P_gen*(W_gen - psi) + cycle + calendar
        terms = {zeta[t]: 1.0, psi[t]: float(site.curtail_penalty[t])}
        for j, c in bat.cycle_terms(t).items():
            terms[j] = terms.get(j, 0.0) - c
        cal_terms, cal_const = bat.calendar_terms(t)
        for j, c in cal_terms.items():
            terms[j] = terms.get(j, 0.0) - c
        model.add_constr(terms, "=", float(site.curtail_penalty[t] * site.pv[t]) + cal_const,
                         f"{p}.zeta[{t}]")
    sv = SiteVars(site, buy, sell, d_buy, d_sell, psi, zeta, chi, bat)
    if objective:
        for j, c in sv.cost_terms().items():
            model.add_objective(j, c)
    return sv


def build_site_model(site: SiteSpec, horizon: int | None = None, **kw) -> tuple[Model, SiteVars]:
    if horizon is not None and horizon != site.horizon:
        raise ModelError(f"site {site.site_id}: horizon {horizon} does not match series "
                         f"length {site.horizon}")
    model = Model(f"site-{site.site_id}")
    sv = emit_site(site, model, **kw)
    return model, sv


def optimize_site(site: SiteSpec, horizon: int | None = None,
                  options: MilpOptions = MilpOptions()) -> SiteSchedule:
    model, sv = build_site_model(site, horizon)
    sol = options.solve(model)
    if sol.status is not Status.OPTIMAL:
        raise SolveError(f"site {site.site_id}", sol.status)
    log.debug("site %s: cost %.6f, %d nodes, %.3fs", site.site_id, sol.objective, sol.nodes,
              sol.wall_time)
    return sv.schedule(sol.x)


@dataclass
class Baseline:
    """Independent site optima and their aggregated net load W_base."""

    schedules: list[SiteSchedule]

    @property
    def series(self) -> np.ndarray:
        total = np.zeros_like(self.schedules[0].chi_tot)
        for s in self.schedules:  # fixed site order keeps the sum deterministic
            total = total + s.chi_tot
        return total

    @property
    def total_cost(self) -> float:
        return float(sum(s.cost for s in self.schedules))


def _optimize(args):
    site, options = args
    return optimize_site(site, None, options)


def map_sites(fn, items, workers: int = 1):
    """Apply ``fn`` to each item, in a process pool when ``workers > 1``; order kept."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def compute_baseline(sites: list[SiteSpec], horizon: int | None = None, workers: int = 1,
                     options: MilpOptions = MilpOptions()) -> Baseline:
    if not sites:
        raise ValueError("no sites given")
    T = horizon if horizon is not None else sites[0].horizon
    for s in sites:
        if s.horizon != T:
            raise ModelError(f"site {s.site_id}: horizon {s.horizon} differs from {T}")
    schedules = map_sites(_optimize, [(s, options) for s in sites], workers)
    return Baseline(schedules)
