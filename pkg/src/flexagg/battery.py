"""Degradation-aware stationary battery: constraint emission and post-hoc cost evaluation.

Energy flows, all in kWh per PTU:

* ``charge``/``discharge`` are AC-side (grid bus) quantities.
* The inverter converts them to DC: ``dc_charge = charge * a_inv(charge)`` and
  ``dc_discharge = discharge / a_inv(discharge)``, realized with one SOS2 set
  per direction and period over the breakpoints of the efficiency curve.
* Cell efficiencies act on DC energy:
  ``soc[t] = soc[t-1] + eff_ch * dc_charge - dc_discharge / eff_dis``.
* The DC flows are split over virtual depth segments whose discharge is priced
  at an increasing marginal cycle cost.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .solver import Model, ModelError

HOURS_PER_YEAR = 8760.0

DEFAULT_INVERTER_CURVE: tuple[tuple[float, float], ...] = (
    (0.0, 0.70), (0.10, 0.90), (0.35, 0.96), (1.00, 0.98),
)


def cycle_cost_ladder(investment_cost: float, capacity: float, n_segments: int) -> list[float]:
    """Marginal discharge cost per segment from a cycles-to-failure proxy.

    L(j) = 20000 * (j/J)**-1.1, C[j] = C_bat / (O_max * L(j)), j = 1..J.
    """
    j = np.arange(1, n_segments + 1)
    life = 20000.0 * (j / n_segments) ** -1.1
    return list(investment_cost / (capacity * life))


@dataclass(frozen=True)
class BatterySpec:
    capacity: float                      # O_max [kWh]
    charge_max: float                    # Q_ch [kWh/PTU]
    discharge_max: float                 # Q_dis [kWh/PTU]
    soc_min: float = 0.0                 # O_min [kWh]
    eff_ch: float = 1.0                  # A_bat_ch
    eff_dis: float = 1.0                 # A_bat_dis
    segment_capacity: tuple[float, ...] = ()
    segment_cost: tuple[float, ...] = ()
    investment_cost: float = 0.0         # C_bat [EUR]
    lifetime_ptu: float = 87600.0        # S_LT [PTU]
    cal_s0: float = 0.0
    cal_ssoc: float = 0.0
    cv_factor: float = 0.0               # W_bat
    inverter_curve: tuple[tuple[float, float], ...] = DEFAULT_INVERTER_CURVE
    inverter_rated: float | None = None  # [kWh/PTU]; defaults to max(Q_ch, Q_dis)
    soc_init: float | None = None        # sigma_soc_0; defaults to O_min

    def __post_init__(self):
        if self.soc_init is None:
            object.__setattr__(self, "soc_init", self.soc_min)
        if self.inverter_rated is None:
            object.__setattr__(self, "inverter_rated", max(self.charge_max, self.discharge_max))
        object.__setattr__(self, "segment_capacity", tuple(float(v) for v in self.segment_capacity))
        object.__setattr__(self, "segment_cost", tuple(float(v) for v in self.segment_cost))
        object.__setattr__(self, "inverter_curve",
                           tuple((float(p), float(e)) for p, e in self.inverter_curve))
        self.validate()

    @classmethod
    def build(cls, capacity: float, power: float, *, n_segments: int = 10,
              investment_cost: float = 3000.0, efficiency: float = 0.98,
              lifetime_years: float = 10.0, ptu_hours: float = 1.0, **kw) -> "BatterySpec":
        """Spec with the default equal segment split and convex cost ladder."""
        soc_min = kw.pop("soc_min", 0.0)
        seg = kw.pop("segment_capacity", None) or [(capacity - soc_min) / n_segments] * n_segments
        cost = kw.pop("segment_cost", None) or cycle_cost_ladder(investment_cost, capacity, n_segments)
        kw.setdefault("cal_s0", 0.3)
        kw.setdefault("cal_ssoc", 1.7)
        kw.setdefault("cv_factor", 0.2)
        return cls(capacity=capacity, charge_max=power, discharge_max=power, soc_min=soc_min,
                   eff_ch=efficiency, eff_dis=efficiency, segment_capacity=tuple(seg),
                   segment_cost=tuple(cost), investment_cost=investment_cost,
                   lifetime_ptu=lifetime_years * HOURS_PER_YEAR / ptu_hours, **kw)

    @property
    def n_segments(self) -> int:
        return len(self.segment_capacity)

    def validate(self) -> None:
        if not 0 <= self.soc_min < self.capacity:
            raise ModelError("battery needs 0 <= O_min < O_max")
        if self.charge_max < 0 or self.discharge_max < 0:
            raise ModelError("charge/discharge limits must be nonnegative")
        for name in ("eff_ch", "eff_dis"):
            if not 0 < getattr(self, name) <= 1:
                raise ModelError(f"{name} must lie in (0, 1]")
        if self.n_segments == 0 or len(self.segment_cost) != self.n_segments:
            raise ModelError("segment capacities and costs must be non-empty and equally long")
        if abs(sum(self.segment_capacity) - (self.capacity - self.soc_min)) > 1e-6:
            raise ModelError("segment capacities must sum to O_max - O_min")
        if any(c < 0 for c in self.segment_capacity):
            raise ModelError("segment capacities must be nonnegative")
        if any(b <= a for a, b in zip(self.segment_cost, self.segment_cost[1:])):
            raise ModelError("segment costs must be strictly increasing")
        pw = [p for p, _ in self.inverter_curve]
        if len(pw) < 2 or pw[0] != 0.0 or any(b <= a for a, b in zip(pw, pw[1:])):
            raise ModelError("inverter curve needs strictly increasing power starting at 0")
        if pw[-1] < 1.0:
            raise ModelError("inverter curve must cover rated power (fraction 1.0)")
        if any(not 0 < e <= 1 for _, e in self.inverter_curve):
            raise ModelError("inverter efficiencies must lie in (0, 1]")
        if self.lifetime_ptu <= 0:
            raise ModelError("lifetime S_LT must be positive")
        if not self.soc_min - 1e-9 <= self.soc_init <= self.capacity + 1e-9:
            raise ModelError(f"initial SOC {self.soc_init} outside [{self.soc_min}, {self.capacity}]")
        if self.cv_factor < 0:
            raise ModelError("CV factor W_bat must be nonnegative")

    def initial_segments(self) -> np.ndarray:
        """Initial energy per segment; the deepest (costliest) segments fill first."""
        left = self.soc_init - self.soc_min
        out = np.zeros(self.n_segments)
        for j in range(self.n_segments - 1, -1, -1):
            out[j] = min(left, self.segment_capacity[j])
            left -= out[j]
        return out

    @property
    def calendar_rate(self) -> float:
        """EUR per PTU per unit of (S0 + S_SOC * normalized SOC)."""
        return self.investment_cost / self.lifetime_ptu


def inverter_efficiency(power: float, curve=DEFAULT_INVERTER_CURVE, rated: float = 1.0) -> float:
    """Efficiency at ``power`` by linear interpolation of the breakpoint table."""
    if power < 0 or power > rated * (1 + 1e-12):
        raise ValueError(f"power {power} outside [0, rated={rated}]")
    pw, eff = zip(*curve)
    return float(np.interp(power / rated, pw, eff))


def cv_charge_limit(soc_prev: float, spec: BatterySpec) -> float:
    return (spec.capacity - soc_prev) / (1.0 + spec.cv_factor)


def cv_discharge_limit(soc_prev: float, spec: BatterySpec) -> float:
    return (soc_prev - spec.soc_min) / (1.0 + spec.cv_factor)


@dataclass
class BatterySchedule:
    """Per-period dispatch. 2-D arrays are indexed [t, j]."""

    charge: np.ndarray
    discharge: np.ndarray
    soc: np.ndarray
    dc_charge: np.ndarray
    dc_discharge: np.ndarray
    seg_charge: np.ndarray
    seg_discharge: np.ndarray
    seg_soc: np.ndarray
    mode: np.ndarray
    inv_charge_w: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    inv_discharge_w: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    soc_init: float = 0.0

    @property
    def horizon(self) -> int:
        return len(self.soc)


def cycle_cost(schedule: BatterySchedule, spec: BatterySpec) -> float:
    """Sum over periods and segments of C[j] * segment discharge."""
    seg = np.atleast_2d(schedule.seg_discharge)
    return float(np.sum(seg @ np.asarray(spec.segment_cost)))


def calendar_cost_series(soc: np.ndarray, soc_init: float, spec: BatterySpec) -> np.ndarray:
    if spec.lifetime_ptu <= 0:
        raise ValueError("S_LT must be positive")
    soc = np.asarray(soc, dtype=float)
    prev = np.concatenate([[soc_init], soc[:-1]])
    norm = (soc + prev) / (2.0 * spec.capacity)
    return spec.calendar_rate * (spec.cal_s0 + spec.cal_ssoc * norm)


def calendar_cost(schedule: BatterySchedule, spec: BatterySpec) -> float:
    """Calendar ageing over the horizon, SOC normalized by capacity."""
    return float(calendar_cost_series(schedule.soc, schedule.soc_init, spec).sum())


@dataclass
class BatteryVars:
    """Variable handles of one emitted battery block (arrays of ints)."""

    spec: BatterySpec
    charge: np.ndarray
    discharge: np.ndarray
    soc: np.ndarray
    dc_charge: np.ndarray
    dc_discharge: np.ndarray
    seg_charge: np.ndarray
    seg_discharge: np.ndarray
    seg_soc: np.ndarray
    mode: np.ndarray
    inv_charge_w: np.ndarray
    inv_discharge_w: np.ndarray

    def cycle_terms(self, t: int) -> dict[int, float]:
        return {int(v): c for v, c in zip(self.seg_discharge[t], self.spec.segment_cost)}

    def calendar_terms(self, t: int) -> tuple[dict[int, float], float]:
        """Linear terms and constant of the period-t calendar cost."""
        s = self.spec
        k = s.calendar_rate * s.cal_ssoc / (2.0 * s.capacity)
        terms = {int(self.soc[t]): k}
        const = s.calendar_rate * s.cal_s0
        if t == 0:
            const += k * s.soc_init
        else:
            terms[int(self.soc[t - 1])] = terms.get(int(self.soc[t - 1]), 0.0) + k
        return terms, const

    def schedule(self, x: np.ndarray) -> BatterySchedule:
        g = lambda h: np.asarray(x)[h].copy()  # noqa: E731
        return BatterySchedule(
            charge=g(self.charge), discharge=g(self.discharge), soc=g(self.soc),
            dc_charge=g(self.dc_charge), dc_discharge=g(self.dc_discharge),
            seg_charge=g(self.seg_charge), seg_discharge=g(self.seg_discharge),
            seg_soc=g(self.seg_soc), mode=g(self.mode), inv_charge_w=g(self.inv_charge_w),
            inv_discharge_w=g(self.inv_discharge_w), soc_init=self.spec.soc_init,
        )


def emit_battery_constraints(spec: BatterySpec, horizon: int, model: Model, prefix: str = "bat",
                             *, objective: bool = False,
                             discrete_actions: bool = False) -> BatteryVars:
    """Add the battery block for ``horizon`` periods to ``model``.

    With ``objective=True`` cycle and calendar costs are priced directly in the
    objective (standalone use); otherwise callers pick them up through
    ``cycle_terms``/``calendar_terms``.  ``discrete_actions`` restricts each
    period to idle, full charge or full discharge.
    """
    if horizon <= 0:
        raise ModelError("battery horizon must be at least one period")
    spec.validate()
    T, J = horizon, spec.n_segments
    R = spec.inverter_rated
    pw = np.array([p for p, _ in spec.inverter_curve])
    eff = np.array([e for _, e in spec.inverter_curve])
    ch_gain = pw * eff                            # DC in per unit AC, at breakpoints
    dis_draw = np.where(pw > 0, pw / eff, 0.0)    # DC out per unit AC, at breakpoints
    seg0 = spec.initial_segments()
    K = len(pw)

    v = lambda name, lo=0.0, hi=np.inf, binary=False: model.add_var(  # noqa: E731
        f"{prefix}.{name}", lo, hi, binary=binary)
    charge = np.array([v(f"ch[{t}]", 0, spec.charge_max) for t in range(T)])
    discharge = np.array([v(f"dis[{t}]", 0, spec.discharge_max) for t in range(T)])
    soc = np.array([v(f"soc[{t}]", spec.soc_min, spec.capacity) for t in range(T)])
    dc_ch = np.array([v(f"dcch[{t}]", 0, R * ch_gain[-1]) for t in range(T)])
    dc_dis = np.array([v(f"dcdis[{t}]", 0, R * dis_draw.max()) for t in range(T)])
    mode = np.array([v(f"mode[{t}]", binary=True) for t in range(T)])
    seg_ch = np.array([[v(f"segch[{t},{j}]", 0, spec.segment_capacity[j]) for j in range(J)]
                       for t in range(T)])
    seg_dis = np.array([[v(f"segdis[{t},{j}]", 0, spec.segment_capacity[j]) for j in range(J)]
                        for t in range(T)])
    seg_soc = np.array([[v(f"segsoc[{t},{j}]", 0, spec.segment_capacity[j]) for j in range(J)]
                        for t in range(T)])
    w_ch = np.array([[v(f"wch[{t},{k}]", 0, 1) for k in range(K)] for t in range(T)])
    w_dis = np.array([[v(f"wdis[{t},{k}]", 0, 1) for k in range(K)] for t in range(T)])

    c = lambda terms, sense, rhs, name: model.add_constr(terms, sense, rhs, f"{prefix}.{name}")  # noqa: E731
    for t in range(T):
        # SOC recursion on DC energies
        terms = {soc[t]: 1.0, dc_ch[t]: -spec.eff_ch, dc_dis[t]: 1.0 / spec.eff_dis}
        if t == 0:
            c(terms, "=", spec.soc_init, f"soc[{t}]")
        else:
            terms[soc[t - 1]] = -1.0
            c(terms, "=", 0.0, f"soc[{t}]")
        # segmented SOC
        for j in range(J):
            terms = {seg_soc[t, j]: 1.0, seg_ch[t, j]: -spec.eff_ch,
                     seg_dis[t, j]: 1.0 / spec.eff_dis}
            if t == 0:
                c(terms, "=", seg0[j], f"segsoc[{t},{j}]")
            else:
                terms[seg_soc[t - 1, j]] = -1.0
                c(terms, "=", 0.0, f"segsoc[{t},{j}]")
        c({**{int(s): 1.0 for s in seg_ch[t]}, dc_ch[t]: -1.0}, "=", 0.0, f"segch_sum[{t}]")
        c({**{int(s): 1.0 for s in seg_dis[t]}, dc_dis[t]: -1.0}, "=", 0.0, f"segdis_sum[{t}]")
        # charge/discharge mode exclusivity
        c({charge[t]: 1.0, mode[t]: -spec.charge_max}, "<=", 0.0, f"chmax[{t}]")
        c({discharge[t]: 1.0, mode[t]: spec.discharge_max}, "<=", spec.discharge_max,
          f"dismax[{t}]")
        # constant-voltage limits on the previous-period SOC
        k = 1.0 + spec.cv_factor
        if t == 0:
            c({charge[t]: 1.0}, "<=", (spec.capacity - spec.soc_init) / k, f"cvch[{t}]")
            c({discharge[t]: 1.0}, "<=", (spec.soc_init - spec.soc_min) / k, f"cvdis[{t}]")
        else:
            c({charge[t]: 1.0, soc[t - 1]: 1.0 / k}, "<=", spec.capacity / k, f"cvch[{t}]")
            c({discharge[t]: 1.0, soc[t - 1]: -1.0 / k}, "<=", -spec.soc_min / k, f"cvdis[{t}]")
        # inverter: SOS2 interpolation of AC power and DC energy over the breakpoints
        for w, ac, dc, dc_per_ac, tag in ((w_ch[t], charge[t], dc_ch[t], ch_gain, "ch"),
                                          (w_dis[t], discharge[t], dc_dis[t], dis_draw, "dis")):
            c({int(x): 1.0 for x in w}, "=", 1.0, f"inv{tag}_conv[{t}]")
            c({**{int(x): R * p for x, p in zip(w, pw) if p}, ac: -1.0}, "=", 0.0,
              f"inv{tag}_ac[{t}]")
            c({**{int(x): R * g for x, g in zip(w, dc_per_ac) if g}, dc: -1.0}, "=", 0.0,
              f"inv{tag}_dc[{t}]")
            if K > 2:  # two breakpoints make a plain linear map
                model.add_sos2(w, pw)
        if discrete_actions:
            u_ch = v(f"uch[{t}]", binary=True)
            u_dis = v(f"udis[{t}]", binary=True)
            c({charge[t]: 1.0, u_ch: -spec.charge_max}, "=", 0.0, f"uch[{t}]")
            c({discharge[t]: 1.0, u_dis: -spec.discharge_max}, "=", 0.0, f"udis[{t}]")

    bv = BatteryVars(spec, charge, discharge, soc, dc_ch, dc_dis, seg_ch, seg_dis, seg_soc,
                     mode, w_ch, w_dis)
    if objective:
        for t in range(T):
            for j, coef in bv.cycle_terms(t).items():
                model.add_objective(j, coef)
            terms, const = bv.calendar_terms(t)
            for j, coef in terms.items():
                model.add_objective(j, coef)
            model.add_objective_constant(const)
    return bv
