"""Seeded synthetic prosumer portfolios: midday PV, evening load peak, two-period tariff."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .battery import BatterySpec
from .site import SiteSpec


@dataclass(frozen=True)
class SyntheticTemplate:
    horizon: int = 24
    ptu_hours: float = 1.0
    capacity: float = 10.0           # kWh
    power: float = 3.8               # kW
    base_cost: float = 3000.0        # EUR, first site
    cost_step: float = 0.01          # relative increase per site
    base_efficiency: float = 0.98
    efficiency_step: float = 0.001   # absolute decrease per site
    n_segments: int = 10
    cv_factor: float = 0.2
    lifetime_years: float = 10.0
    cal_s0: float = 0.3
    cal_ssoc: float = 1.7
    peak_price: float = 0.16
    valley_price: float = 0.08
    sell_price: float = 0.05
    curtail_penalty: float = 0.20
    valley_start: int = 23           # hour; valley runs 23:00 -> 13:00
    valley_end: int = 13
    import_cap: float = 10.0
    export_cap: float = 10.0


def battery_cost(i: int, tpl: SyntheticTemplate = SyntheticTemplate()) -> float:
    """Investment cost of the i-th site (1-based)."""
    return tpl.base_cost * (1.0 + tpl.cost_step) ** (i - 1)


def battery_efficiency(i: int, tpl: SyntheticTemplate = SyntheticTemplate()) -> float:
    return tpl.base_efficiency - tpl.efficiency_step * (i - 1)


def tariff(tpl: SyntheticTemplate = SyntheticTemplate()) -> np.ndarray:
    hours = (np.arange(tpl.horizon) * tpl.ptu_hours) % 24
    valley = (hours >= tpl.valley_start) | (hours < tpl.valley_end)
    return np.where(valley, tpl.valley_price, tpl.peak_price)


def _profiles(rng: np.random.Generator, tpl: SyntheticTemplate):
    hours = (np.arange(tpl.horizon) + 0.5) * tpl.ptu_hours % 24
    base = rng.uniform(0.25, 0.5)
    morning = rng.uniform(0.3, 0.8) * np.exp(-0.5 * ((hours - 7.5) / 1.2) ** 2)
    evening = rng.uniform(1.2, 2.4) * np.exp(-0.5 * ((hours - 21.5) / 2.0) ** 2)
    noise = rng.uniform(0.9, 1.1, tpl.horizon)
    load = (base + morning + evening) * noise * tpl.ptu_hours
    kwp = rng.uniform(2.0, 6.0)
    sun = np.clip(np.cos((hours - 13.5) / 7.0 * np.pi / 2.0), 0.0, None) ** 1.5
    pv = kwp * 0.8 * sun * rng.uniform(0.85, 1.0, tpl.horizon) * tpl.ptu_hours
    pv[pv < 1e-3] = 0.0
    return np.round(load, 4), np.round(pv, 4)


def synthetic_sites(n_sites: int, seed: int,
                    tpl: SyntheticTemplate = SyntheticTemplate()) -> list[SiteSpec]:
    if n_sites < 1:
        raise ValueError("n_sites must be at least 1")
    rng = np.random.default_rng(seed)
    buy = tariff(tpl)
    sites = []
    for i in range(1, n_sites + 1):
        load, pv = _profiles(rng, tpl)
        bat = BatterySpec.build(
            tpl.capacity, tpl.power * tpl.ptu_hours, n_segments=tpl.n_segments,
            investment_cost=battery_cost(i, tpl), efficiency=battery_efficiency(i, tpl),
            lifetime_years=tpl.lifetime_years, ptu_hours=tpl.ptu_hours,
            cal_s0=tpl.cal_s0, cal_ssoc=tpl.cal_ssoc, cv_factor=tpl.cv_factor,
        )
        sites.append(SiteSpec(
            site_id=f"{i:03d}", import_cap=tpl.import_cap, export_cap=tpl.export_cap,
            buy_price=buy, sell_price=np.full(tpl.horizon, tpl.sell_price),
            curtail_penalty=np.full(tpl.horizon, tpl.curtail_penalty), load=load, pv=pv,
            battery=bat,
        ))
    return sites
