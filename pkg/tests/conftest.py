import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flexagg.battery import BatterySpec
from flexagg.site import SiteSpec, optimize_site

settings.register_profile("repo", deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def random_site(rng: np.random.Generator, horizon: int = 3, n_segments: int = 2,
                site_id: str = "A", power: float | None = None, **over) -> SiteSpec:
    """Small random prosumer with sell price below buy price."""
    cap = float(rng.uniform(2.0, 8.0))
    q = float(power if power is not None else rng.uniform(0.5, 2.5))
    seg = [cap / n_segments] * n_segments
    cost = np.sort(rng.uniform(0.005, 0.1, n_segments))
    cost = cost + 1e-3 * np.arange(n_segments)          # strictly increasing
    soc0 = float(rng.uniform(0.0, cap))
    bat = BatterySpec(capacity=cap, charge_max=q, discharge_max=q, soc_min=0.0,
                      eff_ch=float(rng.uniform(0.9, 1.0)), eff_dis=float(rng.uniform(0.9, 1.0)),
                      segment_capacity=tuple(seg), segment_cost=tuple(cost),
                      investment_cost=float(rng.uniform(1000, 4000)), lifetime_ptu=87600.0,
                      cal_s0=0.3, cal_ssoc=1.7, cv_factor=float(rng.uniform(0.0, 0.3)),
                      soc_init=soc0)
    buy = rng.uniform(0.05, 0.35, horizon)
    kw = dict(site_id=site_id, import_cap=float(rng.uniform(3, 8)),
              export_cap=float(rng.uniform(3, 8)), buy_price=buy,
              sell_price=buy * rng.uniform(0.2, 0.9, horizon),
              curtail_penalty=rng.uniform(0.0, 0.3, horizon),
              load=rng.uniform(0.0, 2.0, horizon),
              pv=np.where(rng.random(horizon) < 0.5, rng.uniform(0.0, 3.0, horizon), 0.0),
              battery=bat)
    kw.update(over)
    return SiteSpec(**kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@functools.lru_cache(maxsize=None)
def solved_site(seed: int):
    """Random 4-period site and its optimal schedule, cached across property tests."""
    rng = np.random.default_rng(seed)
    site = random_site(rng, horizon=4, n_segments=int(rng.integers(1, 4)))
    return site, optimize_site(site)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
