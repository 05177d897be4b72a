import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexagg.battery import (DEFAULT_INVERTER_CURVE, BatterySchedule, BatterySpec,
                             calendar_cost, calendar_cost_series, cv_charge_limit,
                             cv_discharge_limit, cycle_cost, cycle_cost_ladder,
                             emit_battery_constraints, inverter_efficiency)
from flexagg.solver import MilpOptions, Model, ModelError, Status, solve_milp, sos2_violation

from conftest import random_site, solved_site
from oracles import battery_trajectory, segment_cost

FLAT = ((0.0, 1.0), (1.0, 1.0))


def lossless(**kw):
    base = dict(capacity=10.0, charge_max=5.0, discharge_max=5.0, segment_capacity=(5.0, 5.0),
                segment_cost=(0.01, 0.05), inverter_curve=FLAT)
    base.update(kw)
    return BatterySpec(**base)


def fix(model, handle, value):
    model.add_constr({int(handle): 1.0}, "=", float(value))


def empty_schedule(T=1, J=2, soc=None, soc_init=0.0):
    z = np.zeros(T)
    zz = np.zeros((T, J))
    return BatterySchedule(charge=z, discharge=z, soc=z if soc is None else np.asarray(soc, float),
                           dc_charge=z, dc_discharge=z, seg_charge=zz, seg_discharge=zz,
                           seg_soc=zz, mode=z, soc_init=soc_init)


# -- constraint block --------------------------------------------------------

def test_lossless_recursion():
    spec = lossless(soc_init=5.0)
    m = Model()
    bv = emit_battery_constraints(spec, 2, m)
    fix(m, bv.charge[0], 0.0)
    fix(m, bv.discharge[0], 0.0)
    fix(m, bv.charge[1], 1.0)
    sol = solve_milp(m)
    assert sol.status is Status.OPTIMAL
    assert sol.value(bv.soc[1]) == pytest.approx(6.0, abs=1e-9)


def test_cv_limits_at_full_and_partial_soc():
    spec = lossless(cv_factor=0.2, soc_init=10.0)
    assert cv_charge_limit(10.0, spec) == 0.0
    assert cv_charge_limit(4.0, spec) == pytest.approx(5.0, abs=1e-12)
    assert cv_discharge_limit(4.0, spec) == pytest.approx(4.0 / 1.2, abs=1e-12)
    for soc0, expect in ((10.0, 0.0), (4.0, 5.0)):
        m = Model()
        bv = emit_battery_constraints(lossless(cv_factor=0.2, soc_init=soc0, charge_max=8.0,
                                               discharge_max=8.0), 1, m)
        m.add_objective(int(bv.charge[0]), -1.0)
        sol = solve_milp(m)
        assert sol.value(bv.charge[0]) == pytest.approx(expect, abs=1e-7)


def test_cv_limit_uses_previous_period_soc():
    m = Model()
    bv = emit_battery_constraints(lossless(cv_factor=0.2, charge_max=8.0, discharge_max=8.0), 2, m)
    fix(m, bv.charge[0], 4.0)
    m.add_objective(int(bv.charge[1]), -1.0)
    sol = solve_milp(m)
    assert sol.value(bv.charge[1]) == pytest.approx((10.0 - 4.0) / 1.2, abs=1e-7)


def test_emit_errors():
    with pytest.raises(ModelError):
        emit_battery_constraints(lossless(), 0, Model())
    with pytest.raises(ModelError):
        lossless(soc_init=11.0)
    with pytest.raises(ModelError):
        lossless(segment_cost=(0.05, 0.01))
    with pytest.raises(ModelError):
        lossless(segment_capacity=(5.0, 4.0))
    with pytest.raises(ModelError):
        lossless(inverter_curve=((0.0, 0.9), (0.5, 0.95)))


def test_mode_binary_and_sos2_counts():
    m = Model()
    emit_battery_constraints(BatterySpec.build(10.0, 5.0), 24, m)
    assert m.n_binaries == 24
    assert len(m.sos2_sets) == 48
    m = Model()
    emit_battery_constraints(lossless(), 24, m)
    assert len(m.sos2_sets) == 0  # two breakpoints: plain linear map


def test_default_build():
    spec = BatterySpec.build(10.0, 5.0)
    assert spec.soc_init == spec.soc_min == 0.0
    assert spec.segment_capacity == (1.0,) * 10
    assert spec.lifetime_ptu == 87600.0
    assert spec.inverter_rated == 5.0
    assert list(spec.segment_cost) == cycle_cost_ladder(3000.0, 10.0, 10)
    assert np.all(np.diff(spec.segment_cost) > 0)
    assert spec.segment_cost[-1] == pytest.approx(3000.0 / (10.0 * 20000.0))


def test_initial_segments_fill_deepest_first():
    spec = lossless(soc_init=6.0)
    assert spec.initial_segments().tolist() == [1.0, 5.0]


# -- cost evaluators ---------------------------------------------------------

def test_cycle_cost_examples():
    spec = lossless()
    assert cycle_cost(empty_schedule(), spec) == 0.0
    sched = empty_schedule()
    sched.seg_discharge = np.array([[2.0, 1.0]])
    assert cycle_cost(sched, spec) == pytest.approx(0.07, abs=1e-12)


def test_fill_order_drains_cheap_segment_first():
    # fill both 5 kWh segments half way, then take 3 kWh out: 2.5 cheap + 0.5 deep
    spec = lossless(segment_capacity=(5.0, 5.0))
    m = Model()
    bv = emit_battery_constraints(spec, 2, m, objective=True)
    fix(m, bv.seg_charge[0, 0], 2.5)
    fix(m, bv.seg_charge[0, 1], 2.5)
    fix(m, bv.dc_discharge[1], 3.0)
    sched = bv.schedule(solve_milp(m).x)
    assert sched.seg_soc[0].tolist() == pytest.approx([2.5, 2.5], abs=1e-9)
    assert sched.seg_discharge[1].tolist() == pytest.approx([2.5, 0.5], abs=1e-9)
    assert cycle_cost(sched, spec) == pytest.approx(2.5 * 0.01 + 0.5 * 0.05, abs=1e-12)
    # initial state 1 + 5 kWh (deepest fills first): the remaining 2 kWh come from the deep one
    spec = lossless(segment_capacity=(5.0, 5.0), soc_init=6.0)
    m = Model()
    bv = emit_battery_constraints(spec, 1, m, objective=True)
    fix(m, bv.dc_discharge[0], 3.0)
    sched = bv.schedule(solve_milp(m).x)
    assert sched.seg_discharge[0].tolist() == pytest.approx([1.0, 2.0], abs=1e-9)
    spec2 = lossless(segment_capacity=(5.0, 5.0), soc_init=8.0)
    m = Model()
    bv = emit_battery_constraints(spec2, 1, m, objective=True)
    fix(m, bv.dc_discharge[0], 3.0)
    sched = bv.schedule(solve_milp(m).x)
    assert sched.seg_discharge[0].tolist() == pytest.approx([3.0, 0.0], abs=1e-9)
    assert cycle_cost(sched, spec2) == pytest.approx(
        segment_cost(spec2, np.zeros(1), np.array([3.0])), abs=1e-12)


def test_calendar_cost_examples():
    spec = lossless(investment_cost=3000.0, lifetime_ptu=87600.0, cal_s0=0.3, cal_ssoc=0.0)
    assert calendar_cost(empty_schedule(), spec) == pytest.approx(3000 / 87600 * 0.3, abs=1e-15)
    assert round(calendar_cost(empty_schedule(), spec), 6) == 0.010274
    spec = lossless(investment_cost=3000.0, lifetime_ptu=87600.0, cal_s0=0.3, cal_ssoc=1.7,
                    soc_init=5.0)
    half = empty_schedule(soc=[5.0], soc_init=5.0)
    assert calendar_cost(half, spec) == pytest.approx(3000 / 87600 * 1.15, abs=1e-15)
    assert round(calendar_cost(half, spec), 6) == 0.039384
    full = empty_schedule(soc=[10.0], soc_init=10.0)
    assert calendar_cost(full, spec) > calendar_cost(half, spec)


def test_calendar_cost_rejects_zero_lifetime():
    spec = lossless()
    object.__setattr__(spec, "lifetime_ptu", 0.0)
    with pytest.raises(ValueError):
        calendar_cost_series(np.zeros(1), 0.0, spec)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=6), st.floats(0.0, 10.0))
@settings(max_examples=100)
def test_calendar_cost_monotone_in_soc(soc, soc0):
    spec = lossless(investment_cost=3000.0, cal_s0=0.3, cal_ssoc=1.7, soc_init=soc0)
    soc = np.array(soc)
    lo = calendar_cost_series(soc, soc0, spec).sum()
    hi = calendar_cost_series(np.minimum(soc + 1.0, 11.0), soc0, spec).sum()
    assert hi > lo


def test_inverter_efficiency_examples():
    for p, e in DEFAULT_INVERTER_CURVE:
        assert inverter_efficiency(p * 4.0, rated=4.0) == e
    assert inverter_efficiency(0.05 * 4.0, rated=4.0) == pytest.approx(0.80, abs=1e-12)
    assert inverter_efficiency(4.0, rated=4.0) == 0.98
    with pytest.raises(ValueError):
        inverter_efficiency(4.1, rated=4.0)
    with pytest.raises(ValueError):
        inverter_efficiency(-0.1, rated=4.0)


@pytest.mark.parametrize("frac", [p for p, _ in DEFAULT_INVERTER_CURVE])
def test_sos2_realizes_curve_at_breakpoints(frac):
    spec = BatterySpec.build(20.0, 4.0, efficiency=1.0, cv_factor=0.0, soc_init=10.0)
    m = Model()
    bv = emit_battery_constraints(spec, 1, m)
    fix(m, bv.charge[0], frac * 4.0)
    sol = solve_milp(m)
    eff = inverter_efficiency(frac * 4.0, rated=4.0)
    assert sol.value(bv.dc_charge[0]) == pytest.approx(frac * 4.0 * eff, abs=1e-9)
    m = Model()
    bv = emit_battery_constraints(spec, 1, m)
    fix(m, bv.discharge[0], frac * 4.0)
    sol = solve_milp(m)
    expect = frac * 4.0 / eff if frac > 0 else 0.0
    assert sol.value(bv.dc_discharge[0]) == pytest.approx(expect, abs=1e-9)


# -- properties of every optimal site solution ----------------------------------

seeds = st.integers(0, 10**6)


@given(seeds)
@settings(max_examples=100)
def test_soc_telescoping(seed):
    site, s = solved_site(seed)
    b, spec = s.battery, site.battery
    signed = np.sum(spec.eff_ch * b.dc_charge - b.dc_discharge / spec.eff_dis)
    assert b.soc[-1] - spec.soc_init == pytest.approx(signed, abs=1e-6)
    assert np.all(b.soc >= spec.soc_min - 1e-7) and np.all(b.soc <= spec.capacity + 1e-7)


@given(seeds)
@settings(max_examples=100)
def test_mode_exclusivity(seed):
    _, s = solved_site(seed)
    assert np.all(np.abs(s.battery.charge * s.battery.discharge) <= 1e-9)


@given(seeds)
@settings(max_examples=100)
def test_segment_consistency(seed):
    site, s = solved_site(seed)
    b = s.battery
    assert np.allclose(b.seg_soc.sum(axis=1), b.soc - site.battery.soc_min, atol=1e-6)
    assert np.allclose(b.seg_charge.sum(axis=1), b.dc_charge, atol=1e-6)
    assert np.allclose(b.seg_discharge.sum(axis=1), b.dc_discharge, atol=1e-6)
    assert np.all(b.seg_soc <= np.array(site.battery.segment_capacity) + 1e-7)


@given(seeds)
@settings(max_examples=100)
def test_sos2_adjacency(seed):
    _, s = solved_site(seed)
    for w in list(s.battery.inv_charge_w) + list(s.battery.inv_discharge_w):
        assert sos2_violation(np.asarray(w)) == 0.0
        assert w.sum() == pytest.approx(1.0, abs=1e-7)


@given(seeds)
@settings(max_examples=100)
def test_cycle_cost_matches_solver_pricing(seed):
    site, s = solved_site(seed)
    b, spec = s.battery, site.battery
    zeta = site.curtail_penalty * (site.pv - s.psi)
    zeta = zeta + b.seg_discharge @ np.array(spec.segment_cost)
    zeta = zeta + calendar_cost_series(b.soc, spec.soc_init, spec)
    assert np.allclose(s.zeta, zeta, atol=1e-6)
    assert cycle_cost(b, spec) + calendar_cost(b, spec) == pytest.approx(
        float(np.sum(s.zeta - site.curtail_penalty * (site.pv - s.psi))), abs=1e-6)


@given(st.integers(0, 10**6))
@settings(max_examples=100)
def test_fill_order_two_segments(seed):
    """Single-period discharge from a random 2-segment state against the split oracle."""
    rng = np.random.default_rng(seed)
    caps = rng.uniform(1.0, 5.0, 2)
    cost = np.sort(rng.uniform(0.005, 0.1, 2)) + np.array([0.0, 1e-3])
    spec = BatterySpec(capacity=float(caps.sum()), charge_max=5.0, discharge_max=5.0,
                       eff_ch=float(rng.uniform(0.9, 1.0)), eff_dis=float(rng.uniform(0.9, 1.0)),
                       segment_capacity=tuple(caps), segment_cost=tuple(cost),
                       inverter_curve=FLAT, soc_init=float(rng.uniform(0.0, caps.sum())))
    d = float(rng.uniform(0.0, 1.0)) * min(spec.soc_init * spec.eff_dis, spec.discharge_max)
    m = Model()
    bv = emit_battery_constraints(spec, 1, m, objective=True)
    fix(m, bv.dc_discharge[0], d)
    sched = bv.schedule(solve_milp(m).x)
    # enumerate which segment is drained first; the cheap-first split must win
    init = spec.initial_segments()
    splits = []
    for first in (0, 1):
        take = np.zeros(2)
        take[first] = min(d, init[first] * spec.eff_dis)
        take[1 - first] = d - take[first]
        if take[1 - first] <= init[1 - first] * spec.eff_dis + 1e-9:
            splits.append((float(take @ cost), take))
    best_cost, best = min(splits, key=lambda p: p[0])
    assert cycle_cost(sched, spec) == pytest.approx(best_cost, abs=1e-9)
    assert sched.seg_discharge[0] == pytest.approx(best, abs=1e-7)
    if sched.seg_discharge[0, 1] > 1e-7:
        assert sched.seg_soc[0, 0] <= 1e-7


@given(st.integers(0, 10**6))
@settings(max_examples=100)
def test_segment_split_matches_lp_oracle(seed):
    """Fixed multi-period actions: the model's cycle cost equals the cheapest segment split."""
    rng = np.random.default_rng(seed)
    site = random_site(rng, horizon=3, n_segments=int(rng.integers(2, 4)))
    spec = site.battery
    actions = tuple(int(a) for a in rng.integers(-1, 2, 3))
    tr = battery_trajectory(spec, actions)
    if tr is None:
        return
    m = Model()
    bv = emit_battery_constraints(spec, 3, m, objective=True)
    for t in range(3):
        fix(m, bv.charge[t], tr["ch"][t])
        fix(m, bv.discharge[t], tr["dis"][t])
    sol = MilpOptions().solve(m)
    assert sol.status is Status.OPTIMAL
    sched = bv.schedule(sol.x)
    assert np.allclose(sched.soc, tr["soc"], atol=1e-6)
    assert cycle_cost(sched, spec) == pytest.approx(
        segment_cost(spec, tr["dc_ch"], tr["dc_dis"]), abs=1e-7)
