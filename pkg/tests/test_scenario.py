import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexagg.admm import ConvergenceTrace, TraceRecord
from flexagg.battery import DEFAULT_INVERTER_CURVE
from flexagg.scenario import (SCHEDULE_COLUMNS, RequestSpec, Scenario, ScenarioError,
                              generate_synthetic, load_request, load_scenario, parse_scenario,
                              read_schedules, read_trace, save_request, save_scenario,
                              scenario_to_toml, write_json, write_schedules, write_series,
                              write_trace)
from flexagg.site import compute_baseline, optimize_site
from flexagg.synthetic import battery_cost, battery_efficiency, synthetic_sites

from conftest import random_site

MINIMAL = """
format_version = 1
[scenario]
horizon = 2
[[sites]]
id = "a"
import_cap = 5.0
export_cap = 5.0
buy_price = [0.1, 0.2]
sell_price = 0.05
curtail_penalty = 0.2
load = [1.0, 1.5]
pv = 0.0
[sites.battery]
capacity = 10.0
power = 3.8
"""


def test_minimal_scenario_fills_defaults():
    sc = parse_scenario(MINIMAL)
    assert sc.horizon == 2 and sc.ptu_hours == 1.0 and sc.request is None
    site = sc.sites[0]
    assert site.site_id == "a"
    assert site.sell_price.tolist() == [0.05, 0.05]
    b = site.battery
    assert b.charge_max == b.discharge_max == 3.8
    assert b.eff_ch == b.eff_dis == 0.98
    assert b.n_segments == 10 and b.lifetime_ptu == 87600.0
    assert (b.cal_s0, b.cal_ssoc, b.cv_factor) == (0.3, 1.7, 0.2)
    assert b.inverter_curve == DEFAULT_INVERTER_CURVE
    assert b.soc_init == 0.0


def test_defaults_table_and_request():
    text = MINIMAL.replace("[[sites]]", """
[defaults]
curtail_penalty = 0.3
[defaults.battery]
cv_factor = 0.1
[request]
peak_caps = true
[request.fr]
"1" = 0.5
[[sites]]""").replace("curtail_penalty = 0.2\n", "")
    sc = parse_scenario(text)
    assert sc.sites[0].curtail_penalty.tolist() == [0.3, 0.3]
    assert sc.sites[0].battery.cv_factor == 0.1
    assert sc.request == RequestSpec({1: 0.5}, True, 10.0)


def test_ptu_hours_converts_lifetime():
    sc = parse_scenario(MINIMAL.replace("horizon = 2", "horizon = 2\nptu_hours = 0.25"))
    assert sc.sites[0].battery.lifetime_ptu == 4 * 87600.0


@pytest.mark.parametrize("edit, needle", [
    (("load = [1.0, 1.5]", "load = [1.0]"), "site 'a': series 'load' has length 1"),
    (("pv = 0.0\n", ""), "site 'a': missing required field 'pv'"),
    (("power = 3.8", "power = 3.8\nwattage = 1"), "site 'a': battery: unknown field"),
    (("capacity = 10.0", "capacity = 10.0\nsoc_init = 12.0"), "site 'a': battery"),
    (("import_cap = 5.0", "import_cap = \"x\""), "site 'a': field 'import_cap' must be a number"),
    (("load = [1.0, 1.5]", "load = [1.0, -1.5]"), "site a: load and PV must be nonnegative"),
    (("format_version = 1", "format_version = 2"), "format_version must be 1"),
    (("horizon = 2", "horizon = = 2"), "parse error"),
    (("buy_price = [0.1, 0.2]", "buy_price = \"p.csv\""), "must read 'file.csv#column'"),
    (('id = "a"', 'id = "a"\ncolor = 1'), "site 'a': unknown field(s) ['color']"),
])
def test_validation_errors_name_the_place(edit, needle):
    with pytest.raises(ScenarioError) as err:
        parse_scenario(MINIMAL.replace(*edit))
    assert needle in str(err.value)


def test_duplicate_ids_and_request_period():
    two = MINIMAL + MINIMAL[MINIMAL.index("[[sites]]"):]
    with pytest.raises(ScenarioError, match="duplicate site id"):
        parse_scenario(two)
    with pytest.raises(ScenarioError, match="period 5 outside horizon"):
        parse_scenario(MINIMAL + '[request.fr]\n"5" = 1.0\n')
    with pytest.raises(ScenarioError, match="not an integer"):
        parse_scenario(MINIMAL + '[request.fr]\n"x" = 1.0\n')


def test_csv_series_references(tmp_path):
    (tmp_path / "prof.csv").write_text("# profiles\nt,load_a,pv_a\n0,1.25,0\n1,2.5,0.5\n")
    (tmp_path / "sc.toml").write_text(MINIMAL.replace("load = [1.0, 1.5]",
                                                      'load = "prof.csv#load_a"')
                                      .replace("pv = 0.0", 'pv = "prof.csv#pv_a"'))
    sc = load_scenario(tmp_path / "sc.toml")
    assert sc.sites[0].load.tolist() == [1.25, 2.5]
    assert sc.sites[0].pv.tolist() == [0.0, 0.5]
    (tmp_path / "bad.toml").write_text(MINIMAL.replace("load = [1.0, 1.5]",
                                                       'load = "prof.csv#nope"'))
    with pytest.raises(ScenarioError, match="column 'nope' not found"):
        load_scenario(tmp_path / "bad.toml")
    with pytest.raises(ScenarioError, match="cannot read scenario"):
        load_scenario(tmp_path / "missing.toml")


def test_round_trip_generated(tmp_path):
    sc = generate_synthetic(5, 3)
    sc.request = RequestSpec({20: 2.5, 3: -1.0}, peak_caps=True, penalty=5.0)
    path = save_scenario(sc, tmp_path / "sc.toml")
    assert load_scenario(path) == sc


@given(st.integers(0, 10**6))
@settings(max_examples=100)
def test_round_trip_random(seed):
    rng = np.random.default_rng(seed)
    sites = [random_site(rng, horizon=4, n_segments=3, site_id=f"s{i}") for i in range(2)]
    sc = Scenario(sites, 4, name=f"r{seed}", seed=seed)
    assert parse_scenario(scenario_to_toml(sc)) == sc


def test_synthetic_ladder_and_determinism():
    one = generate_synthetic(1, 9).sites[0].battery
    assert one.investment_cost == 3000.0 and one.eff_ch == one.eff_dis == 0.98
    assert one.capacity == 10.0 and one.charge_max == 3.8 and one.n_segments == 10
    assert round(battery_cost(100), 2) == 8034.10
    assert battery_cost(100) == pytest.approx(3000 * 1.01 ** 99, rel=1e-12)
    assert battery_efficiency(100) == pytest.approx(0.881, abs=1e-12)
    sites = synthetic_sites(100, 1)
    assert sites[-1].battery.eff_ch == pytest.approx(0.881, abs=1e-12)
    assert generate_synthetic(7, 5) == generate_synthetic(7, 5)
    assert generate_synthetic(7, 5) != generate_synthetic(7, 6)
    assert scenario_to_toml(generate_synthetic(3, 2)) == scenario_to_toml(generate_synthetic(3, 2))
    with pytest.raises(ScenarioError):
        generate_synthetic(0, 1)


def test_synthetic_profile_shape():
    sc = generate_synthetic(20, 4)
    load = np.mean([s.load for s in sc.sites], axis=0)
    pv = np.mean([s.pv for s in sc.sites], axis=0)
    assert 19 <= int(np.argmax(load)) <= 23
    assert 11 <= int(np.argmax(pv)) <= 15
    buy = sc.sites[0].buy_price
    assert buy[23] == buy[0] == buy[12] == 0.08 and buy[13] == buy[22] == 0.16


# -- results ------------------------------------------------------------------------

def test_empty_schedule_csv_is_header_only(tmp_path):
    path = write_schedules([], tmp_path / "s.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# flexagg schedules format_version=1")
    assert lines[1:] == [",".join(SCHEDULE_COLUMNS)]
    assert read_schedules(path) == {}


def test_schedule_csv_exact_values(tmp_path):
    site = random_site(np.random.default_rng(11), horizon=2, site_id="x")
    s = optimize_site(site)
    path = write_schedules([s], tmp_path / "s.csv")
    with open(path) as fh:
        rows = list(csv.DictReader(r for r in fh if not r.startswith("#")))
    assert len(rows) == 2
    for t, r in enumerate(rows):
        assert r["site_id"] == "x" and int(r["t"]) == t
        assert float(r["chi_buy"]) == s.buy[t] and float(r["chi_sell"]) == s.sell[t]
        assert float(r["psi"]) == s.psi[t] and float(r["zeta_flex"]) == s.zeta[t]
        assert float(r["sigma_ch"]) == s.battery.charge[t]
        assert float(r["sigma_dis"]) == s.battery.discharge[t]
        assert float(r["sigma_soc"]) == s.battery.soc[t]
        assert float(r["chi_tot"]) == s.chi_tot[t]


def test_schedule_csv_reproduces_baseline(tmp_path):
    sites = synthetic_sites(3, 8)
    base = compute_baseline(sites)
    back = read_schedules(write_schedules(base.schedules, tmp_path / "s.csv"))
    total = np.zeros(24)
    for s in sites:
        total = total + back[s.site_id]["chi_tot"]
    assert np.array_equal(total, base.series)


def test_trace_and_json_writers(tmp_path):
    tr = ConvergenceTrace()
    tr.append(TraceRecord(0, "Fast", 1e-4, {20: 0.0}, 5.0, 0.0, 12.5, 0.1))
    tr.append(TraceRecord(1, "Soft", 1.5e-4, {20: 7.5e-4}, 0.2, 4.8, 12.6, 0.3))
    path = write_trace(tr, tmp_path / "trace.jsonl")
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == {"format_version", "k", "phase", "rho", "lambda", "r_norm", "s_norm",
                          "total_cost", "wall_s"}
    assert read_trace(path).records == tr.records
    out = json.loads(write_json({"a": 1}, tmp_path / "x.json").read_text())
    assert out == {"format_version": 1, "a": 1}
    series = write_series(tmp_path / "b.csv", {"w_base": [1.0, 2.5]}, "baseline").read_text()
    assert series.splitlines()[1:] == ["t,w_base", "0,1.0", "1,2.5"]
    with pytest.raises(OSError, match="cannot write"):
        write_json({}, tmp_path / "nope" / "x.json")


def test_request_files(tmp_path):
    req = RequestSpec({20: 12.5, 3: -1.0}, peak_caps=True, penalty=4.0)
    assert load_request(save_request(req, tmp_path / "fr.toml")) == req
    (tmp_path / "fr.csv").write_text("t,fr\n20,12.5\n")
    assert load_request(tmp_path / "fr.csv") == RequestSpec({20: 12.5})
    (tmp_path / "bad.csv").write_text("period,amount\n20,12.5\n")
    with pytest.raises(ScenarioError, match="columns 't' and 'fr'"):
        load_request(tmp_path / "bad.csv")
    (tmp_path / "top.toml").write_text('[fr]\n"4" = 1.0\n')
    assert load_request(tmp_path / "top.toml") == RequestSpec({4: 1.0})
