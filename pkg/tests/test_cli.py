import json

import pytest

from flexagg.cli import EXIT_INFEASIBLE, EXIT_LIMIT, EXIT_OK, EXIT_USAGE, main
from flexagg.scenario import RequestSpec, read_schedules, read_trace, save_request


@pytest.fixture(scope="module")
def scenario(tmp_path_factory):
    path = tmp_path_factory.mktemp("sc") / "sc.toml"
    assert main(["synth", "--sites", "2", "--seed", "3", "--out", str(path)]) == EXIT_OK
    return path


def fr_file(tmp_path, amounts):
    return str(save_request(RequestSpec(amounts), tmp_path / "fr.toml"))


def test_synth_is_byte_identical(tmp_path, scenario):
    again = tmp_path / "again.toml"
    assert main(["synth", "--sites", "2", "--seed", "3", "--out", str(again)]) == EXIT_OK
    assert again.read_bytes() == scenario.read_bytes()


def test_usage_errors(tmp_path, scenario):
    with pytest.raises(SystemExit) as err:
        main(["synth", "--sites", "0", "--out", str(tmp_path / "x.toml")])
    assert err.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main(["baseline", "--scenario", str(scenario), "--out", str(tmp_path), "--threads", "0"])
    assert err.value.code == EXIT_USAGE
    assert main(["baseline", "--scenario", str(tmp_path / "missing.toml"),
                 "--out", str(tmp_path)]) == EXIT_USAGE
    # no --fr and no [request] table in the scenario
    assert main(["alfm", "--scenario", str(scenario), "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["admm", "--scenario", str(scenario), "--out", str(tmp_path),
                 "--fr", fr_file(tmp_path, {20: 1.0}), "--gamma", "2.5"]) == EXIT_USAGE


def test_baseline_threads_do_not_change_outputs(tmp_path, scenario):
    for n in (1, 2):
        assert main(["baseline", "--scenario", str(scenario), "--out", str(tmp_path / f"t{n}"),
                     "--threads", str(n)]) == EXIT_OK
    for name in ("schedules.csv", "baseline.csv"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t2" / name).read_bytes()
    assert len(read_schedules(tmp_path / "t1" / "schedules.csv")) == 2


def test_alfo_writes_offer(tmp_path, scenario):
    out = tmp_path / "o"
    assert main(["alfo", "--scenario", str(scenario), "--out", str(out),
                 "--fr", fr_file(tmp_path, {20: 1000.0})]) == EXIT_OK
    offer = json.loads((out / "offer.json").read_text())
    assert offer["kind"] == "offer" and offer["format_version"] == 1
    assert (out / "schedules.csv").exists() and (out / "baseline.csv").exists()


def test_alfm_oversized_request_is_infeasible(tmp_path, scenario):
    assert main(["alfm", "--scenario", str(scenario), "--out", str(tmp_path),
                 "--fr", fr_file(tmp_path, {20: 1000.0})]) == EXIT_INFEASIBLE


def test_compare_zero_request(tmp_path, scenario):
    out = tmp_path / "c"
    assert main(["compare", "--scenario", str(scenario), "--out", str(out),
                 "--fr", fr_file(tmp_path, {20: 0.0})]) == EXIT_OK
    rep = json.loads((out / "compare.json").read_text())
    assert rep["alfm"]["total_cost_eur"] == pytest.approx(rep["baseline_cost_eur"], abs=1e-6)
    assert rep["admm"]["total_cost_eur"] == pytest.approx(rep["baseline_cost_eur"], abs=1e-6)
    assert rep["admm"]["reason"] == "Converged" and rep["admm"]["iterations"] <= 1
    assert rep["gap_pct"] == pytest.approx(0.0, abs=1e-6)
    lines = (out / "cost_over_time.csv").read_text().splitlines()
    assert lines[1] == "k,wall_s,admm_cost,r_norm,alfm_cost,alfm_wall_s"


def test_admm_iteration_cap_exits_4(tmp_path, scenario):
    out = tmp_path / "a"
    assert main(["admm", "--scenario", str(scenario), "--out", str(out),
                 "--fr", fr_file(tmp_path, {20: 1.0}), "--max-iters", "1"]) == EXIT_LIMIT
    summary = json.loads((out / "admm.json").read_text())
    assert summary["reason"] == "IterCap" and summary["iterations"] == 1
    assert len(read_trace(out / "trace.jsonl").records) == 2
