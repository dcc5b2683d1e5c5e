import csv
import json
from collections import Counter

import numpy as np
import pytest

from contact_rbpf.harness import cli
from contact_rbpf.harness.metrics import default_windows, rmse, summarize
from contact_rbpf.harness.records import RUN_HEADER, TRUTH_HEADER
from contact_rbpf.harness.runner import FilterFailure, FilterRun, run_filter
from contact_rbpf.harness.scenarios import (ConfigError, build_scenario, load_config, resolve_scenario,
                                            scenario_config, scenario_from_dict)
from contact_rbpf.harness.truth import TruthFailure, generate_truth

SHORT = """
scenario = "block_wall"
[params]
n_steps = 30
[filter]
particles = 4
"""


@pytest.fixture
def short_cfg(tmp_path):
    p = tmp_path / "short.toml"
    p.write_text(SHORT)
    return str(p)


def test_zero_noise_measurements_equal_truth():
    sc = build_scenario("block_wall", {"n_steps": 20}, {"sigma_pos": 0.0, "sigma_theta": 0.0})
    tr = generate_truth(sc, 0)
    assert np.array_equal(tr.z, tr.q)


def test_block_wall_contact_near_step_80():
    tr = generate_truth(build_scenario("block_wall"), 0)
    assert 70 <= tr.first_contact() <= 90


def test_gripper_contact_instants():
    sc = build_scenario("gripper_triangle")
    tr = generate_truth(sc, 0)
    onsets = tr.contact_onsets()
    firsts = []
    for k, key in onsets:
        if not firsts or k > firsts[-1][0] + 5:
            firsts.append((k, key))
    steps = [k for k, _ in firsts]
    fingers = [0 if 0 in key[:2] else 1 for _, key in firsts]
    assert fingers == [0, 1, 1]
    assert abs(steps[0] - 200) <= 10 and abs(steps[1] - 950) <= 10 and abs(steps[2] - 1000) <= 10


def test_seeded_truth_is_reproducible():
    sc = build_scenario("block_wall", {"n_steps": 10})
    a, b = generate_truth(sc, 5), generate_truth(sc, 5)
    assert np.array_equal(a.z, b.z) and not np.array_equal(a.z, generate_truth(sc, 6).z)


def fake_run(truth, mean):
    n = truth.n_steps + 1
    return FilterRun("x", 0, mean, np.zeros_like(mean), np.full(n, np.inf), [Counter()] * n)


def test_metrics_of_perfect_and_measured_estimates():
    sc = build_scenario("block_wall", {"n_steps": 40})
    tr = generate_truth(sc, 0)
    exact = fake_run(tr, np.hstack([tr.q, tr.v]))
    s = summarize({"exact": exact}, tr)
    assert all(v == 0.0 for v in s["exact"]["all"]["rmse"].values())
    rng = np.random.default_rng(0)
    truth = rng.normal(size=(10000, 3))
    meas = truth + rng.normal(scale=[0.01, 0.01, 0.02], size=truth.shape)
    assert np.allclose(rmse(meas, truth), [0.01, 0.01, 0.02], rtol=0.03)


def test_default_windows_split_at_contact():
    tr = generate_truth(build_scenario("block_wall", {"n_steps": 120}), 0)
    w = default_windows(tr)
    c = tr.first_contact()
    assert w["pre_contact"] == (1, c) and w["post_contact"] == (c, 121)


def test_config_round_trip(short_cfg):
    sc = load_config(short_cfg)
    assert sc.n_steps == 30 and sc.n_particles == 4
    again = scenario_from_dict(json.loads(json.dumps(scenario_config(sc))))
    assert scenario_config(again) == scenario_config(sc)
    assert resolve_scenario("block_wall").name == "block_wall"


@pytest.mark.parametrize("cfg", [
    {"scenario": "nope"},
    {"params": {}},
    {"scenario": {"name": "block_wall"}},
    {"scenario": "block_wall", "params": {"frobnicate": 1}},
    {"scenario": "block_wall", "extra": {}},
    {"scenario": "block_wall", "filter": {"particles": 0}},
])
def test_bad_configs_rejected(cfg):
    with pytest.raises(ConfigError):
        scenario_from_dict(cfg)


def test_unreadable_config(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("scenario = \n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_cli_simulate_and_estimate(short_cfg, tmp_path):
    truth_csv, run_csv = tmp_path / "truth.csv", tmp_path / "run.csv"
    assert cli.main(["simulate", short_cfg, "--out", str(truth_csv), "--seed", "2"]) == 0
    assert cli.main(["estimate", "--scenario", short_cfg, "--mode", "constrained", "--particles", "3",
                     "--seed", "2", "--out", str(run_csv)]) == 0
    for path, header in ((truth_csv, TRUTH_HEADER), (run_csv, RUN_HEADER)):
        rows = list(csv.reader(open(path, encoding="utf-8")))
        assert rows[0] == header
        # one row per step and tracked body
        assert len(rows) == 1 + 31
        assert all(len(r) == len(header) for r in rows)


def test_cli_compare_report(short_cfg, tmp_path):
    rep = tmp_path / "report.json"
    assert cli.main(["compare", "--scenario", short_cfg, "--seeds", "2", "--report", str(rep),
                     "--out-dir", str(tmp_path / "csv")]) == 0
    report = json.loads(rep.read_text())
    assert report["seeds"] == [0, 1]
    assert set(report["per_seed"]) == {"0", "1"}
    assert report["config"]["scenario"] == "block_wall"
    assert "constrained_better" in report["aggregate"]["all"]
    assert (tmp_path / "csv" / "constrained_seed1.csv").exists()


def test_cli_sweep(short_cfg, tmp_path):
    rep = tmp_path / "sweep.json"
    assert cli.main(["sweep", "--scenario", short_cfg, "--param", "particles", "--values", "2", "3",
                     "--report", str(rep)]) == 0
    assert [r["value"] for r in json.loads(rep.read_text())["results"]] == [2, 3]
    assert cli.main(["sweep", "--scenario", short_cfg, "--param", "particles", "--values", "2.5",
                     "--report", str(rep)]) == cli.EXIT_CONFIG


def test_cli_config_errors(tmp_path, capsys, monkeypatch):
    bad = tmp_path / "bad.toml"
    bad.write_text("scenario = \"nowhere\"\n")
    assert cli.main(["simulate", str(bad), "--out", str(tmp_path / "t.csv")]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    monkeypatch.setenv(cli.SEED_ENV, "abc")
    assert cli.main(["simulate", "block_wall", "--out", str(tmp_path / "t.csv")]) == cli.EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        cli.main(["estimate", "--scenario", "block_wall", "--mode", "sideways", "--out", "x"])
    assert exc.value.code == 2


def test_cli_solver_failures(short_cfg, tmp_path, capsys, monkeypatch):
    def broken_filter(*a, **k):
        raise FilterFailure(12, "singular innovation", particle=3)

    monkeypatch.setattr(cli, "run_filter", broken_filter)
    code = cli.main(["estimate", "--scenario", short_cfg, "--out", str(tmp_path / "r.csv")])
    assert code == cli.EXIT_SOLVER
    assert "step 12, particle 3" in capsys.readouterr().err

    def broken_truth(*a, **k):
        raise TruthFailure(7, "no LCP solution")

    monkeypatch.setattr(cli, "generate_truth", broken_truth)
    assert cli.main(["simulate", short_cfg, "--out", str(tmp_path / "t.csv")]) == cli.EXIT_SOLVER
    assert "step 7" in capsys.readouterr().err


def test_env_seed_default(short_cfg, tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    monkeypatch.setenv(cli.SEED_ENV, "9")
    cli.main(["simulate", short_cfg, "--out", str(a)])
    cli.main(["simulate", short_cfg, "--out", str(b), "--seed", "9"])
    assert a.read_bytes() == b.read_bytes()


def test_run_filter_records_shapes():
    sc = build_scenario("block_wall", {"n_steps": 15})
    tr = generate_truth(sc, 0)
    run = run_filter(sc, tr, "unconstrained", 0, n_particles=3)
    assert run.mean.shape == (16, 6) and run.cov_diag.shape == (16, 6) and len(run.modes) == 16
    assert np.all(run.cov_diag >= 0)
