import json

import pytest

from branch2.cli import run


def read_csv(path):
    lines = path.read_text().splitlines()
    header = json.loads(lines[0].split("=", 1)[1])
    return header, lines[1:]


def test_yule_example(tmp_path):
    out = tmp_path / "y.json"
    assert run(["check-yule", "--r", "1", "--t", "1", "--w", "1", "--z", "0.5", "--n", "100000",
                "--seed", "7", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["passed"]
    assert rep["details"]["pgf"]["exact"] == pytest.approx(0.26894, abs=1e-5)
    assert rep["run_config"]["seed"] == 7 and rep["run_config"]["command"] == "check-yule"


def test_simulate_particle_t0_is_initial(tmp_path):
    out = tmp_path / "p.csv"
    assert run(["simulate-particle", "--init", "3,0,2", "--t-end", "0", "--seed", "1", "--out", str(out)]) == 0
    cfg, rows = read_csv(out)
    assert rows == ["replicate,time,cell_index,particle_count", "0,0.0,0,3", "0,0.0,1,0", "0,0.0,2,2"]
    assert cfg["init"] == [3, 0, 2]


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate-particle", "--init", "5,5", "--t-end", "0.3", "--obs", "0.1,0.3", "--n", "3", "--zeta", "0.1"],
        ["simulate-limit", "--init", "1,0.5", "--t-end", "0.3", "--n", "2", "--dt", "0.01"],
        ["simulate-dual", "--q", "0.6", "--marks", "0.3,0.9", "--t-end", "0.8", "--lam", "0.5"],
        ["check-gamma", "--n", "500"],
        ["check-pointwise", "--n", "10"],
        ["check-moments", "--n", "50"],
        ["check-longterm", "--n", "20", "--ts", "0.5,1"],
    ],
)
def test_rerun_is_byte_identical(tmp_path, argv):
    out = tmp_path / "out"
    assert run(argv + ["--seed", "3", "--out", str(out)]) in (0, 1)
    first = out.read_bytes()
    assert run(argv + ["--seed", "3", "--out", str(out)]) in (0, 1)
    assert out.read_bytes() == first


def test_threads_do_not_change_output(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["simulate-particle", "--init", "5,5", "--t-end", "0.3", "--n", "8", "--zeta", "0.1", "--seed", "2"]
    assert run(base + ["--out", str(a), "--threads", "1"]) == 0
    assert run(base + ["--out", str(b), "--threads", "4"]) == 0
    assert a.read_text().splitlines()[1:] == b.read_text().splitlines()[1:]


def test_env_seed_fallback(tmp_path, monkeypatch):
    out = tmp_path / "d.jsonl"
    monkeypatch.setenv("BRANCH2_SEED", "41")
    assert run(["simulate-dual", "--t-end", "0.1", "--out", str(out)]) == 0
    assert json.loads(out.read_text().splitlines()[0])["run_config"]["seed"] == 41
    assert run(["simulate-dual", "--t-end", "0.1", "--seed", "5", "--out", str(out)]) == 0
    assert json.loads(out.read_text().splitlines()[0])["run_config"]["seed"] == 5


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"init": [4], "t_end": 0.2, "n": 2, "params": {"zeta": 0.25, "sigma": 0.5}}))
    out = tmp_path / "o.csv"
    assert run(["simulate-particle", "--config", str(cfg), "--sigma", "0.7", "--out", str(out)]) == 0
    resolved, _ = read_csv(out)
    assert resolved["init"] == [4] and resolved["t_end"] == 0.2
    assert resolved["params"]["zeta"] == 0.25 and resolved["params"]["sigma"] == 0.7


def test_events_log(tmp_path):
    ev = tmp_path / "ev.jsonl"
    out = tmp_path / "o.csv"
    assert run(["simulate-particle", "--init", "4", "--t-end", "0.2", "--zeta", "0.25", "--events", str(ev),
                "--out", str(out)]) == 0
    lines = ev.read_text().splitlines()
    assert "run_config" in json.loads(lines[0])
    assert all(set(json.loads(x)) == {"time", "kind", "cell", "k"} for x in lines[1:])


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["check-yule", "--nope"],
        ["check-yule", "--config", "/nonexistent/config.json"],
        ["simulate-particle", "--sigma", "0.1", "--K", "-10", "--zeta", "0.5"],
        ["simulate-particle", "--theta", "1.0"],
        ["simulate-particle", "--init", "1.5"],
        ["simulate-limit", "--p", "1"],
    ],
)
def test_usage_errors(argv, capsys):
    assert run(argv) == 2
    assert "error" in capsys.readouterr().err


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"walrus": 1}))
    assert run(["check-gamma", "--config", str(cfg)]) == 2


def test_failed_check_exit_code(tmp_path):
    # a tiny sample with an absurd significance level fails the KS test
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"w": 1, "t": 0.3, "n": 5000}))
    assert run(["check-gamma", "--config", str(cfg), "--out", str(tmp_path / "r.json")]) == 1
