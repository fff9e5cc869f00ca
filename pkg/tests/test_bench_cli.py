import csv
import json

import pytest

from oraclerl.bench_cli import (CSV_HEADER, ConfigError, main, make_instance, run_experiment, validate_config,
                                write_outputs)
from oraclerl.cdp_core import load_spec

from conftest import suite_config


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv("ORACLERL_WORKERS", "1")


def small_config(**kw):
    cfg = suite_config("valor-unconstrained")
    cfg["env"].update(horizon=[2, 2], max_states=[2, 2], num_actions=[2, 2])
    cfg["classes"]["n_distractors"] = 7
    cfg.update(trials=3, seed=11, params={"eps": 0.1, "overrides": {"n_test": 500, "n_train": 500,
                                                                     "n_eval": 500}})
    cfg.update(kw)
    return cfg


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


# ---------------------------------------------------------------------------
# config validation


@pytest.mark.parametrize("bad, where", [
    ({"algorithm": "nope", "env": {"kind": "suite"}}, "algorithm"),
    ({"algorithm": "mmd"}, ""),
    ({"algorithm": "mmd", "env": {"kind": "named"}}, "env"),
    ({"algorithm": "mmd", "env": {"kind": "suite"}, "params": {"eps": 1.5}}, "params.eps"),
    ({"algorithm": "mmd", "env": {"kind": "suite"}, "extra": 1}, ""),
    ({"algorithm": "mmd", "env": {"kind": "file", "path": "/no/such/file.json"}}, "env.path"),
    ({"algorithm": "mmd", "env": {"kind": "suite"}, "classes": {"kind": "builtin"}}, "classes.kind"),
])
def test_invalid_configs(bad, where):
    with pytest.raises(ConfigError) as exc:
        validate_config(bad)
    assert exc.value.path == where


def test_valid_config_passes():
    cfg = small_config()
    assert validate_config(cfg) is cfg


def test_suite_instance_ranges():
    cfg = small_config()
    spec, G, Pi, _ = make_instance(cfg, 3)
    assert spec.horizon == 2 and spec.num_actions == 2 and spec.max_states <= 2
    assert G.size == Pi.size == 8


# ---------------------------------------------------------------------------
# experiments


def test_run_is_deterministic(tmp_path):
    a = run_experiment(small_config())
    b = run_experiment(small_config())
    pa = write_outputs(a, tmp_path / "a")
    pb = write_outputs(b, tmp_path / "b")
    assert pa[0].read_bytes() == pb[0].read_bytes()
    assert pa[1].read_bytes() == pb[1].read_bytes()
    assert a["summary"]["trials"] == 3
    assert [t["instance_seed"] for t in a["trials"]] == [11, 12, 13]
    assert [t["seed"] for t in a["trials"]] == [0, 1, 2]
    assert "wall_time" not in a["trials"][0]


def test_worker_count_does_not_change_results(monkeypatch):
    a = run_experiment(small_config())
    monkeypatch.setenv("ORACLERL_WORKERS", "2")
    b = run_experiment(small_config())
    assert a == b


def test_csv_header_and_rows(tmp_path):
    result = run_experiment(small_config(trials=2))
    _, cp = write_outputs(result, tmp_path)
    rows = list(csv.reader(cp.open()))
    assert tuple(rows[0]) == CSV_HEADER
    assert {r[0] for r in rows[1:]} == {"0", "1"}


@pytest.mark.parametrize("algorithm, classes", [("valor-constrained", "synthesize"), ("mmd", "close"),
                                                ("global", "tabular"), ("olive", "tabular")])
def test_every_algorithm_runs(algorithm, classes):
    cfg = small_config(algorithm=algorithm, trials=1)
    cfg["classes"] = {"kind": classes, "n_distractors": 7} if classes != "tabular" else {"kind": "tabular"}
    cfg["params"] = {"eps": 0.1}
    res = run_experiment(cfg)
    assert res["summary"]["errors"] == 0
    assert res["trials"][0]["algorithm"].startswith(algorithm)


def test_barrier_algorithms():
    cfg = {"algorithm": "bellman-backup", "env": {"kind": "named", "name": "backup-chain",
                                                  "params": {"horizon": 3, "eps": 0.2}},
           "params": {"eps": 0.2}}
    res = run_experiment(cfg)
    assert res["trials"][0]["v_policy"] == pytest.approx(0.7)
    cfg = {"algorithm": "needle-demo", "env": {"kind": "named", "name": "needle", "params": {"m": 4}},
           "params": {"eps": 0.1, "overrides": {"iterations": 10}}}
    res = run_experiment(cfg)
    assert res["trials"][0]["diagnostics"]["new_distributions"] == 0
    assert res["summary"]["success_rate"] == 0.0


def test_theoretical_mode_overflow_is_recorded():
    cfg = small_config(trials=1)
    cfg["params"] = {"mode": "theoretical", "eps": 0.01, "delta": 0.01}
    cfg["classes"] = {"kind": "tabular"}
    cfg["env"].update(horizon=[4, 4], max_states=[4, 4], num_actions=[3, 3])
    res = run_experiment(cfg)
    assert res["trials"][0]["error"].startswith("OverflowError")


# ---------------------------------------------------------------------------
# command line


def test_cli_run(tmp_path, capsys):
    path = write_json(tmp_path / "cfg.json", small_config(trials=2))
    assert main(["run", "--config", path, "--out", str(tmp_path / "out"), "--seed", "4"]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["config"]["seed"] == 4
    assert (tmp_path / "out" / "metrics.csv").is_file()
    assert "success rate" in capsys.readouterr().out


def test_cli_exit_code_for_bad_config(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    path = write_json(tmp_path / "bad.json", {"algorithm": "valor-unconstrained"})
    assert main(["run", "--config", path]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_build_env(tmp_path):
    out = tmp_path / "chain.json"
    assert main(["build-env", "backup-chain", "--param", "horizon=3", "--param", "eps=0.2", "--out", str(out)]) == 0
    assert load_spec(out).horizon == 4
    assert main(["build-env", "no-such-env"]) == 2
    assert main(["build-env", "backup-chain", "--param", "H=3"]) == 2


def test_cli_check_assumptions(tmp_path, capsys):
    env = tmp_path / "env.json"
    main(["build-env", "random-cdp", "--param", "seed=1", "--out", str(env)])
    capsys.readouterr()
    assert main(["check-assumptions", "--env", str(env), "--n-distractors", "5", "--seed", "0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["assumption_1"] is True and out["assumption_2"] is True
    assert main(["check-assumptions", "--env", str(tmp_path / "missing.json")]) == 2


def test_cli_sat_decide(tmp_path, capsys):
    sat = tmp_path / "sat.cnf"
    sat.write_text("p cnf 2 2\n1 2 0\n-1 2 0\n")
    unsat = tmp_path / "unsat.cnf"
    unsat.write_text("p cnf 1 2\n1 0\n-1 0\n")
    assert main(["sat-decide", str(sat), "--check"]) == 0
    assert capsys.readouterr().out.splitlines() == ["SAT", "truth table: SAT"]
    assert main(["sat-decide", str(unsat)]) == 0
    assert capsys.readouterr().out.strip() == "UNSAT"
    assert main(["sat-decide", str(sat), "--budget", "2"]) == 3
    bad = tmp_path / "bad.cnf"
    bad.write_text("p cnf 2 1\n1 2 3 4 0\n")
    assert main(["sat-decide", str(bad)]) == 2
    assert main(["sat-decide", str(tmp_path / "missing.cnf")]) == 2


def test_cli_barrier(capsys):
    assert main(["barrier", "needle", "--m", "4", "--iterations", "10"]) == 0
    assert "suboptimality 0.5" in capsys.readouterr().out
    assert main(["barrier", "rare"]) == 0
    assert "g_bad" in capsys.readouterr().out
    assert main(["barrier", "backup", "--H", "2", "--n", "100", "--trials", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("H=2 eps=0.2")
    assert lines[-1].split()[0] == "100"
