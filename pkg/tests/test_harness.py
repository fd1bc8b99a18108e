import csv
import json
import os

import pytest

from scalesentry.harness import (
    EmptyReport,
    ExperimentConfig,
    main,
    make_setup,
    parse_override,
    report,
    run,
    simulate,
)
from scalesentry.workload import ConfigError

SMALL = {"traffic.total_requests": 6000, "sentinel.run_times_s": [5, 10], "forest.n_trees": 10}


def test_parse_override():
    assert parse_override("tier.queue_cap=100") == ("tier.queue_cap", 100)
    assert parse_override("scan_paths=[\"/a\"]") == ("scan_paths", ["/a"])
    assert parse_override("x=hello") == ("x", "hello")
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_overrides_reach_every_section():
    setup = make_setup(1, 1, 42, {"tier.queue_cap": 10, "hpa.stabilization_s": 90,
                                  "threshold": 0.3, "n_trees": 7, "total_requests": 100})
    assert setup.tier.queue_cap == 10
    assert setup.hpa.stabilization_s == 90
    assert setup.policy.threshold == 0.3
    assert setup.forest.n_trees == 7
    assert setup.spec.total_requests == 100


@pytest.mark.parametrize("overrides", [{"nope": 1}, {"tier.nope": 1}, {"hpa.min_replicas": 0},
                                       {"traffic.attacker_ip_count": 3}])
def test_bad_overrides(overrides):
    with pytest.raises(ConfigError):
        make_setup(1, 1, 42, overrides)


def test_unknown_condition():
    with pytest.raises(ConfigError):
        ExperimentConfig(condition_id=9)


def test_simulation_accounting_and_determinism():
    a, sim = simulate(1, 1, 42, SMALL)
    b, _ = simulate(1, 1, 42, SMALL)
    c, _ = simulate(1, 2, 42, SMALL)
    assert a.row() == b.row() and a.extras == b.extras
    assert a.extras["attacker_ips"] != c.extras["attacker_ips"]
    assert a.extras["service_outcomes"] + a.extras["honeypot_outcomes"] == 6000
    assert len(sim.decisions) == 2
    assert a.extras["max_replicas_trajectory"][0] == 5


def test_run_writes_artifacts(tmp_path):
    config = ExperimentConfig(condition_id=3, repetitions=2, output_dir=tmp_path, overrides=SMALL,
                              keep_logs=True)
    results, avg = run(config)
    assert len(results) == 2
    assert avg["five_xx_count"] == sum(r.five_xx_count for r in results) / 2
    run_dir = tmp_path / "runs" / "c3-r1"
    for name in ("timeline.csv", "hpa_history.csv", "metrics.csv", "sentinel.jsonl", "result.json"):
        assert (run_dir / name).is_file()
    assert (tmp_path / "model" / "c3-r1-1.json").is_file()
    assert (tmp_path / "logs" / "c3-r1" / "access.log").is_file()
    decisions = [json.loads(line) for line in (run_dir / "sentinel.jsonl").read_text().splitlines()]
    assert [d["t"] for d in decisions] == [5.0, 10.0]


def test_cli_all_and_report(tmp_path):
    args = ["all", "--reps", "3", "--seed", "7", "--out", str(tmp_path)]
    for key, value in SMALL.items():
        args += ["--override", f"{key}={json.dumps(value)}"]
    assert main(args) == 0
    with open(tmp_path / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 24
    assert sum(r["repetition"] == "average" for r in rows) == 6
    first = (tmp_path / "results.csv").read_bytes()
    assert main(["report", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "results.csv").read_bytes() == first
    with open(tmp_path / "summary.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 6


def test_report_on_empty_directory(tmp_path, capsys):
    with pytest.raises(EmptyReport):
        report(tmp_path)
    assert main(["report", "--out", str(tmp_path)]) == 2
    assert "no completed runs" in capsys.readouterr().err


def test_cli_rejects_bad_override(tmp_path, capsys):
    assert main(["run", "--condition", "1", "--out", str(tmp_path), "--override", "bogus=1"]) == 2
    assert "unknown override" in capsys.readouterr().err


def test_cli_rejects_unknown_condition(tmp_path):
    assert main(["run", "--condition", "8", "--out", str(tmp_path)]) == 2


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_output(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        assert main(["run", "--condition", "1", "--out", str(locked / "out")]) == 2
    finally:
        locked.chmod(0o700)


def test_output_path_is_a_file(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--condition", "1", "--out", str(blocker)]) == 2
    assert "not writable" in capsys.readouterr().err
