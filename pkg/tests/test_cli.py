import json

import pytest

from hybridedge.cli import main
from hybridedge.manager import InstanceStatus


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_scenario_list(capsys):
    code, out, _ = run(capsys, "scenario", "list")
    assert code == 0 and "paper-spread-16x4" in out and "node-failure-requeue" in out


def test_scenario_run_pass_and_json(capsys, tmp_path):
    report = tmp_path / "r.json"
    code, out, _ = run(capsys, "scenario", "run", "paper-spread-16x4", "--out", str(report))
    assert code == 0 and "PASS" in out
    doc = json.loads(report.read_text())
    assert doc["passed"] and doc["assertions"][0]["type"] == "spread-exact"
    code, out, _ = run(capsys, "scenario", "run", "admission-queue", "--json")
    assert code == 0 and json.loads(out)["passed"] is True


def test_failing_scenario_exits_nonzero(capsys, tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("name: bad\nnodes: [{count: 1, prefix: w}]\n"
                    "assertions: [{type: queue-length, expected: 5}]\n")
    code, out, _ = run(capsys, "scenario", "run", str(path))
    assert code == 1 and "FAIL" in out


def test_report_compare_default_scenario(capsys):
    code, out, _ = run(capsys, "report", "compare", "--a", "container-datasci", "--b", "hybrid-datasci")
    assert code == 0
    assert "memory saving (B vs A): 36.62 %" in out
    assert "processing time delta (B - A): +0.350 ms" in out
    assert "verdict: B lighter, A faster" in out


def test_report_compare_empty_set(capsys):
    code, _, err = run(capsys, "report", "compare", "--a", "flavor:nanos", "--b", "hybrid-datasci")
    assert code == 1 and err.startswith("error:")


def test_metrics_from_scenario_and_log(capsys, tmp_path):
    code, out, _ = run(capsys, "metrics", "--scenario", "paper-spread-16x4", "--json", "--filter", "flavor:docker")
    assert code == 0 and json.loads(out)["count"] == 16
    code, _, err = run(capsys, "metrics", "--scenario", "paper-spread-16x4", "--filter", "colour:red")
    assert code == 1 and "colour" in err
    log = tmp_path / "empty.jsonl"
    log.write_text("")
    code, out, _ = run(capsys, "metrics", "--log", str(log))
    assert code == 0 and "records: 0" in out


def test_profiles_list_and_validate(capsys, tmp_path):
    code, out, _ = run(capsys, "profiles", "list", "--flavor", "unikraft")
    assert code == 0 and "StreamAggregate" in out and "docker" not in out
    rules = tmp_path / "rules.yaml"
    rules.write_text("rules:\n  - {payload_kind: image, kind: container, flavor: docker}\n  - {kind: container, flavor: docker}\n")
    bad = tmp_path / "bad.yaml"
    bad.write_text("rules:\n  - {payload_kind: image, kind: container, flavor: nosuch}\n  - {kind: container, flavor: docker}\n")
    code, out, _ = run(capsys, "profiles", "validate", str(rules))
    assert code == 0 and "rule table" in out
    code, out, err = run(capsys, "profiles", "validate", str(rules), str(bad))
    assert code == 1 and "invalid" in err


def test_bad_config_file(capsys, tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("colour: red\n")
    code, _, err = run(capsys, "--config", str(path), "scenario", "list")
    assert code == 1 and "unknown config sections" in err


def test_unreachable_manager(capsys):
    code, _, err = run(capsys, "cluster", "status", "--manager", "http://127.0.0.1:9")
    assert code == 1 and "cannot reach manager" in err


def test_remote_commands(capsys, live_cluster, tmp_path):
    url = live_cluster.url
    code, out, _ = run(capsys, "cluster", "status", "--manager", url)
    assert code == 0 and "w1" in out and "w2" in out
    code, out, _ = run(capsys, "submit", "--manager", url, "--kind", "stream", "--id", "s1", "--instances", "2",
                        "--ref", "builtin:dailyActivity_synthetic.csv")
    assert code == 0 and "s1: placed" in out and "unikernel/unikraft" in out
    code, _, err = run(capsys, "submit", "--manager", url, "--kind", "stream", "--instances", "0")
    assert code == 1 and "HTTP 400" in err
    code, _, err = run(capsys, "submit", "--manager", url, "--kind", "image", "--file", str(tmp_path / "nope.jpg"))
    assert code == 1 and "no such file" in err
    live_cluster.wait_for(lambda m: all(p.status is InstanceStatus.COMPLETED for p in m.placements.values()))
    code, out, _ = run(capsys, "workloads", "--manager", url)
    assert code == 0 and "s1" in out and '"completed": 2' in out
    code, out, _ = run(capsys, "metrics", "--manager", url, "--filter", "workload_id:s1")
    assert code == 0 and "success 2" in out
    code, out, _ = run(capsys, "rebalance", "--manager", url)
    assert code == 0 and "0 migration(s)" in out


@pytest.mark.parametrize("argv", [["cluster", "up", "--workers", "2"]])
def test_cluster_up_requires_simulated_for_workers(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1 and "--simulated" in err
