import pytest

from hybridedge.errors import InvalidScenario
from hybridedge.scenarios import builtin_names, load_scenario, parse_scenario, run_scenario

BUILTINS = builtin_names()

LONG_CAR = {"docker": {"CarDetect": {"proc_time_ms_mean": 60000, "proc_time_ms_spread": 0}}}


def minimal(**extra):
    doc = {"name": "t", "nodes": [{"count": 2, "prefix": "w"}]}
    doc.update(extra)
    return doc


def test_builtins_present():
    assert {"paper-datasci-hybrid", "paper-spread-16x4", "overload-rebalance",
            "node-failure-requeue", "admission-queue"} <= set(BUILTINS)


@pytest.mark.parametrize("name", BUILTINS)
def test_builtin_passes(name):
    report = run_scenario(name)
    assert report.passed, report.render()


@pytest.mark.parametrize("name", BUILTINS)
def test_builtin_is_deterministic(name):
    first, second = run_scenario(name), run_scenario(name)
    assert first.placement_log == second.placement_log
    assert first.metrics_log == second.metrics_log
    assert first.to_json() == second.to_json()


def test_seed_changes_sampled_metrics_only():
    a = run_scenario("overload-rebalance", seed=1)
    b = run_scenario("overload-rebalance", seed=2)
    assert a.final_counts == b.final_counts


def test_datasci_comparison_figures():
    report = run_scenario("paper-datasci-hybrid")
    comparison, = report.comparisons
    assert comparison["mem_saving_pct"] == pytest.approx(36.62, abs=0.05)
    assert comparison["proc_time_delta_ms"] == pytest.approx(0.35, abs=0.01)
    assert comparison["verdict"] == "B lighter, A faster"


def test_kill_agent_then_restart():
    doc = parse_scenario(minimal(
        duration_ms=9000,
        calibration=LONG_CAR,
        trace=[{"at_ms": 0, "submit": {"id": "c", "payload_kind": "image", "app_class": "CarDetect", "instances": 4}}],
        faults=[{"kill_agent": "w2", "at_ms": 500, "restart_at_ms": 6000}],
        assertions=[
            {"type": "spread-exact", "at_ms": 400, "expected": {"w1": 2, "w2": 2}},
            {"type": "orphans-count", "node": "w2", "expected": 2},
            {"type": "spread-exact", "expected": {"w1": 4, "w2": 0}},
        ],
    ))
    report = run_scenario(doc)
    assert report.passed, report.render()
    assert sorted(o["instance_id"] for o in report.orphans) == ["c-1", "c-3"]
    w2 = next(n for n in report.nodes if n["node_id"] == "w2")
    assert w2["health"] == "healthy"


def test_failing_assertion_reports_fail():
    doc = parse_scenario(minimal(
        trace=[{"at_ms": 0, "submit": {"id": "s", "payload_kind": "stream"}}],
        assertions=[{"type": "queue-length", "expected": 3}],
    ))
    report = run_scenario(doc)
    assert not report.passed
    assert "FAIL" in report.render()


def test_artifacts_written(tmp_path):
    run_scenario("paper-datasci-hybrid", artifacts_dir=tmp_path)
    assert any(tmp_path.rglob("*"))


@pytest.mark.parametrize("doc, fragment", [
    ([], "mapping"),
    ({"nodes": []}, "name"),
    (minimal(colour="red"), "unknown scenario keys"),
    (minimal(assertions=[{"type": "nope"}]), "type"),
    (minimal(assertions=[{"type": "metrics-within", "metric": "joules", "target": 1, "tolerance": 1}]), "metric"),
    (minimal(assertions=[{"type": "saving-pct-within", "a": "colour:x", "b": "kind:unikernel",
                          "target": 1, "tolerance": 1}]), "colour"),
    (minimal(faults=[{"kill_agent": "w9", "at_ms": 1}]), "unknown node"),
    (minimal(faults=[{"drop_heartbeats": "w1", "from_ms": 5, "to_ms": 1}]), "end after"),
    (minimal(rules="no-such-preset"), "preset"),
])
def test_invalid_documents(doc, fragment):
    with pytest.raises(InvalidScenario, match=fragment):
        parse_scenario(doc)


def test_load_unknown_name():
    with pytest.raises(InvalidScenario, match="built-ins"):
        load_scenario("does-not-exist")


def test_load_from_path(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("name: from-file\nnodes: [{count: 1, prefix: n}]\n")
    assert load_scenario(str(path)).nodes[0].node_id == "n1"
