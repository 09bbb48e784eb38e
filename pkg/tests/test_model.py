from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridedge.errors import NonPositiveBaseline, ValidationError, ZeroCapacity
from hybridedge.model import (
    ClusterConfig,
    Health,
    MetricsRecord,
    NodeState,
    PlacementDecision,
    Assignment,
    ResourceProfile,
    RuntimeClass,
    RuntimeKind,
    ValidatedSpec,
    WorkloadSpec,
    default_app_class,
    instance_ids,
    mem_saving_pct,
    node_utilization,
    validate_workload,
)

from helpers import DOCKER, record


def test_saving_matches_reported_figure():
    # 71 MB container vs 45 MB unikernel; exact rational oracle, rounded to 2 places.
    oracle = Fraction(71 - 45, 71) * 100
    assert round(float(oracle), 2) == 36.62
    assert mem_saving_pct(71, 45) == pytest.approx(float(oracle), rel=1e-12)


def test_saving_edge_cases():
    assert mem_saving_pct(71, 71) == 0
    assert mem_saving_pct(50, 75) == -50
    with pytest.raises(NonPositiveBaseline):
        mem_saving_pct(0, 10)


@given(st.floats(0.001, 1e6), st.floats(0, 1e6))
def test_saving_sign_follows_difference(base, alt):
    s = mem_saving_pct(base, alt)
    assert (s > 0) == (alt < base)
    assert s <= 100


def test_validation_fills_defaults_from_kind():
    v = validate_workload(WorkloadSpec("a", "stream"), ClusterConfig())
    assert (v.app_class, v.est_mem_mb, v.est_cpu_pct) == ("StreamAggregate", 71.0, 0.29)
    v = validate_workload(WorkloadSpec("b", "image"), ClusterConfig())
    assert (v.app_class, v.est_mem_mb) == ("ObjectDetect", 200.0)
    v = validate_workload(WorkloadSpec("c", "image", app_class="CarDetect"), ClusterConfig())
    assert (v.est_mem_mb, v.est_cpu_pct) == (93.0, 26.0)
    v = validate_workload(WorkloadSpec("d", "audio"), ClusterConfig())
    assert v.app_class == "audio" and v.est_mem_mb == 128.0


def test_validation_collects_every_violation():
    with pytest.raises(ValidationError) as info:
        validate_workload(WorkloadSpec("", "", instances=0, est_mem_mb=-1), ClusterConfig())
    codes = sorted(v.code for v in info.value.violations)
    assert codes == ["EmptyId", "EmptyPayloadKind", "NegativeEstimate", "ZeroInstances"]


@given(st.builds(WorkloadSpec, id=st.text(min_size=1, max_size=5), payload_kind=st.sampled_from(["image", "stream", "x"]),
                 instances=st.integers(1, 20), priority=st.integers(-5, 5)))
def test_validation_is_idempotent(spec):
    once = validate_workload(spec, ClusterConfig())
    assert isinstance(once, ValidatedSpec)
    assert validate_workload(once, ClusterConfig()) is once


def test_default_app_class():
    assert default_app_class("image") == "ObjectDetect"
    assert default_app_class("stream") == "StreamAggregate"
    assert default_app_class("lidar") == "lidar"


def test_runtime_class_text_roundtrip():
    rc = RuntimeClass(RuntimeKind.UNIKERNEL, "osv")
    assert str(rc) == "unikernel/osv"
    assert RuntimeClass.parse("unikernel/osv") == rc
    with pytest.raises(ValueError):
        RuntimeClass.parse("vm/firecracker")


def test_profile_rejects_negative_values():
    with pytest.raises(ValueError):
        ResourceProfile(-1, 0, 1, 0, 1, 0, 0)


def test_cluster_config_validation_and_merge():
    cfg = ClusterConfig.from_dict({"default_est_mem_mb": {"CarDetect": 100}})
    assert cfg.est_mem_for("CarDetect") == 100 and cfg.est_mem_for("FaceDetect") == 93
    with pytest.raises(ValueError):
        ClusterConfig.from_dict({"nope": 1})
    with pytest.raises(ValueError):
        ClusterConfig(missed_heartbeats_suspect=3, missed_heartbeats_unhealthy=2)


mem_amounts = st.floats(0, 500)


@given(st.lists(st.tuples(st.booleans(), mem_amounts), max_size=30))
def test_allocate_release_ledger(ops):
    node = NodeState("n", mem_capacity_mb=1e9)
    live = {}
    for k, (alloc, mem) in enumerate(ops):
        if alloc or not live:
            node = node.allocate(f"i{k}", mem, 1.0)
            live[f"i{k}"] = mem
        else:
            iid = sorted(live)[0]
            node = node.release(iid, live.pop(iid), 1.0)
        assert node.running_instances == frozenset(live)
        assert node.mem_allocated_mb == pytest.approx(sum(live.values()), abs=1e-6)


def test_allocate_twice_is_an_error():
    node = NodeState("n").allocate("a", 1, 1)
    with pytest.raises(ValueError):
        node.allocate("a", 1, 1)
    assert node.release("missing", 1, 1) is node


def test_node_utilization_clamps():
    node = NodeState("n", cpu_cores=2, mem_capacity_mb=100, mem_allocated_mb=50, cpu_allocated_pct=300)
    assert node_utilization(node) == (1.0, 0.5)
    with pytest.raises(ZeroCapacity):
        node_utilization(NodeState("z", cpu_cores=0))


def test_eligibility():
    assert NodeState("n").eligible
    assert not NodeState("n", health=Health.SUSPECT).eligible
    assert not NodeState("n", schedulable=False).eligible


def test_decision_rejects_duplicate_ids():
    with pytest.raises(ValueError):
        PlacementDecision("w", (Assignment("a", "n1", DOCKER), Assignment("a", "n2", DOCKER)), 0.0)


def test_metrics_record_roundtrip_and_checks():
    r = record()
    assert MetricsRecord.from_dict(r.to_dict()) == r
    with pytest.raises(ValueError):
        record(time=-1)


def test_instance_ids():
    assert instance_ids("cv", 3) == ["cv-0", "cv-1", "cv-2"]
