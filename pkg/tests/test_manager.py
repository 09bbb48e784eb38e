import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridedge import protocol as p
from hybridedge.errors import DuplicateWorkloadId, EmptySet, UnknownFilterField, ValidationError
from hybridedge.manager import MANAGER_NODE_ID, InstanceStatus, Manager, derive_seed
from hybridedge.model import ClusterConfig, Health, PlacementDecision, PlacementReason, Role, WorkloadSpec
from hybridedge.monitor import HeartbeatSnapshot
from hybridedge.reports import MetricsLog
from hybridedge.scheduler import Queued

from helpers import DOCKER, UNIKRAFT, manager_with_workers, record


def finish(mgr, iid, outcome="success", **kw):
    pl = mgr.placements[iid]
    return mgr.record(record(iid, pl.workload_id, pl.runtime_class, node=pl.node_id, outcome=outcome, **kw),
                      pl.attempt)


def test_stream_goes_to_unikernel():
    mgr, sent, _ = manager_with_workers(4)
    decision = mgr.submit(WorkloadSpec("ds", "stream"))
    assert isinstance(decision, PlacementDecision)
    assert decision.assignments[0].runtime_class == UNIKRAFT
    (node, msg), = sent.of_type(p.LAUNCH)
    assert node == "w1" and msg.payload["runtime_class"] == "unikernel/unikraft"
    assert msg.payload["seed"] == derive_seed(0, "ds-0", 0)


def test_sixteen_images_spread():
    mgr, sent, _ = manager_with_workers(4)
    decision = mgr.submit(WorkloadSpec("cv", "image", app_class="CarDetect", instances=16))
    assert decision.counts_by_node() == {"w1": 4, "w2": 4, "w3": 4, "w4": 4}
    assert all(a.runtime_class == DOCKER for a in decision.assignments)
    assert len(sent.of_type(p.LAUNCH)) == 16


def test_zero_workers_queues():
    mgr = Manager()
    out = mgr.submit(WorkloadSpec("a", "image"))
    assert out == Queued(position=0)
    assert mgr.instance_states() == {"a-0": "queued"}


def test_manager_node_not_schedulable_by_default():
    mgr = Manager()
    assert mgr.nodes[MANAGER_NODE_ID].role is Role.MANAGER
    assert not mgr.nodes[MANAGER_NODE_ID].eligible
    assert Manager(ClusterConfig(manager_schedulable=True)).nodes[MANAGER_NODE_ID].eligible


def test_submit_errors():
    mgr, _, _ = manager_with_workers(1)
    with pytest.raises(ValidationError):
        mgr.submit(WorkloadSpec("x", "image", instances=0))
    mgr.submit(WorkloadSpec("x", "image"))
    with pytest.raises(DuplicateWorkloadId):
        mgr.submit(WorkloadSpec("x", "stream"))
    finish(mgr, "x-0")
    # a finished id may be reused; its instances get a fresh attempt number
    mgr.submit(WorkloadSpec("x", "image"))
    assert mgr.placements["x-0"].attempt == 1


def test_record_dedup_and_transition():
    mgr, _, _ = manager_with_workers(1)
    mgr.submit(WorkloadSpec("i", "stream"))
    assert finish(mgr, "i-0") is True
    assert finish(mgr, "i-0") is False
    assert len(mgr.metrics) == 1 and mgr.diagnostics["duplicate_metrics"] == 1
    assert mgr.placements["i-0"].status is InstanceStatus.COMPLETED
    assert mgr.nodes["w1"].mem_allocated_mb == 0


def test_failure_outcome():
    mgr, _, _ = manager_with_workers(1)
    mgr.submit(WorkloadSpec("i", "stream"))
    finish(mgr, "i-0", outcome="failure")
    assert mgr.placements["i-0"].status is InstanceStatus.FAILED


def test_freed_capacity_admits_queued_in_same_turn():
    mgr, sent, _ = manager_with_workers(1, mem=1000)
    mgr.submit(WorkloadSpec("big", "image", est_mem_mb=1000))
    assert isinstance(mgr.submit(WorkloadSpec("next", "image", est_mem_mb=900)), Queued)
    finish(mgr, "big-0")
    assert mgr.placements["next-0"].status is InstanceStatus.DISPATCHED
    assert not mgr.queue
    assert mgr.placement_log[-1]["reason"] == PlacementReason.DEQUEUED.value


def test_queue_is_priority_then_fifo_without_head_of_line_blocking():
    mgr, _, _ = manager_with_workers(1, mem=1000)
    mgr.submit(WorkloadSpec("hold", "image", est_mem_mb=1000))
    mgr.submit(WorkloadSpec("low", "image", est_mem_mb=100))
    mgr.submit(WorkloadSpec("huge", "image", est_mem_mb=950, priority=9))
    mgr.submit(WorkloadSpec("low2", "image", est_mem_mb=100))
    assert [e.spec.id for e in mgr.queue_order()] == ["huge", "low", "low2"]
    assert mgr.queue_position("low2") == 2
    finish(mgr, "hold-0")
    # huge fits first; the remaining 50 MB fit neither small one
    assert [e.spec.id for e in mgr.queue_order()] == ["low", "low2"]
    finish(mgr, "huge-0")
    assert not mgr.queue


def test_unhealthy_node_orphans_requeue_once():
    mgr, sent, clock = manager_with_workers(3)
    mgr.submit(WorkloadSpec("c", "image", app_class="CarDetect", instances=6))
    clock["now"] = 2500.0
    for n in ("w1", "w2"):
        mgr.heartbeat(HeartbeatSnapshot(n, 0, 0, frozenset(), 2500.0))
    clock["now"] = 3000.0
    lost = mgr.sweep()
    assert lost == ["c-2", "c-5"]
    assert mgr.nodes["w3"].health is Health.UNHEALTHY
    assert mgr.active_counts() == {"w1": 3, "w2": 3, "w3": 0}
    assert {mgr.placements[i].attempt for i in lost} == {1}
    assert mgr.sweep() == []
    assert len(mgr.orphan_events) == 2


def test_orphans_wait_when_nothing_fits():
    mgr, _, clock = manager_with_workers(1)
    mgr.submit(WorkloadSpec("c", "image"))
    clock["now"] = 5000.0
    mgr.sweep()
    assert mgr.instance_states() == {"c-0": "queued"}
    assert mgr.queue[0].is_requeue
    mgr.register_node("w9", 4096, 4)
    assert mgr.placements["c-0"].node_id == "w9"
    assert mgr.placement_log[-1]["reason"] == PlacementReason.REQUEUE_AFTER_FAILURE.value


def test_heartbeat_reconciles_in_flight_and_stale():
    mgr, sent, clock = manager_with_workers(2)
    mgr.submit(WorkloadSpec("c", "image", app_class="CarDetect", instances=2))
    clock["now"] = 10.0
    # w1 has not seen c-0's launch yet and still runs a stale "old-0" nobody knows
    node = mgr.heartbeat(HeartbeatSnapshot("w1", 0, 0, frozenset(), 10.0))
    assert node.running_instances == {"c-0"} and node.mem_allocated_mb == 93
    mgr.rebalance()  # no-op: 1 and 1
    mgr.placements["c-0"].node_id = "w2"  # pretend it moved
    mgr.heartbeat(HeartbeatSnapshot("w1", 93, 26, frozenset({"c-0"}), 11.0))
    assert mgr.nodes["w1"].mem_allocated_mb == 0
    assert ("w1", p.terminate("c-0")) in sent.sent


def test_reregistration_keeps_reported_and_orphans_rest():
    mgr, sent, _ = manager_with_workers(1)
    mgr.submit(WorkloadSpec("c", "image", instances=2))
    mgr.register_node("w1", 4096, 4, running=["c-0", "ghost"])
    assert mgr.placements["c-0"].status is InstanceStatus.RUNNING
    assert mgr.placements["c-1"].attempt == 1
    assert ("w1", p.terminate("ghost")) in sent.sent


def test_rebalance_terminates_and_relaunches():
    mgr, sent, _ = manager_with_workers(1)
    mgr.submit(WorkloadSpec("c", "image", app_class="CarDetect", instances=4))
    mgr.register_node("w2", 4096, 4, [])
    moves = mgr.rebalance()
    assert [(m.instance_id, m.to_node) for m in moves] == [("c-0", "w2"), ("c-1", "w2")]
    assert ("w1", p.terminate("c-0")) in sent.sent
    launch, = [m for n, m in sent.of_type(p.LAUNCH) if n == "w2" and m.payload["instance_id"] == "c-0"]
    assert launch.payload["attempt"] == 1
    assert mgr.active_counts() == {"w1": 2, "w2": 2}
    # the old attempt's report is logged but does not finish the new one
    mgr.record(record("c-0", "c"), 0)
    assert mgr.placements["c-0"].status is InstanceStatus.DISPATCHED


def test_busy_rejection_requeues():
    mgr, _, _ = manager_with_workers(1)
    mgr.submit(WorkloadSpec("c", "image"))
    mgr.on_launch_rejected("w1", "c-0", p.BUSY)
    assert mgr.instance_states() == {"c-0": "queued"}
    assert mgr.nodes["w1"].mem_allocated_mb == 0
    mgr.retry_queue()
    assert mgr.placements["c-0"].status is InstanceStatus.DISPATCHED


def test_launch_ack_marks_running():
    mgr, _, _ = manager_with_workers(1)
    mgr.submit(WorkloadSpec("c", "image"))
    mgr.on_launch_ack("w1", "c-0")
    assert mgr.placements["c-0"].status is InstanceStatus.RUNNING


def test_summaries_and_compare():
    mgr = Manager()
    mgr.record(record("a-0", "a", time=1.6), 0)
    mgr.record(record("a-1", "a", time=1.8), 0)
    mgr.record(record("a-2", "a", time=99, outcome="failure"), 0)
    s = mgr.summarize("workload_id:a")
    assert (s.count, s.success_count, s.failure_count) == (3, 2, 1)
    assert s.stats["proc_time_ms"]["mean"] == pytest.approx(1.7)
    assert mgr.summarize("workload_id:none").count == 0
    with pytest.raises(UnknownFilterField):
        mgr.summarize("colour:red")
    mgr.record(record("b-0", "b", rc=UNIKRAFT, mem=45, time=2.05, cpu=0.17), 0)
    report = mgr.compare("kind:container", "kind:unikernel")
    assert report.mem_saving_pct == pytest.approx(36.62, abs=0.005)
    assert report.proc_time_delta_ms == pytest.approx(0.35)
    assert report.verdict == "B lighter, A faster"
    same = mgr.compare("workload_id:a", "workload_id:a")
    assert (same.mem_saving_pct, same.proc_time_delta_ms) == (0, 0)
    with pytest.raises(EmptySet) as info:
        mgr.compare("workload_id:a", "workload_id:zzz")
    assert info.value.side == "B"


def test_metrics_log_replay_rebuilds_summaries(tmp_path):
    log = MetricsLog(tmp_path / "m.jsonl")
    mgr = Manager(metrics_log=log)
    for k in range(5):
        mgr.record(record(f"a-{k}", "a", mem=40 + k, time=1 + k / 10), 0)
    mgr.record(record("a-0", "a"), 0)
    again = MetricsLog.replay(tmp_path / "m.jsonl")
    assert again.dumps() == log.dumps()
    from hybridedge.reports import summarize
    assert summarize(again.records) == mgr.summarize()


def test_seed_derivation_is_stable():
    assert derive_seed(0, "a-0", 0) == derive_seed(0, "a-0", 0)
    assert len({derive_seed(s, i, a) for s in (0, 1) for i in ("a-0", "a-1") for a in (0, 1)}) == 8


# --- randomized invariants -------------------------------------------------

def check_capacity(mgr):
    for node in mgr.nodes.values():
        assert node.mem_allocated_mb <= node.mem_capacity_mb + 1e-6, node.node_id


def check_invariants(mgr):
    states = mgr.instance_states()
    active_per_node = {}
    for iid, pl in mgr.placements.items():
        if pl.status in (InstanceStatus.DISPATCHED, InstanceStatus.RUNNING):
            active_per_node.setdefault(pl.node_id, set()).add(iid)
    for node in mgr.nodes.values():
        assert node.mem_allocated_mb <= node.mem_capacity_mb + 1e-6
        ids = active_per_node.get(node.node_id, set())
        # every active instance is on exactly its node, and the ledger matches its estimates
        assert node.running_instances == ids
        expected = sum(mgr.specs[mgr.placements[i].workload_id].est_mem_mb for i in ids)
        assert node.mem_allocated_mb == pytest.approx(expected, abs=1e-6)
    assert set(states.values()) <= {"queued", "dispatched", "running", "completed", "failed"}
    assert len({e.spec.id for e in mgr.queue}) == len(mgr.queue)


def random_walk(rng, steps, check_every=1):
    n_workers = rng.randint(1, 4)
    mgr, _, clock = manager_with_workers(0)
    for k in range(n_workers):
        mgr.register_node(f"w{k + 1}", rng.choice([256, 512, 1024, 4096]), rng.randint(1, 4))
    submitted = 0
    for step in range(steps):
        clock["now"] = float(step)
        roll = rng.random()
        # node ledgers are cross-checked against placements in check_invariants
        active = sorted(i for n in mgr.nodes.values() for i in n.running_instances)
        if roll < 0.2 or not active:
            mgr.submit(WorkloadSpec(f"s{submitted}", rng.choice(["image", "stream", "audio"]),
                                    instances=rng.randint(1, 5), est_mem_mb=rng.uniform(1, 300),
                                    est_cpu_pct=rng.uniform(0, 90), priority=rng.randint(0, 3)))
            submitted += 1
        elif roll < 0.9 and active:
            finish(mgr, rng.choice(active), outcome=rng.choice(["success", "success", "failure"]))
        elif roll < 0.93:
            mgr.rebalance()
        elif roll < 0.96 and active:
            pl = mgr.placements[rng.choice(active)]
            mgr.on_launch_rejected(pl.node_id, pl.instance_id, p.BUSY)
        else:
            mgr.retry_queue()
        check_capacity(mgr)
        if step % check_every == 0:
            check_invariants(mgr)
    check_invariants(mgr)
    return mgr


@settings(max_examples=30)
@given(st.integers(0, 2**32))
def test_capacity_and_ledger_hold_on_random_walks(seed):
    random_walk(random.Random(seed), 300)


def test_capacity_safety_long_walk():
    random_walk(random.Random(20240501), 10_000, check_every=7)
