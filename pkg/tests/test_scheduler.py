from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridedge.errors import NoCapacity
from hybridedge.model import ClusterConfig, Health, NodeState, PlacementReason
from hybridedge.scheduler import (
    Admit,
    Migration,
    Orphan,
    Queued,
    admit,
    apply_decision,
    place,
    rebalance,
    requeue_orphans,
)

from helpers import DOCKER, vspec, workers

CFG = ClusterConfig()


def test_sixteen_over_four_identical_workers():
    spec = vspec("cv", instances=16, app_class="CarDetect")
    decision = place(spec, DOCKER, workers(4), CFG)
    assert decision.counts_by_node() == {"w1": 4, "w2": 4, "w3": 4, "w4": 4}
    # Round-robin falls out of debiting after every pick.
    assert [a.node_id for a in decision.assignments[:5]] == ["w1", "w2", "w3", "w4", "w1"]


def test_prefers_emptier_node():
    nodes = [NodeState("a", mem_allocated_mb=2000), NodeState("b")]
    assert place(vspec(), DOCKER, nodes, CFG).assignments[0].node_id == "b"


def test_weights_change_preference():
    # a: lots of free memory, no free cpu headroom; b: the reverse.
    nodes = [NodeState("a", mem_allocated_mb=0, cpu_allocated_pct=300),
             NodeState("b", mem_allocated_mb=3000, cpu_allocated_pct=0)]
    spec = vspec(mem=10, cpu=10)
    assert place(spec, DOCKER, nodes, ClusterConfig(weight_mem=1, weight_cpu=0)).assignments[0].node_id == "a"
    assert place(spec, DOCKER, nodes, ClusterConfig(weight_mem=0, weight_cpu=1)).assignments[0].node_id == "b"


def test_no_workers_queues():
    assert admit(vspec(), [], CFG) == Queued()
    with pytest.raises(NoCapacity):
        place(vspec(), DOCKER, [], CFG)


def test_ineligible_nodes_skipped():
    nodes = [NodeState("a", health=Health.SUSPECT), NodeState("b", schedulable=False)]
    assert isinstance(admit(vspec(), nodes, CFG), Queued)


def test_admission_is_all_or_nothing():
    nodes = workers(1, mem=300)
    assert isinstance(admit(vspec(mem=100, instances=3), nodes, CFG), Admit)
    assert isinstance(admit(vspec(mem=100, instances=4), nodes, CFG), Queued)


def test_rebalance_eight_to_even():
    # Hand-run of the loop: the busiest node gives its smallest id to the idlest node.
    w1 = NodeState("w1", running_instances=frozenset(f"c-{k}" for k in range(8)))
    nodes = [w1, *workers(4)[1:]]
    moves = rebalance(nodes, CFG)
    assert [(m.instance_id, m.to_node) for m in moves] == [
        ("c-0", "w2"), ("c-1", "w3"), ("c-2", "w4"), ("c-3", "w2"), ("c-4", "w3"), ("c-5", "w4"),
    ]


def test_rebalance_threshold_and_capacity():
    w1 = NodeState("w1", running_instances=frozenset({"a", "b", "c"}))
    assert rebalance([w1, NodeState("w2")], ClusterConfig(rebalance_threshold=3)) == []
    tiny = NodeState("w2", mem_capacity_mb=10)
    assert rebalance([w1, tiny], CFG, {k: (50.0, 1.0) for k in "abc"}) == []


def test_migration_needs_distinct_nodes():
    with pytest.raises(ValueError):
        Migration("a", "w1", "w1")


@given(st.lists(st.integers(0, 12), min_size=2, max_size=6), st.integers(1, 3))
def test_rebalance_postcondition(counts, threshold):
    nodes = [NodeState(f"n{k}", running_instances=frozenset(f"n{k}-i{j}" for j in range(c)))
             for k, c in enumerate(counts)]
    moves = rebalance(nodes, ClusterConfig(rebalance_threshold=threshold))
    final = Counter({n.node_id: len(n.running_instances) for n in nodes})
    for m in moves:
        final[m.from_node] -= 1
        final[m.to_node] += 1
    assert max(final.values()) - min(final.values()) <= threshold
    assert sum(final.values()) == sum(counts)


def test_requeue_places_singly_and_reports_leftovers():
    nodes = workers(2, mem=200)
    specs = {"x": vspec("x", mem=150)}
    orphans = [Orphan(f"x-{k}", "x", DOCKER) for k in range(3)]
    decisions, leftover = requeue_orphans(orphans, nodes, CFG, specs, now=5.0)
    assert [d.assignments[0].node_id for d in decisions] == ["w1", "w2"]
    assert all(d.reason is PlacementReason.REQUEUE_AFTER_FAILURE for d in decisions)
    assert leftover == [orphans[2]]


specs_strategy = st.lists(st.tuples(st.integers(1, 6), st.floats(1, 1500), st.floats(0, 150)), max_size=8)


@given(st.lists(st.floats(100, 4096), min_size=0, max_size=4), specs_strategy)
def test_admit_iff_place_and_capacity_holds(capacities, stream):
    nodes = {f"n{k}": NodeState(f"n{k}", mem_capacity_mb=c, cpu_cores=2) for k, c in enumerate(capacities)}
    for k, (n, mem, cpu) in enumerate(stream):
        spec = vspec(f"s{k}", instances=n, mem=mem, cpu=cpu)
        outcome = admit(spec, nodes.values(), CFG)
        if isinstance(outcome, Admit):
            decision = place(spec, DOCKER, nodes.values(), CFG)
            nodes = apply_decision(nodes, decision, spec)
        else:
            with pytest.raises(NoCapacity):
                place(spec, DOCKER, nodes.values(), CFG)
        for node in nodes.values():
            assert node.mem_allocated_mb <= node.mem_capacity_mb + 1e-9
            assert node.cpu_allocated_pct <= node.cpu_capacity_pct + 1e-9
