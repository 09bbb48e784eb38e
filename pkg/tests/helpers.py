"""Builders shared by the test modules."""

from hybridedge.manager import Manager
from hybridedge.model import (
    ClusterConfig,
    MetricsRecord,
    NodeState,
    RuntimeClass,
    RuntimeKind,
    WorkloadSpec,
    validate_workload,
)

DOCKER = RuntimeClass(RuntimeKind.CONTAINER, "docker")
UNIKRAFT = RuntimeClass(RuntimeKind.UNIKERNEL, "unikraft")


def vspec(wid="w", kind="image", instances=1, mem=None, cpu=None, priority=0, app_class=None):
    return validate_workload(
        WorkloadSpec(wid, kind, instances=instances, est_mem_mb=mem, est_cpu_pct=cpu,
                     priority=priority, app_class=app_class),
        ClusterConfig(),
    )


def workers(n, mem=4096.0, cores=4):
    return [NodeState(f"w{k + 1}", mem_capacity_mb=mem, cpu_cores=cores) for k in range(n)]


def record(iid="i-0", wid="i", rc=DOCKER, mem=71.0, time=1.7, cpu=0.29, outcome="success",
           app_class="StreamAggregate", node="w1"):
    return MetricsRecord(
        instance_id=iid, workload_id=wid, node_id=node, runtime_class=rc, app_class=app_class,
        cpu_avg_pct=cpu, mem_peak_mb=mem, proc_time_ms=time, boot_ms=0.0,
        started_at=0.0, finished_at=time, outcome=outcome,
    )


class Recorder:
    """Stands in for the service: captures what the manager sends."""

    def __init__(self):
        self.sent = []

    def __call__(self, node_id, msg):
        self.sent.append((node_id, msg))

    def of_type(self, mtype):
        return [(n, m) for n, m in self.sent if m.type == mtype]


def manager_with_workers(n=4, mem=4096.0, cores=4, config=None, **kwargs):
    clock = {"now": 0.0}
    sent = Recorder()
    mgr = Manager(config or ClusterConfig(), now=lambda: clock["now"], send=sent, **kwargs)
    for k in range(n):
        mgr.register_node(f"w{k + 1}", mem, cores)
    return mgr, sent, clock
