"""Hybrid container/unikernel edge orchestrator.

Workloads are classified to a container or unikernel runtime, placed on worker
nodes by a resource-aware greedy scheduler, and run by per-node agents on a
calibrated simulated backend or as real processes.
"""

from .model import ClusterConfig, NodeState, RuntimeClass, RuntimeKind, WorkloadSpec, mem_saving_pct
from .scenarios import run_scenario

__all__ = ["ClusterConfig", "NodeState", "RuntimeClass", "RuntimeKind", "WorkloadSpec", "mem_saving_pct",
           "run_scenario"]
__version__ = "0.1.0"
