"""Executable model of enclave memory sharing with fine-grained permissions."""

from .core import OS_ID, Access, Config, Elasticlave, PermEntry, RegionRecord, Signal, SignalKind, SystemState
from .costs import CostCounters
from .errors import ElErr, EnforcementMismatch, WorkloadAbort
from .perm import Permission
from .workloads import RunReport, WorkloadSpec, run_workload

__all__ = [
    "OS_ID", "Access", "Config", "Elasticlave", "PermEntry", "RegionRecord", "Signal",
    "SignalKind", "SystemState", "CostCounters", "ElErr", "EnforcementMismatch",
    "WorkloadAbort", "Permission", "RunReport", "WorkloadSpec", "run_workload",
]
