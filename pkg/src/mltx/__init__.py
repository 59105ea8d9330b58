"""Simulator and checker for lock-based multi-level transaction control.

Machines run step programs over a hierarchical store.  A controller
grants locks (including operator locks for commuting partial updates),
detects deadlocks, backtracks victims and handles commit and abort.
Runs are recorded as traces and checked for serializability against a
serial replay in commit order.
"""
from .errors import (
    CarrierMismatch,
    DigestMismatch,
    InternalError,
    InvalidArgument,
    MalformedTrace,
    MltxError,
    ParseError,
    SoloAbort,
    UndeclaredLocation,
    UnresolvedLocation,
)
from .audit import audit_lock_before_touch, audit_two_phase
from .executor import RunConfig, Simulation, Trace, run
from .fuzz import FuzzConfig, fuzz
from .ops import DEFAULT_REGISTRY, Registry, aggregate, apply_op, compatible, inverse_op
from .serializability import check_serializable, cleanse, commit_order, serial_replay
from .values import Path, Store
from .workload import load_workload, parse_workload

__version__ = "0.1.0"

__all__ = [
    "CarrierMismatch",
    "DEFAULT_REGISTRY",
    "DigestMismatch",
    "FuzzConfig",
    "InternalError",
    "InvalidArgument",
    "MalformedTrace",
    "MltxError",
    "ParseError",
    "Path",
    "Registry",
    "RunConfig",
    "Simulation",
    "SoloAbort",
    "Store",
    "Trace",
    "UndeclaredLocation",
    "UnresolvedLocation",
    "aggregate",
    "apply_op",
    "audit_lock_before_touch",
    "audit_two_phase",
    "check_serializable",
    "cleanse",
    "commit_order",
    "compatible",
    "fuzz",
    "inverse_op",
    "load_workload",
    "parse_workload",
    "run",
    "serial_replay",
]
