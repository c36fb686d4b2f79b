"""Deterministic fleet simulator for kill-switch and watchdog safety drills.

A seeded discrete-event simulation pits scripted adversarial entities
against a prepared device fleet: bus-level watchdogs, opaque key custody
with equivalent-key pools, hash-chained violation evidence, a fleet-wide
kill switch with safe mode, and a confession-for-pardon protocol.
"""

from .core import (
    ActorKind,
    BusMessage,
    BusVerdict,
    Device,
    DeviceDestroyed,
    DeviceMode,
    EventRecord,
    MessageKind,
    SchedulingInPast,
    Simulator,
)
from .scenario import (
    ParseError,
    RunReport,
    ScenarioConfig,
    ValidationError,
    parse_config,
    report_from_log,
    run_scenario,
    serialize_config,
    verify_run,
)

__version__ = "0.1.0"

__all__ = [
    "ActorKind",
    "BusMessage",
    "BusVerdict",
    "Device",
    "DeviceDestroyed",
    "DeviceMode",
    "EventRecord",
    "MessageKind",
    "ParseError",
    "RunReport",
    "ScenarioConfig",
    "SchedulingInPast",
    "Simulator",
    "ValidationError",
    "parse_config",
    "report_from_log",
    "run_scenario",
    "serialize_config",
    "verify_run",
    "__version__",
]
