"""Deterministic simulator for preemption-aware DNN task offloading on edge devices."""

from .calendar import (CommTiming, ConfigurationError, Kind, NetworkCalendar, Reservation,
                       ReservationConflict, Slot, seconds, to_seconds)
from .config import ScenarioConfig
from .engine import InvariantViolation, Simulation, run
from .metrics import MetricsCollector, MetricsReport, render
from .scheduler import Durations, LowPriorityRequest, Priority, Scheduler, TaskRecord, TaskState
from .trace import TraceFile, generate
from .workstealer import WorkstealerController

__version__ = "0.1.0"

__all__ = [
    "CommTiming", "ConfigurationError", "Kind", "NetworkCalendar", "Reservation",
    "ReservationConflict", "Slot", "seconds", "to_seconds", "ScenarioConfig",
    "InvariantViolation", "Simulation", "run", "MetricsCollector", "MetricsReport", "render",
    "Durations", "LowPriorityRequest", "Priority", "Scheduler", "TaskRecord", "TaskState",
    "TraceFile", "generate", "WorkstealerController",
]
