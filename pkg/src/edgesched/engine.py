"""Deterministic discrete-event simulation of the edge network.

Each device generates one frame per period.  A frame runs the object
detector locally, then (unless nothing was detected) a high-priority (HP)
task, and on HP completion a request of 1..4 low-priority (LP) DNN tasks.
The active algorithm (controller scheduler or one of the workstealers)
decides where and when the tasks run.
"""

from __future__ import annotations

import collections
import hashlib
import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Optional

from .calendar import NetworkCalendar, seconds
from .config import ScenarioConfig
from .metrics import Event, MetricsCollector, MetricsReport
from .scheduler import (AllocationPlan, LowPriorityRequest, PreemptedAndAllocated, Priority,
                        Reallocated, Rejected, Scheduler, TaskRecord, TaskState)
from .trace import TraceFile


class InvariantViolation(AssertionError):
    """Raised when the simulation breaks one of its own guarantees."""

    def __init__(self, message: str, recent_events: list):
        super().__init__(message)
        self.recent_events = recent_events


class EventQueue:
    """Min-heap of (time, sequence, kind, payload); ties break by insertion order."""

    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()

    def push(self, time: int, kind: str, payload: Any = None) -> None:
        if time < 0:
            raise ValueError("event time must be non-negative")
        heapq.heappush(self._heap, (time, next(self._seq), kind, payload))

    def pop(self):
        time, _, kind, payload = heapq.heappop(self._heap)
        return time, kind, payload

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class Frame:
    id: int
    index: int
    device: int
    generation_time: int
    trace_value: int
    deadline: int
    stage_status: dict = field(default_factory=lambda: {1: "not_started", 2: "not_started",
                                                        3: "not_started"})
    request_id: Optional[int] = None
    completed: bool = False

    @property
    def done(self) -> bool:
        s = self.stage_status
        if s[1] != "completed":
            return False
        if self.trace_value == -1:
            return True
        if s[2] != "completed":
            return False
        return self.trace_value == 0 or s[3] == "completed"


def stagger_offsets(config: ScenarioConfig) -> list[int]:
    rng = random.Random(config.stagger_seed)
    return [seconds(rng.uniform(0.0, config.max_stagger_offset)) for _ in range(config.devices)]


def schedule_frames(trace: TraceFile, config: ScenarioConfig,
                    offsets: Optional[list[int]] = None) -> list[tuple[int, int, int, int]]:
    """Return (generation_time, device, frame_index, trace_value) for every cell.

    The first half of the devices start at the top of each period and the
    rest half a period later; each device adds its own fixed random offset.
    """
    if trace.frames and trace.width != config.devices:
        raise ValueError(f"trace has {trace.width} columns, config has {config.devices} devices")
    if offsets is None:
        offsets = stagger_offsets(config)
    period = seconds(config.frame_period)
    early = (config.devices + 1) // 2
    out = []
    for k, row in enumerate(trace.frames):
        for d, value in enumerate(row):
            shift = 0 if d < early else period // 2
            out.append((k * period + shift + offsets[d], d, k, value))
    out.sort()
    return out


class NoiseModel:
    """Runtime variation around the benchmark timings.

    HP execution is a fixed sleep for the allotted window, so only LP
    processing and image transfers are perturbed.
    """

    def __init__(self, config: ScenarioConfig):
        self.enabled = config.noise == "gaussian"
        self.sigma_proc = seconds(config.proc_sigma)
        self.sigma_comm = seconds(config.comm_sigma)
        self._rng = random.Random(config.noise_seed)

    def processing(self, benchmark: int) -> int:
        if not self.enabled or self.sigma_proc == 0:
            return benchmark
        return max(0, benchmark + int(round(self._rng.gauss(0.0, self.sigma_proc))))

    def transfer_overrun(self, padding: int) -> int:
        """How far an image transfer spills past its slot (0 without noise)."""
        if not self.enabled or self.sigma_comm == 0:
            return 0
        extra = int(round(self._rng.gauss(0.0, self.sigma_comm)))
        return max(0, extra - padding)


def execute_with_noise(slot_length: int, benchmark: int, noise: NoiseModel,
                       start_delay: int = 0) -> tuple[int, bool]:
    """Actual run time and whether it overruns the slot (the device then kills it)."""
    actual = noise.processing(benchmark)
    return actual, start_delay + actual > slot_length


class SchedulerController:
    """Routes pipeline requests through the controller's allocation algorithms."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        cfg = sim.config
        self.preemption = cfg.preemption
        self.durations = cfg.durations()
        self.timing = cfg.timing()
        self.scheduler = Scheduler(sim.calendar, self.timing, self.durations, sim.tasks)

    def submit_hp(self, task: TaskRecord, now: int) -> None:
        sim = self.sim
        outcome = self.scheduler.allocate_high_priority(task, self.preemption, now)
        counters = self.scheduler.allocation_cost_counters()
        sim.work["hp_tasks_scanned"] += counters.tasks_scanned
        via = isinstance(outcome, PreemptedAndAllocated)
        sim.latency("hp_preemption" if via else "hp_initial", counters.wall_time)
        if isinstance(outcome, Rejected):
            sim.hp_failed(task, now, outcome.reason)
            return
        plan = outcome.plan
        sim.check_plan(task, plan)
        sim.push(plan.processing.start + self.durations.hp, "hp_done", (task.id, task.version, via))
        if via:
            self._handle_victim(outcome, now)

    def _handle_victim(self, outcome: PreemptedAndAllocated, now: int) -> None:
        sim = self.sim
        victim = sim.tasks[outcome.victim_task_id]
        sim.record("preemption", f"{victim.id}:{victim.version}", now, task=victim.id, cores=outcome.victim_cores)
        sim.latency("realloc", self.scheduler.realloc_counters.wall_time)
        success = isinstance(outcome.victim_realloc, Reallocated)
        sim.record("realloc", f"{victim.id}:{victim.version}", now, task=victim.id, success=success)
        if success:
            self._launch(victim, outcome.victim_realloc.plan, now)
        else:
            sim.lp_finished(victim, False, now)

    def hp_finished(self, task: TaskRecord, now: int) -> None:
        self.scheduler.finish(task, now, TaskState.COMPLETED)

    def submit_lp(self, request: LowPriorityRequest, now: int) -> None:
        sim = self.sim
        plans = self.scheduler.allocate_low_priority_set(request, now)
        counters = self.scheduler.allocation_cost_counters()
        sim.work["lp_windows_probed"] += counters.windows_probed
        sim.latency("lp_set", counters.wall_time)
        for task_id in request.tasks:
            task = sim.tasks[task_id]
            plan = plans[task_id]
            if plan is None:
                sim.lp_finished(task, False, now)
            else:
                self._launch(task, plan, now)

    def _launch(self, task: TaskRecord, plan: AllocationPlan, now: int) -> None:
        sim = self.sim
        sim.check_plan(task, plan)
        offloaded = plan.device != task.source_device
        sim.record("lp_allocated", f"{task.id}:{task.version}", now, task=task.id,
                   offloaded=offloaded, cores=plan.cores)
        if offloaded:
            sim.metrics.offloaded_task(task.id)
        proc = plan.processing
        delay = 0
        if plan.image_transfer is not None:
            transfer = plan.image_transfer
            spill = sim.noise.transfer_overrun(self.timing.jitter_padding)
            delay = max(0, transfer.end + spill - proc.start)
        actual, overrun = execute_with_noise(proc.end - proc.start,
                                             self.durations.benchmark(plan.cores), sim.noise, delay)
        if overrun:
            sim.push(proc.end, "lp_violation", (task.id, task.version))
        else:
            sim.push(proc.start + delay + actual, "lp_done", (task.id, task.version))

    def handle(self, kind: str, payload, now: int) -> None:
        task_id, version = payload
        task = self.sim.tasks[task_id]
        if task.version != version:
            return
        if kind == "lp_done":
            self.scheduler.finish(task, now, TaskState.COMPLETED)
            self.sim.lp_finished(task, True, now)
        elif kind == "lp_violation":
            self.scheduler.finish(task, now, TaskState.FAILED)
            self.sim.record("violation", task.id, now, task=task.id)
            self.sim.lp_finished(task, False, now)
        else:
            raise ValueError(f"unexpected event {kind}")


class Simulation:
    def __init__(self, config: ScenarioConfig, trace: TraceFile, keep_log: bool = False):
        self.config = config.validate()
        self.trace = trace
        self.queue = EventQueue()
        self.calendar = NetworkCalendar(config.devices, config.cores_per_device)
        self.tasks: dict[int, TaskRecord] = {}
        self.requests: dict[int, LowPriorityRequest] = {}
        self.frames: dict[int, Frame] = {}
        self.metrics = MetricsCollector(config.scenario, config.algorithm, config.preemption)
        self.noise = NoiseModel(config)
        self.work = collections.Counter()
        self._ids = itertools.count(1)
        self._request_ids = itertools.count(1)
        self._task_frame: dict[int, int] = {}
        self._resolved: set[int] = set()
        self._request_outcomes: dict[int, dict[int, bool]] = {}
        self._digest = hashlib.sha256()
        self._recent = collections.deque(maxlen=200)
        self.event_log: Optional[list] = [] if keep_log else None
        self.policy = self._make_policy()

    def _make_policy(self):
        if self.config.algorithm == "scheduler":
            return SchedulerController(self)
        from .workstealer import WorkstealerController
        return WorkstealerController(self, centralized=self.config.algorithm == "centralized_ws")

    # -- services for controllers -----------------------------------------

    def push(self, time: int, kind: str, payload=None) -> None:
        self.queue.push(time, kind, payload)

    def record(self, type_: str, key, time: int, **data) -> None:
        self.metrics.record(Event(f"{type_}:{key}", type_, time, data))

    def latency(self, kind: str, seconds_: float) -> None:
        self.metrics._latency[kind].append(seconds_)

    def new_task_id(self) -> int:
        return next(self._ids)

    def check_plan(self, task: TaskRecord, plan: AllocationPlan) -> None:
        try:
            plan.check(task.deadline)
            if task.is_high:
                assert plan.device == task.source_device and plan.cores == 1
        except AssertionError as exc:
            raise InvariantViolation(str(exc), list(self._recent)) from exc

    def hp_failed(self, task: TaskRecord, now: int, reason: str = "") -> None:
        task.state = TaskState.FAILED
        frame = self.frames[self._task_frame[task.id]]
        frame.stage_status[2] = "failed"
        self.record("hp_failed", task.id, now, task=task.id, reason=reason)

    def lp_finished(self, task: TaskRecord, success: bool, now: int) -> None:
        if task.id in self._resolved:
            raise InvariantViolation(f"task {task.id} resolved twice", list(self._recent))
        self._resolved.add(task.id)
        if success:
            if now > task.deadline:
                raise InvariantViolation(f"task {task.id} completed after its deadline",
                                         list(self._recent))
            task.state = TaskState.COMPLETED
        elif task.state not in (TaskState.CANCELLED, TaskState.FAILED):
            task.state = TaskState.FAILED
        offloaded = task.allocated_device is not None and task.allocated_device != task.source_device
        if success:
            self.record("lp_completed", task.id, now, task=task.id, request=task.request_id,
                        offloaded=offloaded)
        else:
            self.record("lp_failed", task.id, now, task=task.id, request=task.request_id)
        outcomes = self._request_outcomes[task.request_id]
        outcomes[task.id] = success
        request = self.requests[task.request_id]
        if len(outcomes) == len(request.tasks):
            frame = self.frames[self._task_frame[task.id]]
            frame.stage_status[3] = "completed" if all(outcomes.values()) else "failed"
            self._maybe_complete(frame, now)

    # -- event handlers ----------------------------------------------------

    def _on_frame(self, now: int, payload) -> None:
        device, index, value = payload
        frame_id = index * self.config.devices + device
        frame = Frame(frame_id, index, device, now, value, now + seconds(self.config.frame_period))
        self.frames[frame_id] = frame
        self.record("frame_generated", frame_id, now, frame=frame_id, trace_value=value)
        self.calendar.prune(now)
        # the detector is a fixed local overhead outside the controller's calendar
        frame.stage_status[1] = "running"
        self.push(now + seconds(self.config.detector_duration), "detector_done", frame_id)

    def _on_detector_done(self, now: int, frame_id: int) -> None:
        frame = self.frames[frame_id]
        frame.stage_status[1] = "completed"
        self.record("detector_done", frame_id, now, frame=frame_id)
        if frame.trace_value == -1:
            self._maybe_complete(frame, now)
            return
        task = TaskRecord(self.new_task_id(), Priority.HIGH, frame.device, now,
                          min(now + seconds(self.config.hp_deadline_budget), frame.deadline))
        self.tasks[task.id] = task
        self._task_frame[task.id] = frame_id
        self.record("hp_generated", task.id, now, task=task.id)
        frame.stage_status[2] = "running"
        self.policy.submit_hp(task, now)

    def _on_hp_done(self, now: int, payload) -> None:
        task_id, version, via = payload
        task = self.tasks[task_id]
        if version != task.version:
            return
        if now > task.deadline:
            raise InvariantViolation(f"HP task {task_id} finished late", list(self._recent))
        self.policy.hp_finished(task, now)
        task.state = TaskState.COMPLETED
        frame = self.frames[self._task_frame[task_id]]
        frame.stage_status[2] = "completed"
        self.record("hp_completed", task_id, now, task=task_id, frame=frame.id, via_preemption=via)
        if frame.trace_value == 0:
            self._maybe_complete(frame, now)
            return
        request_id = next(self._request_ids)
        members = []
        for _ in range(frame.trace_value):
            lp = TaskRecord(self.new_task_id(), Priority.LOW, frame.device, now, frame.deadline,
                            core_config=2, request_id=request_id)
            self.tasks[lp.id] = lp
            self._task_frame[lp.id] = frame.id
            members.append(lp.id)
        request = LowPriorityRequest(request_id, frame.device, members, frame.deadline, task_id)
        self.requests[request_id] = request
        self._request_outcomes[request_id] = {}
        frame.request_id = request_id
        frame.stage_status[3] = "running"
        self.record("lp_request", request_id, now, request=request_id, frame=frame.id,
                    size=len(members))
        self.policy.submit_lp(request, now)

    def _maybe_complete(self, frame: Frame, now: int) -> None:
        if frame.done and not frame.completed:
            frame.completed = True
            self.record("frame_completed", frame.id, now, frame=frame.id)

    # -- main loop ---------------------------------------------------------

    def run(self) -> MetricsReport:
        for gen, device, index, value in schedule_frames(self.trace, self.config):
            self.push(gen, "frame", (device, index, value))
        handlers = {"frame": self._on_frame, "detector_done": self._on_detector_done,
                    "hp_done": self._on_hp_done}
        while self.queue:
            now, kind, payload = self.queue.pop()
            entry = (now, kind, payload)
            self._recent.append(entry)
            self._digest.update(repr(entry).encode())
            if self.event_log is not None:
                self.event_log.append(entry)
            handler = handlers.get(kind)
            if handler is not None:
                handler(now, payload)
            else:
                self.policy.handle(kind, payload, now)
        self._finalize_stragglers()
        report = self.metrics.finalize()
        # centralized workstealing has no reference reallocation figures to compare against
        report.realloc_comparable = self.config.algorithm != "centralized_ws"
        report.latency["work"] = dict(sorted(self.work.items()))
        return report

    def _finalize_stragglers(self) -> None:
        end = max((f.deadline for f in self.frames.values()), default=0)
        for task in list(self.tasks.values()):
            if not task.is_high and task.id not in self._resolved:
                on_finish = getattr(self.policy, "abandoned", None)
                if on_finish is not None:
                    on_finish(task, end)
                self.lp_finished(task, False, end)

    @property
    def digest(self) -> str:
        return self._digest.hexdigest()


def run(scenario: ScenarioConfig, trace: TraceFile) -> MetricsReport:
    return Simulation(scenario, trace).run()
