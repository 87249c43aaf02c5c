"""High- and low-priority allocation over a :class:`NetworkCalendar`.

High-priority (HP) tasks run on their source device with one core and are
placed at the instant their allocation message lands, or not at all; with
preemption enabled a single conflicting low-priority (LP) task is evicted to
make room.  LP requests are placed over the completion instants of existing
work, preferring the source device, then the least loaded devices, and
finally widened to four cores where the device allows it.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Optional, Union

from .calendar import Kind, NetworkCalendar, CommTiming, Slot, seconds


class Priority(str, enum.Enum):
    HIGH = "high"
    LOW = "low"


class TaskState(str, enum.Enum):
    PENDING = "pending"
    ALLOCATED = "allocated"
    RUNNING = "running"
    COMPLETED = "completed"
    PREEMPTED = "preempted"
    FAILED = "failed"
    CANCELLED = "cancelled"


LIVE_STATES = (TaskState.ALLOCATED, TaskState.RUNNING)


@dataclass
class TaskRecord:
    id: int
    priority: Priority
    source_device: int
    arrival: int
    deadline: int
    core_config: int = 1
    request_id: Optional[int] = None
    allocated_device: Optional[int] = None
    state: TaskState = TaskState.PENDING
    reservations: list[int] = field(default_factory=list)
    # device currently holding the task's input image
    input_device: Optional[int] = None
    # when the input reaches allocated_device (0 if it starts there)
    transfer_end: int = 0
    # bumped whenever outstanding execution events must be invalidated
    version: int = 0

    def __post_init__(self):
        if self.deadline <= self.arrival:
            raise ValueError("deadline must be after arrival")
        if self.input_device is None:
            self.input_device = self.source_device

    @property
    def is_high(self) -> bool:
        return self.priority is Priority.HIGH


@dataclass
class LowPriorityRequest:
    id: int
    source_device: int
    tasks: list[int]
    deadline: int
    spawned_by: Optional[int] = None

    def __post_init__(self):
        if not 1 <= len(self.tasks) <= 4:
            raise ValueError("an LP request holds 1..4 tasks")


@dataclass
class AllocationPlan:
    task_id: int
    slots: list[Slot]
    offloaded: bool = False

    def _one(self, kind: Kind) -> Optional[Slot]:
        for s in self.slots:
            if s.kind is kind:
                return s
        return None

    @property
    def alloc_msg(self) -> Slot:
        return self._one(Kind.ALLOC_MSG)

    @property
    def image_transfer(self) -> Optional[Slot]:
        return self._one(Kind.IMAGE_TRANSFER)

    @property
    def processing(self) -> Slot:
        return self._one(Kind.PROCESSING)

    @property
    def state_update(self) -> Slot:
        return self._one(Kind.STATE_UPDATE)

    @property
    def device(self) -> int:
        return self.processing.device

    @property
    def cores(self) -> int:
        return self.processing.cores

    def check(self, deadline: int) -> None:
        """Assert slot composition and ordering; raises AssertionError."""
        kinds = sorted(s.kind.value for s in self.slots)
        expected = ["alloc_msg", "processing", "state_update"]
        if self.offloaded:
            expected.append("image_transfer")
        assert kinds == sorted(expected), f"plan {self.task_id} has slots {kinds}"
        alloc, proc, su = self.alloc_msg, self.processing, self.state_update
        floor = alloc.end
        if self.image_transfer is not None:
            assert alloc.end <= self.image_transfer.start
            floor = self.image_transfer.end
        assert floor <= proc.start, f"plan {self.task_id} processes before its input arrives"
        assert proc.end <= su.start, f"plan {self.task_id} reports before finishing"
        assert su.end <= deadline, f"plan {self.task_id} ends after its deadline"


@dataclass
class Allocated:
    plan: AllocationPlan


@dataclass
class Rejected:
    reason: str = ""


@dataclass
class Reallocated:
    plan: AllocationPlan


@dataclass
class Cancelled:
    reason: str = ""


ReallocOutcome = Union[Reallocated, Cancelled]


@dataclass
class PreemptedAndAllocated:
    plan: AllocationPlan
    victim_task_id: int
    victim_realloc: ReallocOutcome
    victim_cores: int = 0


HpOutcome = Union[Allocated, Rejected, PreemptedAndAllocated]


@dataclass
class CostCounters:
    tasks_scanned: int = 0
    windows_probed: int = 0
    wall_time: float = 0.0


@dataclass(frozen=True)
class Durations:
    """Benchmark processing times and paddings, in microseconds."""

    hp: int = seconds(0.98)
    lp2: int = seconds(16.862)
    lp4: int = seconds(11.611)
    hp_padding: int = 0
    lp_padding: int = seconds(0.5)

    def slot(self, cores: int, high: bool = False) -> int:
        if high:
            return self.hp + self.hp_padding
        return (self.lp2 if cores == 2 else self.lp4) + self.lp_padding

    def benchmark(self, cores: int, high: bool = False) -> int:
        if high:
            return self.hp
        return self.lp2 if cores == 2 else self.lp4


class Scheduler:
    """Controller-side allocation algorithms.

    ``tasks`` is the registry of every task the controller knows about; it is
    shared with the caller, which updates states as executions finish.
    """

    def __init__(self, calendar: NetworkCalendar, timing: CommTiming,
                 durations: Durations = Durations(),
                 tasks: Optional[dict[int, TaskRecord]] = None):
        self.cal = calendar
        self.timing = timing
        self.durations = durations
        self.tasks: dict[int, TaskRecord] = {} if tasks is None else tasks
        self._lp_on_device: list[set[int]] = [set() for _ in range(calendar.n_devices)]
        self._counters = CostCounters()
        self.realloc_counters = CostCounters()
        self.victim_log: list[tuple[list[int], int]] = []

    # -- bookkeeping -------------------------------------------------------

    def allocation_cost_counters(self) -> CostCounters:
        return self._counters

    def lp_count(self, device: int) -> int:
        return len(self._lp_on_device[device])

    def _start_call(self) -> float:
        self._counters = CostCounters()
        self.cal.scanned = 0
        return time.perf_counter()

    def _end_call(self, started: float) -> None:
        self._counters.tasks_scanned = self.cal.scanned
        self._counters.wall_time = time.perf_counter() - started

    def _commit(self, task: TaskRecord, plan: AllocationPlan) -> None:
        plan.check(task.deadline)
        task.reservations = self.cal.reserve(task.id, plan.slots)
        task.allocated_device = plan.device
        task.core_config = plan.cores
        task.state = TaskState.ALLOCATED
        if not task.is_high:
            self._lp_on_device[plan.device].add(task.id)

    def finish(self, task: TaskRecord, at: int, state: TaskState) -> None:
        """Record the end of a task's execution; frees cores held past ``at``."""
        proc = self._processing_reservation(task)
        if proc is not None and proc.start < at < proc.end:
            self.cal.truncate(proc.id, at)
        task.state = state
        self._forget(task)

    def _forget(self, task: TaskRecord) -> None:
        if task.allocated_device is not None:
            self._lp_on_device[task.allocated_device].discard(task.id)

    def _processing_reservation(self, task: TaskRecord):
        for rid in task.reservations:
            try:
                r = self.cal.get(rid)
            except KeyError:
                continue
            if r.kind is Kind.PROCESSING:
                return r
        return None

    # -- high priority -----------------------------------------------------

    def _plan_high_priority(self, task: TaskRecord, now: int):
        """Build the HP plan at its only admissible start; returns (plan, reason)."""
        t = self.timing
        alloc = self.cal.earliest_link_window(t.slot("alloc_hp"), now, task.deadline)
        if alloc is None:
            return None, "no link slot for allocation message"
        t1 = alloc[1]
        t2 = t1 + self.durations.slot(1, high=True)
        su = self.cal.earliest_link_window(t.slot("state_update"), t2, task.deadline)
        if su is None:
            return None, "state update cannot precede deadline"
        plan = AllocationPlan(task.id, [
            Slot(Kind.ALLOC_MSG, *alloc),
            Slot(Kind.PROCESSING, t1, t2, device=task.source_device, cores=1),
            Slot(Kind.STATE_UPDATE, *su),
        ])
        return plan, ""

    def allocate_high_priority(self, task: TaskRecord, preemption: bool, now: int) -> HpOutcome:
        if not task.is_high:
            raise ValueError("allocate_high_priority needs a high-priority task")
        started = self._start_call()
        try:
            if now > task.deadline:
                return Rejected("deadline passed")
            plan, reason = self._plan_high_priority(task, now)
            if plan is None:
                return Rejected(reason)
            proc = plan.processing
            self._counters.windows_probed += 1
            if self.cal.fits(proc.device, 1, proc.start, proc.end):
                self._commit(task, plan)
                return Allocated(plan)
            if not preemption:
                return Rejected("source device saturated")
            victim = self.select_preemption_victim(proc.device, (proc.start, proc.end), 1)
            if victim is None:
                return Rejected("no preemptable task")
            return self.preempt_and_allocate(task, self.tasks[victim], now, plan)
        finally:
            self._end_call(started)

    def select_preemption_victim(self, device: int, window: tuple[int, int],
                                 cores_needed: int) -> Optional[int]:
        """Farthest-deadline conflicting LP task; ties go to later arrival, then larger id."""
        candidates = [i for i in self.cal.conflicting_tasks(device, *window, cores_needed)
                      if i in self.tasks and not self.tasks[i].is_high]
        if not candidates:
            self.victim_log.append((candidates, -1))
            return None
        victim = max(candidates, key=lambda i: (self.tasks[i].deadline, self.tasks[i].arrival, i))
        self.victim_log.append((candidates, victim))
        return victim

    def preempt_and_allocate(self, hp_task: TaskRecord, victim: TaskRecord, now: int,
                             plan: Optional[AllocationPlan] = None):
        """Evict one victim, place the HP task, then try to re-place the victim.

        Returns ``Rejected`` without touching the calendar when removing the
        victim alone would not free enough cores.
        """
        if plan is None:
            plan, reason = self._plan_high_priority(hp_task, now)
            if plan is None:
                return Rejected(reason)
        proc = plan.processing
        self._counters.windows_probed += 1
        if not self.cal.fits(proc.device, 1, proc.start, proc.end, exclude=(victim.id,)):
            return Rejected("single preemption insufficient")
        # the victim's input stays where its transfer (if any) already landed
        if victim.allocated_device is not None and victim.transfer_end <= now:
            victim.input_device = victim.allocated_device
        victim_cores = victim.core_config
        self.cal.release_task(victim.id, now)
        victim.state = TaskState.PREEMPTED
        victim.version += 1
        self._forget(victim)
        self._commit(hp_task, plan)
        pre = self.cal.earliest_link_window(self.timing.slot("preemption"), now, now + seconds(3600))
        if pre is not None:
            hp_task.reservations += self.cal.reserve(hp_task.id, [Slot(Kind.PREEMPTION_MSG, *pre)])
        # reallocation is costed separately from the HP decision
        scanned, probes = self.cal.scanned, self._counters.windows_probed
        began = time.perf_counter()
        realloc = self.reallocate_preempted(victim, now, _nested=True)
        self.realloc_counters = CostCounters(self.cal.scanned - scanned,
                                             self._counters.windows_probed - probes,
                                             time.perf_counter() - began)
        self.cal.scanned, self._counters.windows_probed = scanned, probes
        return PreemptedAndAllocated(plan, victim.id, realloc, victim_cores)

    # -- low priority ------------------------------------------------------

    def reallocate_preempted(self, victim: TaskRecord, now: int, _nested: bool = False) -> ReallocOutcome:
        if victim.state is not TaskState.PREEMPTED:
            raise ValueError("only preempted tasks are reallocated")
        started = None if _nested else self._start_call()
        try:
            if now >= victim.deadline:
                victim.state = TaskState.CANCELLED
                return Cancelled("deadline passed")
            placed = self._allocate_tasks([victim], victim.input_device, victim.deadline, now)
            if placed[victim.id] is None:
                victim.state = TaskState.CANCELLED
                return Cancelled("no feasible window before deadline")
            return Reallocated(placed[victim.id])
        finally:
            if started is not None:
                self._end_call(started)

    def allocate_low_priority_set(self, request: LowPriorityRequest,
                                  now: int) -> dict[int, Optional[AllocationPlan]]:
        """Place every task of ``request``; unplaceable tasks come back as ``None``."""
        started = self._start_call()
        try:
            tasks = [self.tasks[i] for i in request.tasks]
            if now >= request.deadline:
                for task in tasks:
                    task.state = TaskState.FAILED
                return {task.id: None for task in tasks}
            return self._allocate_tasks(tasks, request.source_device, request.deadline, now)
        finally:
            self._end_call(started)

    def device_order(self, input_device: int) -> list[int]:
        others = [d for d in range(self.cal.n_devices) if d != input_device]
        others.sort(key=lambda d: (self.lp_count(d), d))
        return [input_device] + others

    def _allocate_tasks(self, tasks: list[TaskRecord], input_device: int, deadline: int,
                        now: int) -> dict[int, Optional[AllocationPlan]]:
        cal, t = self.cal, self.timing
        su_len = t.slot("state_update")
        points = {now}
        for d in range(cal.n_devices):
            points.update(r.end for r in cal.device_reservations(d) if now < r.end <= deadline)
        pending = list(tasks)
        partial: dict[int, tuple[list[Slot], list[int]]] = {}
        for point in sorted(points):
            if not pending:
                break
            for task in list(pending):
                slots = self._partial_allocation(task, input_device, point, deadline - su_len, now)
                if slots is None:
                    continue
                ids = cal.reserve(task.id, slots)
                partial[task.id] = (slots, ids)
                task.allocated_device = slots[-1].device
                self._lp_on_device[task.allocated_device].add(task.id)
                pending.remove(task)

        result: dict[int, Optional[AllocationPlan]] = {task.id: None for task in pending}
        for task in pending:
            task.state = TaskState.FAILED if task.state is TaskState.PENDING else TaskState.CANCELLED

        # widen two-core placements in place where the device has room
        for task in tasks:
            if task.id not in partial:
                continue
            slots, ids = partial[task.id]
            proc = slots[-1]
            if proc.cores == 2:
                end4 = proc.start + self.durations.slot(4)
                self._counters.windows_probed += 1
                if cal.fits(proc.device, 4, proc.start, end4, exclude=(task.id,)):
                    cal.remove(ids[-1])
                    wider = Slot(Kind.PROCESSING, proc.start, end4, device=proc.device, cores=4)
                    ids[-1] = cal.reserve(task.id, [wider])[0]
                    slots[-1] = wider

        for task in tasks:
            if task.id not in partial:
                continue
            slots, ids = partial[task.id]
            proc = slots[-1]
            su = cal.earliest_link_window(su_len, proc.end, deadline)
            if su is None:
                for rid in ids:
                    cal.remove(rid)
                self._forget(task)
                task.allocated_device = None
                task.state = TaskState.FAILED
                result[task.id] = None
                continue
            su_slot = Slot(Kind.STATE_UPDATE, *su)
            ids += cal.reserve(task.id, [su_slot])
            plan = AllocationPlan(task.id, slots + [su_slot],
                                  offloaded=proc.device != input_device)
            plan.check(deadline)
            task.reservations = ids
            task.transfer_end = plan.image_transfer.end if plan.offloaded else 0
            task.core_config = proc.cores
            task.state = TaskState.ALLOCATED
            result[task.id] = plan
        return result

    def _partial_allocation(self, task: TaskRecord, input_device: int, point: int,
                            latest_end: int, now: int) -> Optional[list[Slot]]:
        """Messages plus a processing slot starting at ``point`` (or once inputs land)."""
        cal, t = self.cal, self.timing
        alloc = cal.earliest_link_window(t.slot("alloc_lp"), now, latest_end)
        if alloc is None:
            return None
        transfer = None
        for cores in (2, 4):
            length = self.durations.slot(cores)
            for device in self.device_order(input_device):
                ready = alloc[1]
                if device != input_device:
                    if transfer is None:
                        transfer = cal.earliest_link_window(t.slot("image_transfer"), alloc[1], latest_end)
                    if transfer is None:
                        continue
                    ready = transfer[1]
                start = max(point, ready)
                if start + length > latest_end:
                    continue
                self._counters.windows_probed += 1
                if cal.fits(device, cores, start, start + length):
                    slots = [Slot(Kind.ALLOC_MSG, *alloc)]
                    if device != input_device:
                        slots.append(Slot(Kind.IMAGE_TRANSFER, *transfer))
                    slots.append(Slot(Kind.PROCESSING, start, start + length,
                                      device=device, cores=cores))
                    return slots
        return None
