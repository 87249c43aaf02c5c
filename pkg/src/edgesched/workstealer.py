"""Workstealing baselines.

Centralized: LP tasks go to one controller queue and any device with two
idle cores fetches the head after a request/response exchange with the
controller.  Decentralized: each device queues its own tasks, serves them
first, and otherwise polls peers in a freshly shuffled order until one has
work.  Neither variant checks deadlines before taking a task.
"""

from __future__ import annotations

import collections
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Union

from .calendar import Kind, Slot, seconds
from .scheduler import LowPriorityRequest, TaskRecord, TaskState

CONTROLLER = "controller"
FAR = 10 ** 15


class DuplicateTaskError(ValueError):
    pass


@dataclass
class StealQueue:
    owner: Union[str, int]
    entries: collections.deque = field(default_factory=collections.deque)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class PollPolicy:
    rng_seed: int = 0
    poll_interval: int = seconds(0.1)
    poll_message_size: int = 550


class StealQueues:
    """All steal queues, enforcing that a task sits in at most one of them."""

    def __init__(self, owners):
        self.queues = {o: StealQueue(o) for o in owners}
        self._where: dict[int, Union[str, int]] = {}

    def __getitem__(self, owner) -> StealQueue:
        return self.queues[owner]

    def append(self, owner, task_id: int) -> None:
        if task_id in self._where:
            raise DuplicateTaskError(f"task {task_id} already queued at {self._where[task_id]}")
        self.queues[owner].entries.append(task_id)
        self._where[task_id] = owner

    def popleft(self, owner) -> int:
        task_id = self.queues[owner].entries.popleft()
        del self._where[task_id]
        return task_id

    def location(self, task_id: int):
        return self._where.get(task_id)

    def total(self) -> int:
        return len(self._where)


class WorkstealerController:
    def __init__(self, sim, centralized: bool):
        self.sim = sim
        cfg = sim.config
        self.centralized = centralized
        self.preemption = cfg.preemption
        self.durations = cfg.durations()
        self.timing = cfg.timing()
        self.cal = sim.calendar
        self.policy = PollPolicy(cfg.ws_seed, seconds(cfg.poll_interval), cfg.message_sizes["poll"])
        self.rng = random.Random(cfg.ws_seed)
        owners = [CONTROLLER] if centralized else list(range(cfg.devices))
        self.queues = StealQueues(owners)
        self.parked: dict[int, int] = {}
        self.preempted: set[int] = set()
        self.polls = 0

    # -- queues ------------------------------------------------------------

    def _home(self, task: TaskRecord):
        return CONTROLLER if self.centralized else task.source_device

    def enqueue_lp(self, request: LowPriorityRequest) -> None:
        for task_id in request.tasks:
            self.queues.append(self._home(self.sim.tasks[task_id]), task_id)

    def _pop_live(self, owner, now: int) -> Optional[TaskRecord]:
        """Head of ``owner``'s queue, discarding tasks whose deadline has passed."""
        queue = self.queues[owner]
        while queue.entries:
            task = self.sim.tasks[self.queues.popleft(owner)]
            if task.deadline > now:
                return task
            self._resolve(task, False, now)
        return None

    def _round_trip(self, not_before: int, device: int) -> int:
        length = self.timing.slot("poll")
        self.polls += 1
        end = not_before
        for _ in range(2):
            window = self.cal.earliest_link_window(length, end, FAR)
            self.cal.reserve(-1 - device, [Slot(Kind.POLL_MSG, *window)])
            end = window[1]
        return end

    def acquire_work(self, device: int, now: int) -> Optional[tuple[TaskRecord, int]]:
        """Fetch one task for ``device``; returns (task, time the decision lands)."""
        if self.centralized:
            ready = self._round_trip(now, device)
            task = self._pop_live(CONTROLLER, now)
            return None if task is None else (task, ready)
        task = self._pop_live(device, now)
        if task is not None:
            return task, now
        victims = [d for d in range(self.sim.config.devices) if d != device]
        self.rng.shuffle(victims)
        cursor = now
        for victim in victims:
            cursor = self._round_trip(cursor, device)
            task = self._pop_live(victim, now)
            if task is not None:
                return task, cursor
        return None

    # -- execution ---------------------------------------------------------

    def idle_cores(self, device: int, now: int) -> int:
        return self.cal.device_capacity - self.cal.usage(device, now, now + 1)

    def execute_stolen(self, task: TaskRecord, device: int, now: int, ready: int) -> None:
        busy = self.cal.usage(device, now, now + 1)
        cores = 4 if busy == 0 else 2
        if task.input_device != device:
            window = self.cal.earliest_link_window(self.timing.slot("image_transfer"), ready, FAR)
            task.reservations = self.cal.reserve(task.id, [Slot(Kind.IMAGE_TRANSFER, *window)])
            ready = window[1] + self.sim.noise.transfer_overrun(self.timing.jitter_padding)
        else:
            task.reservations = []
        actual = self.sim.noise.processing(self.durations.benchmark(cores))
        finish = ready + actual
        hold = max(min(finish, task.deadline), now + 1)
        task.reservations += self.cal.reserve(
            task.id, [Slot(Kind.PROCESSING, now, hold, device=device, cores=cores)])
        task.allocated_device = device
        task.input_device = device
        task.core_config = cores
        task.state = TaskState.RUNNING
        offloaded = device != task.source_device
        self.sim.record("lp_allocated", f"{task.id}:{task.version}", now, task=task.id,
                        offloaded=offloaded, cores=cores)
        if offloaded:
            self.sim.metrics.offloaded_task(task.id)
        self.sim.latency("steal_to_start", (ready - now) / 1e6)
        if finish <= task.deadline:
            self.sim.push(finish, "ws_done", (task.id, task.version))
        else:
            self.sim.push(hold, "ws_violation", (task.id, task.version))

    def try_acquire(self, device: int, now: int) -> None:
        self.parked.pop(device, None)
        while self.idle_cores(device, now) >= 2:
            got = self.acquire_work(device, now)
            if got is None:
                self.parked[device] = now
                return
            self.execute_stolen(got[0], device, now, got[1])

    def _wake_parked(self, now: int) -> None:
        # a parked device keeps polling on its interval grid; rounds that
        # would have found every queue empty are skipped
        interval = self.policy.poll_interval
        for device, parked_at in sorted(self.parked.items()):
            steps = max(1, math.ceil((now - parked_at) / interval))
            self.sim.push(parked_at + steps * interval, "ws_wake", device)
        self.parked.clear()

    # -- high priority -----------------------------------------------------

    def ws_preempt_for_hp(self, device: int, hp_task: TaskRecord, now: int) -> Optional[TaskRecord]:
        running = [self.sim.tasks[r.owner] for r in self.cal.device_reservations(device)
                   if r.overlaps(now, now + 1) and r.owner in self.sim.tasks
                   and not self.sim.tasks[r.owner].is_high]
        if not running:
            return None
        victim = max(running, key=lambda t: (t.deadline, t.arrival, t.id))
        cores = victim.core_config
        self.cal.release_task(victim.id, now)
        victim.version += 1
        victim.state = TaskState.PREEMPTED
        self.preempted.add(victim.id)
        self.sim.record("preemption", f"{victim.id}:{victim.version}", now, task=victim.id,
                        cores=cores)
        # input already sits on the device it was running on
        self.queues.append(self._home(victim), victim.id)
        return victim

    def submit_hp(self, task: TaskRecord, now: int) -> None:
        device = task.source_device
        end = now + self.durations.slot(1, high=True)
        via = False
        if not self.cal.fits(device, 1, now, end):
            if self.preemption and self.ws_preempt_for_hp(device, task, now) is not None:
                via = True
            if not self.cal.fits(device, 1, now, end):
                self.sim.hp_failed(task, now, "no free core")
                return
        task.reservations = self.cal.reserve(
            task.id, [Slot(Kind.PROCESSING, now, end, device=device, cores=1)])
        task.allocated_device = device
        task.state = TaskState.RUNNING
        self.sim.push(now + self.durations.hp, "hp_done", (task.id, task.version, via))
        if via:
            self._wake_parked(now)

    def hp_finished(self, task: TaskRecord, now: int) -> None:
        # deferred so the request this HP task spawns is queued first
        self.parked.pop(task.source_device, None)
        self.sim.push(now, "ws_wake", task.source_device)

    # -- low priority ------------------------------------------------------

    def submit_lp(self, request: LowPriorityRequest, now: int) -> None:
        self.enqueue_lp(request)
        self._wake_parked(now)

    def _resolve(self, task: TaskRecord, success: bool, now: int) -> None:
        if task.id in self.preempted:
            self.sim.record("realloc", task.id, now, task=task.id, success=success)
        self.sim.lp_finished(task, success, now)

    def abandoned(self, task: TaskRecord, now: int) -> None:
        if task.id in self.preempted:
            self.sim.record("realloc", task.id, now, task=task.id, success=False)

    def handle(self, kind: str, payload, now: int) -> None:
        if kind == "ws_wake":
            self.try_acquire(payload, now)
            return
        task_id, version = payload
        task = self.sim.tasks[task_id]
        if task.version != version:
            return
        device = task.allocated_device
        if kind == "ws_done":
            self._resolve(task, True, now)
        elif kind == "ws_violation":
            self.sim.record("violation", task.id, now, task=task.id)
            self._resolve(task, False, now)
        else:
            raise ValueError(f"unexpected event {kind}")
        self.try_acquire(device, now)
