"""Planted scheduler instances shared by the scheduler and acceptance tests."""

import itertools

import oracles
from edgesched.calendar import (DEFAULT_MESSAGE_SIZES, CommTiming, Kind, NetworkCalendar, Slot,
                                seconds)
from edgesched.scheduler import (Durations, LowPriorityRequest, Priority, Scheduler, TaskRecord,
                                 TaskState)

T = seconds(100)
TIMING = CommTiming(16.3e6, seconds(0.005), dict(DEFAULT_MESSAGE_SIZES))
DUR = Durations()


class Net:
    """A scheduler over a fresh calendar with helpers to plant existing work."""

    def __init__(self, devices=4, durations=DUR):
        self.cal = NetworkCalendar(devices)
        self.tasks = {}
        self.sched = Scheduler(self.cal, TIMING, durations, self.tasks)
        self._ids = itertools.count(1)

    def lp(self, device, start, end, cores=2, deadline=None, arrival=None):
        tid = next(self._ids)
        task = TaskRecord(tid, Priority.LOW, device, arrival if arrival is not None else start,
                          deadline or end + 1, core_config=cores, allocated_device=device,
                          state=TaskState.RUNNING)
        task.reservations = self.cal.reserve(
            tid, [Slot(Kind.PROCESSING, start, end, device=device, cores=cores)])
        self.tasks[tid] = task
        return task

    def hp(self, device=0, now=T, budget=seconds(1)):
        task = TaskRecord(next(self._ids), Priority.HIGH, device, now, now + budget)
        self.tasks[task.id] = task
        return task

    def request(self, n, source=0, now=T, deadline=None):
        deadline = deadline or now + seconds(18.86)
        ids = []
        for _ in range(n):
            task = TaskRecord(next(self._ids), Priority.LOW, source, now, deadline,
                              core_config=2, request_id=1)
            self.tasks[task.id] = task
            ids.append(task.id)
        return LowPriorityRequest(1, source, ids, deadline)


def random_lp_instance(rng):
    devices = rng.randint(1, 3)
    net = Net(devices)
    for _ in range(rng.randint(0, 4)):
        d = rng.randrange(devices)
        start = seconds(rng.uniform(0, 8))
        try:
            net.lp(d, start, start + seconds(rng.uniform(0.5, 14)), cores=rng.choice([1, 2, 4]))
        except Exception:
            pass
    for k in range(rng.randint(0, 3)):
        s = seconds(rng.uniform(0, 2))
        try:
            net.cal.reserve(900 + k, [Slot(Kind.STATE_UPDATE, s, s + seconds(rng.uniform(0.001, 0.05)))])
        except Exception:
            pass
    now = seconds(rng.uniform(0, 3))
    request = net.request(rng.randint(1, 2), source=rng.randrange(devices), now=now,
                          deadline=now + seconds(rng.uniform(11, 26)))
    return net, request, now


def oracle_says(net, request, now):
    n_dev = net.cal.n_devices
    dev = {d: [(r.start, r.end, r.cores) for r in net.cal.device_reservations(d)]
           for d in range(n_dev)}
    link = [(r.start, r.end) for r in net.cal.link_reservations()]
    lengths = {"alloc": TIMING.slot("alloc_lp"), "transfer": TIMING.slot("image_transfer"),
               "su": TIMING.slot("state_update")}
    return oracles.lp_set_feasible(list(range(n_dev)), dev, link, lengths,
                                   {2: DUR.slot(2), 4: DUR.slot(4)}, request.source_device,
                                   now, request.deadline, len(request.tasks))
