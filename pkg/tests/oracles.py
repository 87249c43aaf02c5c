"""Brute-force reference implementations used by the tests.

These deliberately avoid the library's search code: usage is summed instant
by instant, link gaps are found by scanning a plain interval list, and LP
placement enumerates every (device, cores, start) choice.
"""

from __future__ import annotations

import itertools
import math


def slot_us(size_bytes, throughput_Bps, jitter_us):
    return max(1, math.ceil(size_bytes * 1_000_000 / throughput_Bps) + jitter_us)


def level_at(intervals, t):
    """Summed cores of (start, end, cores) intervals covering instant t."""
    return sum(c for s, e, c in intervals if s <= t < e)


def peak(intervals, start, end):
    instants = {start} | {s for s, _, _ in intervals if start <= s < end}
    return max(level_at(intervals, t) for t in instants)


def link_gap(busy, duration, not_before, deadline):
    """Earliest [t, t+duration) free of every (s, e) in busy, with t >= not_before."""
    t = not_before
    changed = True
    while changed:
        changed = False
        for s, e in busy:
            if s < t + duration and t < e:
                t = e
                changed = True
    return (t, t + duration) if t + duration <= deadline else None


def farthest_deadline_victim(device_intervals, owners, window, capacity, deadlines, arrivals):
    """Argmax (deadline, arrival, id) over LP owners present at a saturated instant."""
    start, end = window
    instants = {start} | {s for s, _, _, _ in device_intervals if start <= s < end}
    plain = [(s, e, c) for s, e, c, _ in device_intervals]
    candidates = set()
    for t in instants:
        if level_at(plain, t) + 1 > capacity:
            candidates |= {o for s, e, _, o in device_intervals if s <= t < e and o in owners}
    if not candidates:
        return None
    return max(candidates, key=lambda o: (deadlines[o], arrivals[o], o))


def lp_set_feasible(devices, device_intervals, link_busy, timing, durations, input_device,
                    now, deadline, n_tasks, capacity=4):
    """True iff some choice of (device, cores, candidate start) per task places all tasks.

    ``device_intervals`` maps device -> list of (start, end, cores); ``timing``
    is a dict with link slot lengths ``alloc``, ``transfer``, ``su``;
    ``durations`` maps cores -> padded slot length.  Candidate starts are
    ``now`` and existing processing ends in (now, deadline], each pushed back
    to the moment the task's input is ready.
    """
    points = sorted({now} | {e for d in devices for _, e, _ in device_intervals[d]
                             if now < e <= deadline})
    choices = [(d, c, p) for d in devices for c in (2, 4) for p in points]

    def place(i, dev_state, link, procs):
        if i == n_tasks:
            return finish(link, procs)
        for d, c, p in choices:
            alloc = link_gap(link, timing["alloc"], now, deadline)
            if alloc is None:
                return False
            used = link + [alloc]
            ready = alloc[1]
            if d != input_device:
                tr = link_gap(used, timing["transfer"], alloc[1], deadline)
                if tr is None:
                    continue
                used = used + [tr]
                ready = tr[1]
            s = max(p, ready)
            e = s + durations[c]
            if e > deadline:
                continue
            if peak(dev_state[d], s, e) + c > capacity:
                continue
            nxt = dict(dev_state)
            nxt[d] = dev_state[d] + [(s, e, c)]
            if place(i + 1, nxt, used, procs + [e]):
                return True
        return False

    def finish(link, procs):
        # state updates go out in placement order
        for end in procs:
            su = link_gap(link, timing["su"], end, deadline)
            if su is None:
                return False
            link = link + [su]
        return True

    return place(0, {d: list(device_intervals[d]) for d in devices}, list(link_busy), [])


def uniform_permutation_chi2(samples, items):
    """Chi-square statistic of observed permutation counts against uniform."""
    perms = list(itertools.permutations(items))
    counts = {p: 0 for p in perms}
    for s in samples:
        counts[tuple(s)] += 1
    expected = len(samples) / len(perms)
    return sum((n - expected) ** 2 / expected for n in counts.values()), len(perms) - 1
