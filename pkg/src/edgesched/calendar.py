"""Time-slotted reservations for the shared link and per-device cores.

All instants and durations are integer microseconds.  Intervals are
half-open ``[start, end)`` so back-to-back slots never conflict.
"""

from __future__ import annotations

import bisect
import enum
import itertools
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

US_PER_S = 1_000_000


def seconds(value: float) -> int:
    """Convert seconds to integer microseconds."""
    return int(round(value * US_PER_S))


def to_seconds(value: int) -> float:
    return value / US_PER_S


class Kind(str, enum.Enum):
    ALLOC_MSG = "alloc_msg"
    IMAGE_TRANSFER = "image_transfer"
    STATE_UPDATE = "state_update"
    PREEMPTION_MSG = "preemption_msg"
    POLL_MSG = "poll_msg"
    PROCESSING = "processing"


class ConfigurationError(ValueError):
    pass


class ReservationConflict(Exception):
    """A batch passed to :meth:`NetworkCalendar.reserve` was rejected."""

    def __init__(self, slot: "Slot", other: object, reason: str):
        self.slot = slot
        self.other = other
        self.reason = reason
        super().__init__(f"{reason}: {slot} conflicts with {other}")


@dataclass(frozen=True)
class Slot:
    """A reservation request; ``device is None`` means the shared link."""

    kind: Kind
    start: int
    end: int
    device: Optional[int] = None
    cores: int = 0

    def __post_init__(self):
        if self.start < 0 or self.start >= self.end:
            raise ValueError(f"bad interval [{self.start}, {self.end})")
        if self.device is None:
            if self.cores != 0 or self.kind is Kind.PROCESSING:
                raise ValueError("link slots carry no cores and no processing")
        elif self.cores not in (1, 2, 4) or self.kind is not Kind.PROCESSING:
            raise ValueError("device slots are processing with 1, 2 or 4 cores")

    @property
    def on_link(self) -> bool:
        return self.device is None

    @property
    def duration(self) -> int:
        return self.end - self.start

    def overlaps(self, start: int, end: int) -> bool:
        return self.start < end and start < self.end


@dataclass(frozen=True)
class Reservation(Slot):
    id: int = -1
    owner: int = -1


@dataclass(frozen=True)
class CommTiming:
    """Link throughput, per-slot jitter padding and message sizes."""

    throughput_Bps: float
    jitter_padding: int
    message_sizes: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.throughput_Bps <= 0:
            raise ConfigurationError("throughput must be positive")
        if self.jitter_padding < 0:
            raise ConfigurationError("jitter padding must be non-negative")
        for kind, size in self.message_sizes.items():
            if size <= 0:
                raise ConfigurationError(f"message size for {kind!r} must be positive")
        object.__setattr__(self, "_slots", {})

    def slot(self, kind: str) -> int:
        cached = self._slots.get(kind)
        if cached is None:
            cached = self._slots[kind] = link_slot_duration(kind, self)
        return cached


# Sizes in bytes of each message class, measured on the reference deployment.
DEFAULT_MESSAGE_SIZES = {
    "alloc_hp": 700,
    "alloc_lp": 2250,
    "state_update": 550,
    "preemption": 550,
    "image_transfer": 21500,
    "poll": 550,
}


def link_slot_duration(kind: str, timing: CommTiming) -> int:
    """Transmission time of one message plus jitter padding, rounded up to 1 us."""
    try:
        size = timing.message_sizes[kind]
    except KeyError:
        raise ConfigurationError(f"no message size configured for {kind!r}") from None
    transfer = Fraction(size * US_PER_S) / Fraction(str(timing.throughput_Bps))
    # ceil of a Fraction
    ticks = -((-transfer.numerator) // transfer.denominator)
    return max(1, ticks + timing.jitter_padding)


def peak_usage(reservations: Iterable[Slot], start: int, end: int) -> int:
    """Maximum summed cores of ``reservations`` at any instant of [start, end)."""
    deltas = []
    for r in reservations:
        if r.overlaps(start, end):
            deltas.append((max(r.start, start), r.cores))
            deltas.append((min(r.end, end), -r.cores))
    if not deltas:
        return 0
    # releases sort before acquisitions at the same instant (half-open)
    deltas.sort(key=lambda d: (d[0], d[1]))
    level = peak = 0
    for _, delta in deltas:
        level += delta
        peak = max(peak, level)
    return peak


class NetworkCalendar:
    """Shared-link reservation sequence plus per-device core timelines.

    The calendar is the single source of truth for feasibility: schedulers
    query it and commit whole plans through :meth:`reserve`.
    """

    def __init__(self, n_devices: int = 4, device_capacity: int = 4):
        if n_devices < 1 or device_capacity < 1:
            raise ConfigurationError("need at least one device and one core")
        self.n_devices = n_devices
        self.device_capacity = device_capacity
        self._link: list[Reservation] = []
        self._link_starts: list[int] = []
        self._devices: list[dict[int, Reservation]] = [{} for _ in range(n_devices)]
        self._by_id: dict[int, Reservation] = {}
        self._by_owner: dict[int, set[int]] = {}
        self._ids = itertools.count(1)
        # number of device reservations inspected by queries; read by schedulers
        self.scanned = 0

    # -- read side ---------------------------------------------------------

    def link_reservations(self) -> list[Reservation]:
        return list(self._link)

    def device_reservations(self, device: int) -> list[Reservation]:
        return sorted(self._devices[device].values(), key=lambda r: (r.start, r.id))

    def reservations_of(self, owner: int) -> list[Reservation]:
        return sorted((self._by_id[i] for i in self._by_owner.get(owner, ())),
                      key=lambda r: (r.start, r.id))

    def get(self, reservation_id: int) -> Reservation:
        return self._by_id[reservation_id]

    def owners(self) -> set[int]:
        return set(self._by_owner)

    def __len__(self) -> int:
        return len(self._by_id)

    def snapshot(self) -> tuple:
        """Hashable image of the full calendar state, for equality checks."""
        return (
            tuple(self._link),
            tuple(tuple(self.device_reservations(d)) for d in range(self.n_devices)),
        )

    def usage(self, device: int, start: int, end: int, exclude: Iterable[int] = ()) -> int:
        """Peak core usage on ``device`` over [start, end), ignoring owners in ``exclude``."""
        excluded = set(exclude)
        pool = self._devices[device].values()
        self.scanned += len(pool)
        return peak_usage((r for r in pool if r.owner not in excluded), start, end)

    def fits(self, device: int, cores: int, start: int, end: int,
             exclude: Iterable[int] = ()) -> bool:
        return self.usage(device, start, end, exclude) + cores <= self.device_capacity

    def earliest_link_window(self, duration: int, not_before: int,
                             deadline: int) -> Optional[tuple[int, int]]:
        """Earliest gap of ``duration`` on the link within [not_before, deadline]."""
        if duration <= 0:
            raise ValueError("duration must be positive")
        candidate = not_before
        i = bisect.bisect_left(self._link_starts, not_before)
        # the reservation just before may still be running at not_before
        if i > 0 and self._link[i - 1].end > candidate:
            candidate = self._link[i - 1].end
        while True:
            if candidate + duration > deadline:
                return None
            if i >= len(self._link) or self._link[i].start >= candidate + duration:
                return candidate, candidate + duration
            candidate = max(candidate, self._link[i].end)
            i += 1

    def find_processing_window(self, device: int, cores: int, duration: int,
                               earliest_start: int, deadline: int) -> Optional[tuple[int, int]]:
        """Earliest core window on ``device``; starts are ``earliest_start`` or reservation ends.

        Usage is piecewise constant between reservation boundaries, so no
        other start can become feasible earlier than these candidates.
        """
        if cores not in (1, 2, 4):
            raise ValueError("cores must be 1, 2 or 4")
        if duration <= 0:
            raise ValueError("duration must be positive")
        pool = list(self._devices[device].values())
        candidates = sorted({earliest_start} | {r.end for r in pool if r.end > earliest_start})
        for s in candidates:
            if s + duration > deadline:
                break
            self.scanned += len(pool)
            if peak_usage(pool, s, s + duration) + cores <= self.device_capacity:
                return s, s + duration
        return None

    def conflicting_tasks(self, device: int, start: int, end: int,
                          cores_needed: int) -> list[int]:
        """Owners whose removal would relieve an overload somewhere in [start, end).

        Returned in (reservation start, reservation id) order, one entry per owner.
        """
        pool = [r for r in self._devices[device].values() if r.overlaps(start, end)]
        self.scanned += len(self._devices[device])
        pool.sort(key=lambda r: (r.start, r.id))
        cuts = sorted({start} | {max(r.start, start) for r in pool} | {min(r.end, end) for r in pool})
        cuts = [c for c in cuts if c < end]
        result: list[int] = []
        for r in pool:
            if r.owner in result:
                continue
            for c in cuts:
                if not (r.start <= c < r.end):
                    continue
                level = sum(o.cores for o in pool if o.start <= c < o.end)
                if level + cores_needed > self.device_capacity >= level - r.cores + cores_needed:
                    result.append(r.owner)
                    break
        return result

    # -- write side --------------------------------------------------------

    def reserve(self, owner: int, slots: Sequence[Slot]) -> list[int]:
        """Insert every slot atomically or raise :class:`ReservationConflict`."""
        slots = list(slots)
        for i, slot in enumerate(slots):
            if slot.on_link:
                for r in self._overlapping_link(slot.start, slot.end):
                    raise ReservationConflict(slot, r, "link overlap")
                for other in slots[:i]:
                    if other.on_link and other.overlaps(slot.start, slot.end):
                        raise ReservationConflict(slot, other, "link overlap within batch")
            else:
                if not 0 <= slot.device < self.n_devices:
                    raise ReservationConflict(slot, None, "unknown device")
                batch = [o for o in slots[:i] if o.device == slot.device]
                existing = list(self._devices[slot.device].values())
                if peak_usage(existing + batch + [slot], slot.start, slot.end) > self.device_capacity:
                    saturating = [r for r in existing + batch if r.overlaps(slot.start, slot.end)]
                    raise ReservationConflict(slot, saturating[0] if saturating else None,
                                              "core capacity exceeded")
        ids = []
        for slot in slots:
            res = Reservation(kind=slot.kind, start=slot.start, end=slot.end,
                              device=slot.device, cores=slot.cores,
                              id=next(self._ids), owner=owner)
            self._insert(res)
            ids.append(res.id)
        return ids

    def release_task(self, owner: int, from_time: int) -> int:
        """Drop the owner's reservations ending after ``from_time``; truncate in-progress ones."""
        if owner not in self._by_owner:
            raise KeyError(f"unknown task {owner}")
        affected = 0
        for rid in sorted(self._by_owner[owner]):
            r = self._by_id[rid]
            if r.end <= from_time:
                continue
            affected += 1
            self._remove(r)
            if r.start < from_time:
                self._insert(replace(r, end=from_time))
        return affected

    def truncate(self, reservation_id: int, end: int) -> Reservation:
        """Shorten a reservation to finish at ``end`` (early completion)."""
        r = self._by_id[reservation_id]
        if not r.start < end <= r.end:
            raise ValueError(f"cannot truncate [{r.start}, {r.end}) to end {end}")
        self._remove(r)
        new = replace(r, end=end)
        self._insert(new)
        return new

    def remove(self, reservation_id: int) -> Reservation:
        r = self._by_id[reservation_id]
        self._remove(r)
        return r

    def prune(self, before: int) -> int:
        """Forget reservations that ended at or before ``before``."""
        stale = [r for r in self._by_id.values() if r.end <= before]
        for r in stale:
            self._remove(r)
        return len(stale)

    def check_invariants(self) -> None:
        for a, b in zip(self._link, self._link[1:]):
            assert a.end <= b.start, f"link overlap {a} / {b}"
        for device in range(self.n_devices):
            pool = list(self._devices[device].values())
            for r in pool:
                level = sum(o.cores for o in pool if o.start <= r.start < o.end)
                assert level <= self.device_capacity, f"device {device} over capacity at {r.start}"

    # -- internals ---------------------------------------------------------

    def _overlapping_link(self, start: int, end: int) -> list[Reservation]:
        i = bisect.bisect_left(self._link_starts, start)
        found = []
        if i > 0 and self._link[i - 1].end > start:
            found.append(self._link[i - 1])
        while i < len(self._link) and self._link[i].start < end:
            found.append(self._link[i])
            i += 1
        return found

    def _insert(self, r: Reservation) -> None:
        if r.on_link:
            i = bisect.bisect_left(self._link_starts, r.start)
            self._link.insert(i, r)
            self._link_starts.insert(i, r.start)
        else:
            self._devices[r.device][r.id] = r
        self._by_id[r.id] = r
        self._by_owner.setdefault(r.owner, set()).add(r.id)

    def _remove(self, r: Reservation) -> None:
        if r.on_link:
            i = bisect.bisect_left(self._link_starts, r.start)
            while self._link[i].id != r.id:
                i += 1
            del self._link[i]
            del self._link_starts[i]
        else:
            del self._devices[r.device][r.id]
        del self._by_id[r.id]
        ids = self._by_owner[r.owner]
        ids.discard(r.id)
        if not ids:
            del self._by_owner[r.owner]
