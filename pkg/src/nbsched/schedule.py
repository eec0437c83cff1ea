"""Periodic channel occupancy and free-time arithmetic.

A server (uplink or downlink carrier) is blocked by periodic patterns --
NPRACH windows, reference-signal subframes, NPDCCH search spaces -- and
serves its data queue in the remaining time, preemptive-resume. The union
of all patterns repeats with the least common multiple of their periods, so
one hyperperiod is precomputed and queries are answered with bisection.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

TICK = 1e-7  # seconds; periods must lie on this grid, offsets and widths are rounded to it
MAX_INTERVALS = 2_000_000


@dataclass(frozen=True)
class Block:
    period: float
    offset: float
    width: float


def _ticks(value, what):
    n = round(value / TICK)
    if abs(n * TICK - value) > 1e-9 * max(1.0, abs(value)):
        raise ValueError(f"{what} = {value!r} is not a multiple of {TICK} s")
    return n


class PeriodicSchedule:
    """Free/blocked timeline formed by a union of periodic blocks."""

    def __init__(self, blocks):
        self.blocks = tuple(b for b in blocks if b.width > 0)
        periods = [_ticks(b.period, "period") for b in self.blocks]
        if any(p <= 0 for p in periods):
            raise ValueError("block periods must be positive")
        hyper = math.lcm(*periods) if periods else 1
        raw = []
        count = 0
        for b, p in zip(self.blocks, periods):
            start = round(b.offset / TICK) % p
            width = min(round(b.width / TICK), p)
            reps = hyper // p
            count += reps
            if count > MAX_INTERVALS:
                raise ValueError("hyperperiod too long; choose commensurate periods")
            for k in range(reps):
                s = start + k * p
                e = s + width
                if e <= hyper:
                    raw.append((s, e))
                else:
                    raw.append((s, hyper))
                    raw.append((0, min(e - hyper, hyper)))
        raw.sort()
        merged = []
        for s, e in raw:
            if merged and s <= merged[-1][1]:
                if e > merged[-1][1]:
                    merged[-1][1] = e
            else:
                merged.append([s, e])

        free = []
        cursor = 0
        for s, e in merged:
            if s > cursor:
                free.append((cursor, s))
            cursor = max(cursor, e)
        if cursor < hyper:
            free.append((cursor, hyper))
        if not free:
            raise ValueError("schedule leaves no free time")

        self.hyperperiod = hyper * TICK
        self.free_starts = [s * TICK for s, _ in free]
        self.free_ends = [e * TICK for _, e in free]
        self.cum_starts = []
        self.cum_ends = []
        acc = 0
        for s, e in free:
            self.cum_starts.append(acc * TICK)
            acc += e - s
            self.cum_ends.append(acc * TICK)
        self.free_per_period = acc * TICK
        self.blocked_intervals = [(s * TICK, e * TICK) for s, e in merged]

    @property
    def free_fraction(self):
        return self.free_per_period / self.hyperperiod

    def _split(self, t):
        cycle = math.floor(t / self.hyperperiod)
        r = t - cycle * self.hyperperiod
        if r < 0.0:
            r = 0.0
        elif r >= self.hyperperiod:
            cycle += 1
            r = 0.0
        return cycle, r

    def is_free(self, t):
        _, r = self._split(t)
        i = bisect_right(self.free_starts, r) - 1
        return i >= 0 and r < self.free_ends[i]

    def next_free(self, t):
        """Earliest instant >= ``t`` at which the server is free."""
        cycle, r = self._split(t)
        i = bisect_right(self.free_starts, r) - 1
        if i >= 0 and r < self.free_ends[i]:
            return t
        if i + 1 < len(self.free_starts):
            return cycle * self.hyperperiod + self.free_starts[i + 1]
        return (cycle + 1) * self.hyperperiod + self.free_starts[0]

    def free_before(self, t):
        """Free time accumulated in ``[0, t)``."""
        cycle, r = self._split(t)
        i = bisect_right(self.free_starts, r) - 1
        if i < 0:
            within = 0.0
        elif r < self.free_ends[i]:
            within = self.cum_starts[i] + (r - self.free_starts[i])
        else:
            within = self.cum_ends[i]
        return cycle * self.free_per_period + within

    def advance(self, t, work):
        """Instant at which ``work`` seconds of free time, starting at ``t``, are used up."""
        if work <= 0.0:
            return self.next_free(t)
        target = self.free_before(t) + work
        cycles = math.floor(target / self.free_per_period)
        rem = target - cycles * self.free_per_period
        if rem <= 0.0:
            cycles -= 1
            rem = self.free_per_period
        k = bisect_left(self.cum_ends, rem)
        if k == len(self.cum_ends):
            k -= 1
        end = cycles * self.hyperperiod + self.free_starts[k] + (rem - self.cum_starts[k])
        # round trip through cumulative free time can land a ulp before t
        return max(end, self.next_free(t))

    def free_between(self, t0, t1):
        return self.free_before(t1) - self.free_before(t0)


def uplink_schedule(config):
    """NPRACH windows of every class, placed back to back from t = 0."""
    tau = config.schedule.nprach_unit
    return PeriodicSchedule([
        Block(c.nprach_period, off, c.repetitions * tau)
        for c, off in zip(config.classes, nprach_offsets(config))
    ])


def nprach_offsets(config):
    tau = config.schedule.nprach_unit
    out = []
    offset = 0.0
    for c in config.classes:
        out.append(offset)
        offset += c.repetitions * tau
    return out


def control_offset(config):
    """Start of the NPDCCH search space within each NPDCCH period.

    Placed right after the reference-signal subframes so the two do not
    overlap when the NPDCCH period equals the frame length.
    """
    s = config.schedule
    return (s.ref_signal_fraction * s.frame_len) % s.npdcch_period


def downlink_schedule(config, control_window):
    """Reference-signal subframes plus an NPDCCH search space of ``control_window`` seconds per visit."""
    s = config.schedule
    return PeriodicSchedule([
        Block(s.frame_len, 0.0, s.ref_signal_fraction * s.frame_len),
        Block(s.npdcch_period, control_offset(config), control_window),
    ])
