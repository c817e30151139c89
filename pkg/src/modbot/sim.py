"""Discrete-event core: virtual clock, scheduler, seeded RNG, event log.

Time is an integer count of simulated microseconds. Log records and all
externally visible timestamps are reported in centiseconds. Events fire in
(time, insertion-order) priority, so a run is a pure function of its inputs
and seed.

The RNG is xorshift64* (shift triple 12/25/27, multiplier
0x2545F4914F6CDD1D) seeded through one splitmix64 step, chosen so that runs
are reproducible from the documented constants alone.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Callable

US_PER_MS = 1_000
US_PER_CS = 10_000
US_PER_S = 1_000_000

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 output for input x (used to whiten RNG seeds)."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """xorshift64* generator; state is never zero."""

    def __init__(self, seed: int):
        self._state = splitmix64(seed & _MASK64)
        if self._state == 0:
            self._state = 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        s = self._state
        s ^= (s >> 12)
        s ^= (s << 25) & _MASK64
        s ^= (s >> 27)
        self._state = s
        return (s * 0x2545F4914F6CDD1D) & _MASK64

    def random(self) -> float:
        """Uniform float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)


class Timer:
    """Cancellable handle for a scheduled callback."""

    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Scheduler:
    """Virtual-clock event loop with deterministic same-time ordering."""

    def __init__(self):
        self._now = 0
        self._queue: list[tuple[int, int, Timer, Callable[[], None]]] = []
        self._counter = itertools.count()

    @property
    def now(self) -> int:
        return self._now

    def call_at(self, t_us: int, fn: Callable[[], None]) -> Timer:
        if t_us < self._now:
            t_us = self._now
        timer = Timer()
        heapq.heappush(self._queue, (t_us, next(self._counter), timer, fn))
        return timer

    def call_after(self, delay_us: int, fn: Callable[[], None]) -> Timer:
        return self.call_at(self._now + delay_us, fn)

    def run_until(self, t_us: int) -> None:
        """Process every event due at or before t_us, then set the clock."""
        while self._queue and self._queue[0][0] <= t_us:
            when, _, timer, fn = heapq.heappop(self._queue)
            if timer.cancelled:
                continue
            self._now = when
            fn()
        self._now = max(self._now, t_us)


class EventLog:
    """Append-only run log; one record per line, time in centiseconds."""

    def __init__(self, scheduler: Scheduler):
        self._scheduler = scheduler
        self.records: list[tuple[int, str, str, str]] = []

    def log(self, module: str, kind: str, payload: str = "") -> None:
        t_cs = self._scheduler.now // US_PER_CS
        if self.records and t_cs < self.records[-1][0]:
            raise AssertionError("log time went backwards")
        self.records.append((t_cs, module, kind, payload))

    def lines(self) -> list[str]:
        return [
            f"{t} {module} {kind} {payload}".rstrip()
            for t, module, kind, payload in self.records
        ]

    def render(self) -> str:
        out = "\n".join(self.lines())
        return out + "\n" if out else ""

    def select(self, kind: str, module: str | None = None) -> list[tuple[int, str, str, str]]:
        return [
            r for r in self.records
            if r[2] == kind and (module is None or r[1] == module)
        ]
