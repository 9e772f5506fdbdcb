"""Monotonic and simulated clocks.

Timing-sensitive code (scheduler, latency benchmarks, mock backends) takes a
clock value so tests run on simulated time and stay hardware-independent.
All timestamps are milliseconds.
"""

from __future__ import annotations

import time


class MonotonicClock:
    """Wall-clock time via the monotonic timer."""

    def now_ms(self) -> float:
        return time.monotonic_ns() / 1e6

    def sleep_ms(self, duration_ms: float) -> None:
        if duration_ms > 0:
            time.sleep(duration_ms / 1000.0)


class SimulatedClock:
    """A clock that only moves when something sleeps on it."""

    def __init__(self, start_ms: float = 0.0):
        self._now = float(start_ms)

    def now_ms(self) -> float:
        return self._now

    def sleep_ms(self, duration_ms: float) -> None:
        if duration_ms > 0:
            self._now += duration_ms

    def advance_to(self, t_ms: float) -> None:
        if t_ms < self._now:
            raise ValueError("simulated time cannot move backwards")
        self._now = t_ms
