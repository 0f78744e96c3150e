"""Virtual and wall time sources; all durations are milliseconds."""

from __future__ import annotations

import time


class VirtualClock:
    """Deterministic discrete-event time: advancing is free and exact.

    Parallel branches each run on a fork; the parent clock jumps to the
    latest branch time at the join.
    """

    virtual = True

    def __init__(self, start_ms: float = 0.0):
        self._now = float(start_ms)

    @property
    def now_ms(self) -> float:
        return self._now

    def advance(self, delta_ms: float) -> None:
        if delta_ms < 0:
            raise ValueError(f"cannot advance a clock by {delta_ms} ms")
        self._now += delta_ms

    def advance_to(self, t_ms: float) -> None:
        if t_ms > self._now:
            self._now = t_ms

    def fork(self) -> "VirtualClock":
        return VirtualClock(self._now)


class WallClock:
    """Real time relative to construction; advancing sleeps."""

    virtual = False

    def __init__(self):
        self._epoch = time.monotonic()

    @property
    def now_ms(self) -> float:
        return (time.monotonic() - self._epoch) * 1000.0

    def advance(self, delta_ms: float) -> None:
        if delta_ms > 0:
            time.sleep(delta_ms / 1000.0)

    def advance_to(self, t_ms: float) -> None:
        remaining = t_ms - self.now_ms
        if remaining > 0:
            time.sleep(remaining / 1000.0)

    def fork(self) -> "WallClock":
        return self


Clock = VirtualClock | WallClock

__all__ = ["Clock", "VirtualClock", "WallClock"]
