"""Injectable time sources.

Every component that reads the wall clock or sleeps takes a ``Clock`` so the
whole collector can run against simulated time.  ``SystemClock`` is the
production source; ``SteppedClock`` only moves when ``advance()`` is called,
which makes dump cadences, hold timers and flap windows exactly reproducible
in tests.
"""

from __future__ import annotations

import asyncio
import heapq
import itertools
import threading
import time
from datetime import datetime, timezone


def utc(ts: float) -> datetime:
    return datetime.fromtimestamp(ts, tz=timezone.utc)


def rfc3339_us(ts: float) -> str:
    """Render a unix timestamp as RFC 3339 with microsecond precision."""
    return utc(ts).strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"


class Clock:
    """Abstract time source: ``now()`` in float seconds plus async ``sleep``."""

    def now(self) -> float:
        raise NotImplementedError

    def now_us(self) -> int:
        return int(round(self.now() * 1_000_000))

    async def sleep(self, seconds: float) -> None:
        raise NotImplementedError


class SystemClock(Clock):
    def now(self) -> float:
        return time.time()

    async def sleep(self, seconds: float) -> None:
        await asyncio.sleep(seconds)


class SteppedClock(Clock):
    """Deterministic clock that only moves via ``advance()``.

    Sleepers park on a heap keyed by wake time; ``advance()`` moves the
    clock in sleeper-boundary steps so that a task scheduled at t+5 runs
    *at* t+5 (and may schedule more sleeps) before the clock reaches t+10.
    ``advance()`` is safe to call from any thread: wakeups are marshalled
    onto the owning event loop.
    """

    def __init__(self, start: float = 0.0) -> None:
        self._now = start
        self._lock = threading.Lock()
        self._sleepers: list[tuple[float, int, asyncio.Event, asyncio.AbstractEventLoop]] = []
        self._seq = itertools.count()

    def now(self) -> float:
        with self._lock:
            return self._now

    async def sleep(self, seconds: float) -> None:
        if seconds <= 0:
            await asyncio.sleep(0)
            return
        ev = asyncio.Event()
        loop = asyncio.get_running_loop()
        with self._lock:
            wake = self._now + seconds
            heapq.heappush(self._sleepers, (wake, next(self._seq), ev, loop))
        await ev.wait()

    def _pop_due(self) -> list[tuple[asyncio.Event, asyncio.AbstractEventLoop]]:
        due = []
        while self._sleepers and self._sleepers[0][0] <= self._now:
            _, _, ev, loop = heapq.heappop(self._sleepers)
            due.append((ev, loop))
        return due

    def advance(self, seconds: float) -> None:
        """Move time forward, releasing sleepers in wake-time order."""
        with self._lock:
            target = self._now + seconds
        while True:
            with self._lock:
                if self._sleepers and self._sleepers[0][0] <= target:
                    self._now = self._sleepers[0][0]
                else:
                    self._now = target
                due = self._pop_due()
                done = self._now >= target
            for ev, loop in due:
                try:
                    loop.call_soon_threadsafe(ev.set)
                except RuntimeError:  # loop already closed
                    pass
            if done and not due:
                return
            if done and due:
                # give released tasks a chance before declaring completion;
                # callers that need quiescence use settle() as well.
                return

    def jump_to(self, ts: float) -> None:
        delta = ts - self.now()
        if delta > 0:
            self.advance(delta)

    def next_deadline(self) -> float | None:
        """Earliest pending wake time, if any task is parked on ``sleep``."""
        with self._lock:
            return self._sleepers[0][0] if self._sleepers else None


async def settle(rounds: int = 10) -> None:
    """Yield to the loop a few times so just-woken tasks can run."""
    for _ in range(rounds):
        await asyncio.sleep(0)
