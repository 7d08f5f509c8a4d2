"""Injected logical clock with an ordered callback queue.

Every component that needs time takes a clock instead of reading the wall
clock. The simulator uses the same object as its event loop.
"""

from __future__ import annotations

import heapq
import itertools
import threading
from typing import Callable

# Tie-break order for callbacks due at the same instant.
PRIORITY_READY = 0
PRIORITY_PIPELINE = 1
PRIORITY_WRITE = 2
PRIORITY_DUMP = 3
PRIORITY_READ = 4


class Timer:
    __slots__ = ("when", "callback", "cancelled")

    def __init__(self, when: float, callback: Callable[[], None]):
        self.when = when
        self.callback = callback
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class LogicalClock:
    def __init__(self, start: float = 0):
        self._now = start
        self._queue: list[tuple[float, int, int, Timer]] = []
        self._seq = itertools.count()
        self._lock = threading.RLock()

    @property
    def now(self) -> float:
        return self._now

    def call_at(self, when: float, callback: Callable[[], None], priority: int = PRIORITY_PIPELINE) -> Timer:
        if when < self._now:
            raise ValueError(f"cannot schedule in the past ({when} < {self._now})")
        timer = Timer(when, callback)
        with self._lock:
            heapq.heappush(self._queue, (when, priority, next(self._seq), timer))
        return timer

    def call_later(self, delay: float, callback: Callable[[], None], priority: int = PRIORITY_PIPELINE) -> Timer:
        return self.call_at(self._now + delay, callback, priority)

    def next_due(self) -> float | None:
        with self._lock:
            while self._queue and self._queue[0][3].cancelled:
                heapq.heappop(self._queue)
            return self._queue[0][0] if self._queue else None

    def advance_to(self, when: float) -> int:
        """Run every callback due at or before `when`, then set now to `when`.

        Callbacks may schedule further callbacks; those run too if they fall
        inside the window. Returns the number of callbacks executed.
        """
        if when < self._now:
            raise ValueError(f"clock cannot go backwards ({when} < {self._now})")
        fired = 0
        while True:
            with self._lock:
                if not self._queue or self._queue[0][0] > when:
                    break
                due, _, _, timer = heapq.heappop(self._queue)
            if timer.cancelled:
                continue
            self._now = due
            timer.callback()
            fired += 1
        self._now = when
        return fired

    def advance(self, delta: float) -> int:
        return self.advance_to(self._now + delta)

    def run_until_idle(self, limit: float | None = None) -> int:
        fired = 0
        while (due := self.next_due()) is not None and (limit is None or due <= limit):
            fired += self.advance_to(due)
        return fired
