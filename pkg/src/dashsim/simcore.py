"""Discrete-event core: integer-microsecond clock, FIFO-stable event queue, seeded RNG."""

from __future__ import annotations

import heapq
from typing import Any, Callable

US_PER_MS = 1_000
US_PER_S = 1_000_000

DEFAULT_EVENT_BUDGET = 10_000_000


class SimulationError(RuntimeError):
    """Base class for errors raised while a simulation is running."""


class PastEventError(SimulationError):
    pass


class LivelockError(SimulationError):
    """Raised when a run processes more events than its budget allows."""


def ms(value: float) -> int:
    return int(round(value * US_PER_MS))


def seconds(value: float) -> int:
    return int(round(value * US_PER_S))


def to_seconds(t_us: int) -> float:
    return t_us / US_PER_S


class EventQueue:
    """Min-heap of ``(fire_at, sequence)`` ordered events.

    Events with the same ``fire_at`` run in the order they were scheduled.
    An action is any callable; it receives the positional args given to
    :meth:`schedule`.
    """

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, Callable[..., Any], tuple]] = []
        self._seq = 0
        self._cancelled: set[int] = set()
        self.now = 0
        self.processed = 0

    def __len__(self) -> int:
        return len(self._heap) - len(self._cancelled)

    def schedule(self, at: int, action: Callable[..., Any], *args: Any) -> int:
        if at < self.now:
            raise PastEventError(f"past event: at={at} < now={self.now}")
        event_id = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (at, event_id, action, args))
        return event_id

    def cancel(self, event_id: int) -> None:
        if 0 <= event_id < self._seq:
            self._cancelled.add(event_id)

    def peek_time(self) -> int | None:
        while self._heap and self._heap[0][1] in self._cancelled:
            self._cancelled.discard(heapq.heappop(self._heap)[1])
        return self._heap[0][0] if self._heap else None

    def step(self) -> bool:
        """Process one event. Returns False when the queue is empty."""
        heap = self._heap
        while heap:
            at, event_id, action, args = heapq.heappop(heap)
            if event_id in self._cancelled:
                self._cancelled.discard(event_id)
                continue
            self.now = at
            self.processed += 1
            action(*args)
            return True
        return False

    def run_until_idle(self, max_events: int = DEFAULT_EVENT_BUDGET) -> int:
        """Drain the queue and return the final clock value."""
        budget = max_events
        while self.step():
            budget -= 1
            if budget < 0:
                raise LivelockError(f"event budget of {max_events} exceeded at t={self.now}")
        return self.now

    def run_until(self, done: Callable[[], bool], max_events: int = DEFAULT_EVENT_BUDGET) -> int:
        budget = max_events
        while not done():
            if not self.step():
                raise SimulationError(f"queue drained at t={self.now} before completion")
            budget -= 1
            if budget < 0:
                raise LivelockError(f"event budget of {max_events} exceeded at t={self.now}")
        return self.now

    def advance_to(self, t: int, max_events: int = DEFAULT_EVENT_BUDGET) -> None:
        """Process every event due at or before ``t``, then set the clock to ``t``."""
        budget = max_events
        while True:
            nxt = self.peek_time()
            if nxt is None or nxt > t:
                break
            self.step()
            budget -= 1
            if budget < 0:
                raise LivelockError(f"event budget of {max_events} exceeded at t={self.now}")
        if t > self.now:
            self.now = t


_MASK64 = (1 << 64) - 1


class SeededRng:
    """xorshift64* generator (Vigna 2016, shifts 12/25/27, multiplier 0x2545F4914F6CDD1D).

    Integer-only, so the stream is identical on every platform. A zero seed is
    remapped to a fixed non-zero constant because zero is a fixed point.
    """

    MULTIPLIER = 0x2545F4914F6CDD1D
    ZERO_SEED_STATE = 0x9E3779B97F4A7C15

    def __init__(self, seed: int) -> None:
        self.seed = seed
        state = seed & _MASK64
        self._state = state if state else self.ZERO_SEED_STATE

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * self.MULTIPLIER) & _MASK64

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in ``[lo, hi]`` (modulo reduction; bias < 2**-50 for small spans)."""
        if hi < lo:
            raise ValueError("empty range")
        return lo + self.next_u64() % (hi - lo + 1)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))
