"""Minimal deterministic discrete-event core.

Events dequeue in (time, sequence) order; ``sequence`` is assigned at
scheduling time so equal-time events keep FIFO order.
"""

from __future__ import annotations

import enum
import heapq
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import SchedulingInPast


class EventKind(enum.IntEnum):
    BEACON_START = 0
    CAP_START = 1
    SLOT_START = 2
    TX_ATTEMPT = 3
    TX_END = 4
    CHANNEL_STEP = 5
    FRAME_END = 6


@dataclass(order=True, frozen=True)
class Event:
    time: float
    sequence: int
    kind: EventKind = field(compare=False)
    payload: Any = field(compare=False, default=None)


@dataclass
class SimClock:
    now: float = 0.0
    frame_index: int = 0

    def advance(self, t: float) -> None:
        if t < self.now:
            raise AssertionError(f"clock moved backwards: {t} < {self.now}")
        self.now = t


class EventQueue:
    def __init__(self, clock: SimClock | None = None):
        self.clock = clock or SimClock()
        self._heap: list[Event] = []
        self._seq = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, time: float, kind: EventKind, payload: Any = None) -> Event:
        if time < self.clock.now:
            raise SchedulingInPast(f"event {kind.name} at {time} is before now={self.clock.now}")
        ev = Event(time, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def peek(self) -> Event | None:
        return self._heap[0] if self._heap else None

    def pop(self) -> Event:
        return heapq.heappop(self._heap)


def schedule(queue: EventQueue, event: Event) -> EventQueue:
    """Enqueue an already built event, keeping the queue's sequence counter."""
    queue.schedule(event.time, event.kind, event.payload)
    return queue


class Engine:
    """Dispatches events to ``handlers[kind]`` until a horizon is reached.

    Handlers may return a trace record (any JSON-friendly value) which is
    appended to ``trace`` together with the event time and sequence.
    """

    def __init__(self, record_trace: bool = False):
        self.clock = SimClock()
        self.queue = EventQueue(self.clock)
        self.handlers: dict[EventKind, Callable[[Event], Any]] = {}
        self.record_trace = record_trace
        self.trace: list[tuple] = []
        self._last = (-1.0, -1)

    def run_until(self, t_end: float) -> list[tuple]:
        """Process every event with ``time < t_end``."""
        q = self.queue
        heap = q._heap
        handlers = self.handlers
        while heap and heap[0].time < t_end:
            ev = heapq.heappop(heap)
            key = (ev.time, ev.sequence)
            if __debug__ and key < self._last:
                raise AssertionError(f"event {key} dequeued after {self._last}")
            self._last = key
            self.clock.advance(ev.time)
            rec = handlers[ev.kind](ev)
            if self.record_trace and rec is not None:
                self.trace.append((ev.time, ev.sequence, ev.kind.name, rec))
        return self.trace


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one consumer of randomness within a run."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])
