"""Single-threaded discrete-event loop.

Events are ordered by ``(time_us, seq)``. Long-running procedures are plain
generators that ``yield`` a non-negative delay in microseconds; the loop
resumes them when that delay has elapsed.
"""

from __future__ import annotations

import heapq
import itertools
from collections.abc import Callable, Generator
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class EventKind(str, Enum):
    ATTACH = "Attach"
    SEND_PACKET = "SendPacket"
    MOBILITY_SAMPLE = "MobilitySample"
    MEASUREMENT_REPORT = "MeasurementReport"
    LINK_FAIL = "LinkFail"
    LINK_RESTORE = "LinkRestore"
    REGISTER_ELEMENT = "RegisterElement"
    INJECT = "Inject"
    # internal
    RESUME = "Resume"
    TIMER = "Timer"
    PROTECTION_SWITCH = "ProtectionSwitch"


@dataclass(order=True)
class Event:
    time_us: int
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(compare=False, default=None)
    action: Callable[[Event], None] | None = field(compare=False, default=None, repr=False)


class Process:
    """A generator-driven procedure with its eventual result or error."""

    def __init__(self, gen: Generator[int, None, Any], name: str = ""):
        self.gen = gen
        self.name = name
        self.done = False
        self.result: Any = None
        self.error: BaseException | None = None
        self.callbacks: list[Callable[[Process], None]] = []

    def on_done(self, fn: Callable[[Process], None]) -> None:
        if self.done:
            fn(self)
        else:
            self.callbacks.append(fn)


class EventLoop:
    def __init__(self, start_us: int = 0):
        self.now_us = start_us
        self._heap: list[Event] = []
        self._seq = itertools.count()
        self.processed = 0

    def schedule(
        self,
        time_us: int,
        kind: EventKind,
        payload: Any = None,
        action: Callable[[Event], None] | None = None,
    ) -> Event:
        if time_us < self.now_us:
            raise ValueError(f"cannot schedule at {time_us}us, clock is at {self.now_us}us")
        ev = Event(time_us, next(self._seq), kind, payload, action)
        heapq.heappush(self._heap, ev)
        return ev

    def call_at(self, time_us: int, fn: Callable[[], None], kind: EventKind = EventKind.TIMER) -> Event:
        return self.schedule(max(time_us, self.now_us), kind, None, lambda _ev: fn())

    def spawn(self, gen: Generator[int, None, Any], name: str = "") -> Process:
        """Start a procedure now; its first step runs before spawn returns."""
        proc = Process(gen, name)
        self._step(proc)
        return proc

    def _step(self, proc: Process) -> None:
        try:
            delay = next(proc.gen)
        except StopIteration as stop:
            self._finish(proc, stop.value, None)
            return
        except Exception as exc:  # the procedure failed; report via the process
            self._finish(proc, None, exc)
            return
        if not isinstance(delay, int) or delay < 0:
            self._finish(proc, None, ValueError(f"process {proc.name!r} yielded {delay!r}"))
            return
        self.schedule(self.now_us + delay, EventKind.RESUME, proc.name, lambda _ev: self._step(proc))

    def _finish(self, proc: Process, result, error) -> None:
        proc.done = True
        proc.result = result
        proc.error = error
        for fn in proc.callbacks:
            fn(proc)
        proc.callbacks.clear()

    def pending(self) -> int:
        return len(self._heap)

    def peek_time(self) -> int | None:
        return self._heap[0].time_us if self._heap else None

    def step(self) -> Event | None:
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)
        self.now_us = ev.time_us
        self.processed += 1
        if ev.action is not None:
            ev.action(ev)
        return ev

    def run(self, until_us: int | None = None) -> None:
        while self._heap and (until_us is None or self._heap[0].time_us <= until_us):
            self.step()
        if until_us is not None and until_us > self.now_us:
            self.now_us = until_us

    def run_process(self, gen: Generator[int, None, Any], name: str = "") -> Any:
        """Spawn a procedure and run the loop until it finishes; return its result."""
        proc = self.spawn(gen, name)
        while not proc.done and self._heap:
            self.step()
        if not proc.done:
            raise RuntimeError(f"process {name!r} stalled")
        if proc.error is not None:
            raise proc.error
        return proc.result
