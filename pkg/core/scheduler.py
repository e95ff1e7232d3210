"""Virtual clock and ordered event queue on top of a simpy environment."""
import itertools
from dataclasses import dataclass, field
from enum import Enum

import simpy

# Tolerated float residue when an absolute time is recomputed from a delay
TIME_EPSILON = 1e-12


class SchedulingError(RuntimeError):
    """An event was scheduled before the current virtual time."""


class EventKind(Enum):
    FRAME_ARRIVAL_START = "frame-arrival-start"
    FRAME_ARRIVAL_END = "frame-arrival-end"
    TIMER_EXPIRY = "timer-expiry"
    CCA_UPDATE = "cca-update"
    APP_PACKET_READY = "app-packet-ready"
    TX_END = "tx-end"


@dataclass(eq=False)
class Event:
    time: float
    target: int
    kind: EventKind
    payload: object = None
    handler: object = field(default=None, repr=False)
    sequence: int = -1


class EventHandle:
    def __init__(self, event, scheduler):
        self.event = event
        self._scheduler = scheduler
        self.cancelled = False
        self.fired = False

    def cancel(self):
        if not self.cancelled and not self.fired:
            self.cancelled = True
            self._scheduler._pending -= 1

    @property
    def active(self):
        return not (self.cancelled or self.fired)


class EventScheduler:
    """
    Deterministic event queue.

    simpy orders its queue by (time, priority, insertion id), which gives
    the required tie-break by insertion order; cancellation is a flag on
    the handle checked at dispatch.
    """

    def __init__(self, trace=False):
        self.env = simpy.Environment()
        self._sequence = itertools.count()
        self._pending = 0
        self.processed = 0
        self.last_time = 0.0
        self.trace = [] if trace else None

    @property
    def now(self):
        return self.env.now

    @property
    def pending(self):
        return self._pending

    def schedule(self, event):
        now = self.env.now
        if event.time < now - TIME_EPSILON:
            raise SchedulingError(f"event {event.kind.value} at t={event.time!r} is before now={now!r}")
        event.sequence = next(self._sequence)
        handle = EventHandle(event, self)
        timeout = self.env.timeout(max(0.0, event.time - now))
        timeout.callbacks.append(lambda _ev: self._dispatch(handle))
        self._pending += 1
        return handle

    def call_at(self, time, target, kind, handler, payload=None):
        return self.schedule(Event(time, target, kind, payload, handler))

    def _dispatch(self, handle):
        if handle.cancelled:
            return
        handle.fired = True
        self._pending -= 1
        event = handle.event
        self.processed += 1
        self.last_time = self.env.now
        if self.trace is not None:
            self.trace.append((self.env.now, event.sequence, event.target, event.kind.value))
        if event.handler is not None:
            event.handler(event)

    def record(self, *entry):
        """Append an annotation to the trace (no-op when tracing is off)."""
        if self.trace is not None:
            self.trace.append((self.env.now, *entry))

    def run(self, until):
        if until <= self.env.now:
            return
        self.env.run(until=until)
