# --------------------------------------------------------------------
# events.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Tuesday March 4, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Event dispatch for training progress, diagnostics and pipeline status.

Library code reports what it is doing by sending events to the current
bus.  Whoever drives the run decides what to do with them: the command
line attaches a console hook and a JSON-lines sink, tests usually attach
nothing at all.
"""

import json
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Callable, Generator, Iterable, Optional

import numpy as np

from uvhfield.typedefs import PathSpec


# --------------------------------------------------------------------
class Events:
    STEP = "uvh.step"
    EVAL = "uvh.eval"
    CHECKPOINT = "uvh.checkpoint"
    DIAGNOSTIC = "uvh.diagnostic"
    INFO = "uvh.info"
    WARNING = "uvh.warning"
    ERROR = "uvh.error"
    START = "recipe.start"
    SUCCESS = "recipe.success"
    FAIL = "recipe.fail"


# --------------------------------------------------------------------
@dataclass
class Event:
    name: str
    context: Any = None
    data: Any = None
    when: datetime = field(default_factory=datetime.now)

    def age(self) -> timedelta:
        return datetime.now() - self.when


# --------------------------------------------------------------------
EventListener = Callable[[Event], Any]


# --------------------------------------------------------------------
class EventBus:
    _current_bus: Optional["EventBus"] = None
    _null_bus: Optional["EventBus"] = None

    class _Session:
        def __init__(self, bus: Optional["EventBus"] = None):
            self.bus = bus or EventBus()
            self.previous: Optional["EventBus"] = None

        def __enter__(self) -> "EventBus":
            self.previous = EventBus._current_bus
            EventBus._current_bus = self.bus
            return self.bus

        def __exit__(self, *_):
            EventBus._current_bus = self.previous
            self.bus.shutdown()

    @staticmethod
    def session(bus: Optional["EventBus"] = None) -> "EventBus._Session":
        return EventBus._Session(bus)

    @staticmethod
    def get() -> "EventBus":
        """
        Return the bus of the active session.  Outside of a session a
        shared bus with no listeners is returned, so events sent from
        library code are simply dropped.
        """
        if EventBus._current_bus is not None:
            return EventBus._current_bus
        if EventBus._null_bus is None:
            EventBus._null_bus = EventBus()
        return EventBus._null_bus

    def __init__(self):
        self.lock = threading.Lock()
        self.listeners: set[EventListener] = set()
        self.subs: defaultdict[str, set[EventListener]] = defaultdict(set)
        self.counters: Counter[str] = Counter()

    def send(self, event: Event):
        with self.lock:
            listeners = [*self._listeners_for_event(event)]
        for listener in listeners:
            listener(event)

    def emit(self, name: str, context: Any = None, data: Any = None):
        self.send(Event(name, context, data))

    def count(self, key: str, n: int = 1):
        """Accumulate a named diagnostic counter, e.g. hash grid clamps."""
        if n:
            with self.lock:
                self.counters[key] += int(n)

    def shutdown(self):
        with self.lock:
            self.listeners.clear()
            self.subs.clear()

    def listen(self, listener: EventListener):
        with self.lock:
            self.listeners.add(listener)

    def unlisten(self, listener: EventListener):
        with self.lock:
            self.listeners.discard(listener)

    def subscribe(self, event: str | Iterable[str], listener: EventListener):
        names = [event] if isinstance(event, str) else list(event)
        with self.lock:
            for name in names:
                self.subs[name].add(listener)

    def unsubscribe(self, event: str, listener: EventListener):
        with self.lock:
            subs = self.subs[event]
            subs.discard(listener)
            if not subs:
                del self.subs[event]

    def _listeners_for_event(
        self, event: Event
    ) -> Generator[EventListener, None, None]:
        yield from self.listeners
        if event.name in self.subs:
            yield from self.subs[event.name]


# --------------------------------------------------------------------
def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)


# --------------------------------------------------------------------
class JsonLinesSink:
    """
    Event listener appending one JSON object per event to a file.
    """

    def __init__(self, path: PathSpec, names: Iterable[str] = (Events.STEP,)):
        self.path = Path(path)
        self.names = set(names)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def attach(self, bus: EventBus) -> "JsonLinesSink":
        bus.subscribe(self.names, self)
        return self

    def detach(self, bus: EventBus):
        for name in self.names:
            bus.unsubscribe(name, self)

    def __call__(self, event: Event):
        record = {"event": event.name, "when": event.when.isoformat()}
        if isinstance(event.data, dict):
            record.update(_jsonable(event.data))
        elif event.data is not None:
            record["data"] = _jsonable(event.data)
        with open(self.path, "a", encoding="utf-8") as outfile:
            outfile.write(json.dumps(record, sort_keys=True) + "\n")
