"""Append-only execution trace, serialized as newline-delimited JSON."""

from __future__ import annotations

import enum
import json
import threading
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import IO, Any

SCHEMA = "parcall.trace/1"


class Event(enum.Enum):
    SCHEDULED = "SCHEDULED"
    DISPATCHED = "DISPATCHED"
    STARTED = "STARTED"
    FINISHED = "FINISHED"
    FAILED = "FAILED"
    RECOVERED = "RECOVERED"
    # Run header and trailer; they carry the configuration and the totals
    # that make a trace self-sufficient for replay.
    META = "META"
    SUMMARY = "SUMMARY"


def time_value(t: Fraction | float | int) -> int | float:
    if isinstance(t, Fraction):
        return int(t) if t.denominator == 1 else float(t)
    if isinstance(t, float):
        return int(t) if t.is_integer() else round(t, 6)
    return t


@dataclass(frozen=True)
class TraceEvent:
    t: Fraction | float
    event: Event
    call: str | None = None
    processor: str | None = None
    detail: str = ""

    def to_json(self) -> dict[str, Any]:
        return {
            "t": time_value(self.t),
            "event": self.event.value,
            "call": self.call,
            "processor": self.processor,
            "detail": self.detail,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, separators=(", ", ": "))

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> TraceEvent:
        t = raw["t"]
        t = Fraction(t) if isinstance(t, int) else Fraction(str(t))
        return cls(t, Event(raw["event"]), raw.get("call"), raw.get("processor"), raw.get("detail", ""))


class TraceLog:
    """Thread-safe, totally ordered list of events."""

    def __init__(self) -> None:
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()

    def emit(self, t: Fraction | float, event: Event, call: object = None, processor: str | None = None, detail: str = "") -> TraceEvent:
        ev = TraceEvent(t, event, None if call is None else str(call), processor, detail)
        with self._lock:
            self._events.append(ev)
        return ev

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(list(self._events))

    def __len__(self) -> int:
        return len(self._events)

    @property
    def events(self) -> list[TraceEvent]:
        return list(self._events)

    def dumps(self) -> str:
        return "".join(ev.dumps() + "\n" for ev in self._events)

    def write(self, fh: IO[str]) -> None:
        fh.write(self.dumps())


def load_trace(source: str | Path | IO[str] | Iterable[str]) -> list[TraceEvent]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            # Records may hold U+2028 and friends, so split on newlines only.
            lines = fh.read().split("\n")
    else:
        lines = list(source)
    return [TraceEvent.from_json(json.loads(line)) for line in lines if line.strip()]
