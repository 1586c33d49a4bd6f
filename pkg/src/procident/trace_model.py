"""Event and trace data model, plus the JSONL event-log reader.

One log line is one event::

    {"type": "file", "subtype": 2, "value": "C:\\\\Windows\\\\x.dll", "ts": 17,
     "host": "h1", "pid": 4, "pstart": 10, "image": "C:\\\\a\\\\b.exe"}

Events are grouped per process, where a process is identified by
``(host, pid, pstart)`` because operating systems recycle pids.
"""
from __future__ import annotations

import enum
import json
import ntpath
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

from procident.exceptions import ParseError, SchemaError

REQUIRED_FIELDS = ("type", "subtype", "value", "ts", "host", "pid", "pstart", "image")


class EventType(str, enum.Enum):
    PROCESS = "process"
    FILE = "file"
    IMAGE_LOAD = "image_load"
    REGISTRY = "registry"
    NETWORK = "network"

    @property
    def has_path_value(self) -> bool:
        return self is not EventType.NETWORK


@dataclass(frozen=True)
class SystemEvent:
    event_type: EventType
    subtype: int
    value: Union[str, int]
    timestamp: int

    def __post_init__(self):
        if not isinstance(self.event_type, EventType):
            object.__setattr__(self, "event_type", EventType(self.event_type))
        if isinstance(self.subtype, bool) or not isinstance(self.subtype, int) or self.subtype < 0:
            raise SchemaError(f"subtype must be a non-negative integer, got {self.subtype!r}")
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, int) or self.timestamp < 0:
            raise SchemaError(f"timestamp must be a non-negative integer, got {self.timestamp!r}")
        if self.event_type.has_path_value:
            if not isinstance(self.value, str):
                raise SchemaError(f"{self.event_type.value} event needs a path value, got {self.value!r}")
        elif isinstance(self.value, bool) or not isinstance(self.value, int) or self.value < 0:
            raise SchemaError(f"network event needs a non-negative byte size, got {self.value!r}")


@dataclass(frozen=True)
class ProcessKey:
    host: str
    pid: int
    pstart: int
    image: str

    @property
    def trace_id(self) -> str:
        return f"{self.host}:{self.pid}:{self.pstart}"


@dataclass(frozen=True)
class ParsedRecord:
    event: SystemEvent
    key: ProcessKey


def program_name_of(executable_path: str) -> str:
    """Lowercased final path component, tolerant of either separator."""
    return ntpath.basename(executable_path.replace("/", "\\")).lower()


@dataclass(frozen=True)
class ProcessTrace:
    trace_id: str
    host_id: str
    program_name: str
    executable_path: str
    events: tuple[SystemEvent, ...] = ()

    @property
    def exe_dir(self) -> str:
        return ntpath.dirname(self.executable_path.replace("/", "\\"))

    def __len__(self):
        return len(self.events)


@dataclass
class TraceCorpus:
    traces: list[ProcessTrace] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for t in self.traces:
            if t.trace_id in seen:
                raise ValueError(f"duplicate trace_id {t.trace_id!r}")
            seen.add(t.trace_id)

    @property
    def labels(self) -> list[str]:
        return sorted({t.program_name for t in self.traces})

    def __len__(self):
        return len(self.traces)

    def __iter__(self) -> Iterator[ProcessTrace]:
        return iter(self.traces)


def _require_int(record, name, lineno, source):
    v = record[name]
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"field {name!r} must be an integer, got {v!r}", lineno, source)
    return v


def _require_str(record, name, lineno, source):
    v = record[name]
    if not isinstance(v, str):
        raise SchemaError(f"field {name!r} must be text, got {v!r}", lineno, source)
    return v


def parse_event_record(line: str, lineno: int | None = None, source: str | None = None) -> ParsedRecord:
    """Decode one JSONL line into an event and the key of its owning process.

    Unknown extra fields are ignored.
    """
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", lineno, source) from None
    if not isinstance(record, dict):
        raise ParseError("record is not a JSON object", lineno, source)
    missing = [f for f in REQUIRED_FIELDS if f not in record]
    if missing:
        raise ParseError(f"missing field(s): {', '.join(missing)}", lineno, source)

    try:
        etype = EventType(record["type"])
    except ValueError:
        raise SchemaError(f"unknown event type {record['type']!r}", lineno, source) from None

    subtype = _require_int(record, "subtype", lineno, source)
    ts = _require_int(record, "ts", lineno, source)
    value = record["value"]
    try:
        event = SystemEvent(etype, subtype, value, ts)
    except SchemaError as exc:
        raise SchemaError(str(exc), lineno, source) from None

    key = ProcessKey(
        host=_require_str(record, "host", lineno, source),
        pid=_require_int(record, "pid", lineno, source),
        pstart=_require_int(record, "pstart", lineno, source),
        image=_require_str(record, "image", lineno, source),
    )
    return ParsedRecord(event, key)


def serialize_record(record: ParsedRecord) -> str:
    ev, key = record.event, record.key
    return json.dumps(
        {
            "type": ev.event_type.value,
            "subtype": ev.subtype,
            "value": ev.value,
            "ts": ev.timestamp,
            "host": key.host,
            "pid": key.pid,
            "pstart": key.pstart,
            "image": key.image,
        },
        ensure_ascii=False,
    )


def iter_event_log(path) -> Iterator[ParsedRecord]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            yield parse_event_record(line, lineno, str(path))


def group_into_traces(records: Iterable[ParsedRecord]) -> TraceCorpus:
    """Partition records by process key; events are stably sorted by timestamp."""
    buckets: dict[tuple, list] = {}
    images: dict[tuple, str] = {}
    for rec in records:
        k = (rec.key.host, rec.key.pid, rec.key.pstart)
        buckets.setdefault(k, []).append(rec.event)
        images.setdefault(k, rec.key.image)

    traces = []
    for k in sorted(buckets):
        host, pid, pstart = k
        events = sorted(buckets[k], key=lambda e: e.timestamp)
        image = images[k]
        traces.append(
            ProcessTrace(
                trace_id=f"{host}:{pid}:{pstart}",
                host_id=host,
                program_name=program_name_of(image),
                executable_path=image,
                events=tuple(events),
            )
        )
    return TraceCorpus(traces)


def read_traces(paths: Sequence) -> TraceCorpus:
    def chain():
        for p in paths:
            yield from iter_event_log(p)

    return group_into_traces(chain())


def validate_trace(trace: ProcessTrace) -> list[str]:
    """Return every invariant violation of ``trace``; an empty list means ok."""
    problems = []
    ts = [e.timestamp for e in trace.events]
    if any(b < a for a, b in zip(ts, ts[1:])):
        problems.append("events out of order")
    expected = program_name_of(trace.executable_path)
    if trace.program_name != expected:
        problems.append(
            f"program_name {trace.program_name!r} does not match executable {expected!r}"
        )
    for i, ev in enumerate(trace.events):
        if not isinstance(ev, SystemEvent):
            problems.append(f"event {i} is not a SystemEvent")
    return problems
