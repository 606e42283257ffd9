"""Append-only JSONL event stream and the injected simulation clock.

Every run, headless or served, writes the same event shapes: a gap-free
seq per run, a kind from EVENT_KINDS, a JSON payload, and both timelines
(sim seconds and wall seconds). Records are flushed line by line so a
crashed process leaves at worst one truncated line, which readers detect
and cut at the last valid record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

EVENT_KINDS = (
    "step",
    "injection",
    "alert",
    "feedback",
    "threshold_change",
    "fine_tune",
    "metrics",
)

_FIELDS = ("run_id", "seq", "kind", "payload", "sim_time", "wall_time")


@dataclass
class SimClock:
    """Virtual clock advanced by the run loop; governance reads only this."""

    time: float = 0.0

    def now(self) -> float:
        return self.time

    def advance(self, seconds: float) -> None:
        self.time += seconds


@dataclass
class EventRecord:
    run_id: str
    seq: int
    kind: str
    payload: dict
    sim_time: float
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(
            {name: getattr(self, name) for name in _FIELDS},
            separators=(",", ":"),
            sort_keys=True,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "EventRecord":
        return cls(**{name: data[name] for name in _FIELDS})


class JsonlEventLog:
    """One run's event file, append-only, flushed per record."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: EventRecord) -> None:
        self._fh.write(record.to_json() + "\n")
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "JsonlEventLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_events(path: str | Path) -> tuple[list[EventRecord], bool]:
    """Read a log, stopping at the first corrupt line.

    Returns (records, clean); clean=False means a torn or malformed tail
    was dropped. Sequence gaps also mark the log unclean.
    """
    records: list[EventRecord] = []
    clean = True
    expected_seq = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
                record = EventRecord.from_dict(data)
                if record.kind not in EVENT_KINDS:
                    raise ValueError(f"unknown kind {record.kind!r}")
            except (ValueError, KeyError, TypeError):
                clean = False
                break
            if expected_seq is not None and record.seq != expected_seq:
                clean = False
                break
            expected_seq = record.seq + 1
            records.append(record)
    return records, clean
