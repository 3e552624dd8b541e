"""Parsing and cleaning of raw charging-transaction exports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, fields
from datetime import datetime
from enum import Enum
from typing import IO, Iterable, Mapping

from .errors import DataError


class TrialStage(str, Enum):
    UNCONTROLLED = "Uncontrolled"
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"


class EvType(str, Enum):
    BEV = "BEV"
    PHEV = "PHEV"
    REX = "REX"


_STAGE_ALIASES = {
    "uncontrolled": TrialStage.UNCONTROLLED,
    "t1": TrialStage.T1, "1": TrialStage.T1, "trial 1": TrialStage.T1,
    "t2": TrialStage.T2, "2": TrialStage.T2, "trial 2": TrialStage.T2,
    "t3": TrialStage.T3, "3": TrialStage.T3, "trial 3": TrialStage.T3,
}


@dataclass(frozen=True)
class ChargingTransaction:
    charger_id: str
    participant_id: str
    car_kw: float
    car_kwh: float
    group_id: str
    trial_stage: TrialStage
    plug_in: datetime
    plug_out: datetime
    consumed_kwh: float
    active_start: datetime
    car_make: str
    car_model: str
    ev_type: EvType


FIELDS: tuple[str, ...] = tuple(f.name for f in fields(ChargingTransaction))
_NUMERIC = ("car_kw", "car_kwh", "consumed_kwh")
_TIMES = ("plug_in", "plug_out", "active_start")
_OPTIONAL_TEXT = ("car_make", "car_model")

DEFAULT_SCHEMA: dict[str, str] = {name: name for name in FIELDS}


@dataclass
class Reject:
    row: int
    reason: str


@dataclass
class RejectReport:
    rejects: list[Reject] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rejects)

    def add(self, row: int, reason: str) -> None:
        self.rejects.append(Reject(row, reason))

    def reasons(self) -> list[str]:
        return [r.reason for r in self.rejects]

    def to_jsonl(self) -> str:
        return "".join(json.dumps({"row": r.row, "reason": r.reason}) + "\n" for r in self.rejects)


class _RowError(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _parse_time(text: str) -> datetime:
    try:
        return datetime.fromisoformat(text.strip())
    except ValueError:
        raise _RowError("bad-timestamp") from None


def _parse_row(raw: Mapping[str, str]) -> ChargingTransaction:
    values: dict[str, object] = {}
    for name in FIELDS:
        text = (raw.get(name) or "").strip()
        if not text and name not in _OPTIONAL_TEXT:
            raise _RowError("missing-field")
        values[name] = text

    for name in _NUMERIC:
        try:
            values[name] = float(values[name])
        except ValueError:
            raise _RowError("bad-number") from None
        if values[name] != values[name]:  # NaN
            raise _RowError("bad-number")
    for name in _TIMES:
        values[name] = _parse_time(values[name])

    stage = _STAGE_ALIASES.get(str(values["trial_stage"]).lower())
    if stage is None:
        raise _RowError("bad-enum")
    values["trial_stage"] = stage
    try:
        values["ev_type"] = EvType(str(values["ev_type"]).upper())
    except ValueError:
        raise _RowError("bad-enum") from None

    if values["car_kw"] <= 0 or values["car_kwh"] <= 0:
        raise _RowError("nonpositive-rating")
    if not values["plug_in"] <= values["active_start"] <= values["plug_out"]:
        raise _RowError("time-order")
    if not 0 <= values["consumed_kwh"] <= values["car_kwh"]:
        raise _RowError("consumed-range")
    return ChargingTransaction(**values)


def parse_transactions(
    source: IO[str] | str, schema: Mapping[str, str] | None = None
) -> tuple[list[ChargingTransaction], RejectReport]:
    """Parse a comma-delimited export into validated transactions.

    ``schema`` maps each transaction field name to the header used in the file.
    Rows that break a type invariant are collected in the reject report with a
    reason code; a header missing any mapped column raises :class:`DataError`.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: header row required") from None
    header = [h.strip().lstrip("﻿") for h in header]
    missing = [col for col in schema.values() if col not in header]
    if missing:
        raise DataError(f"malformed header, missing columns: {missing}")
    position = {name: header.index(col) for name, col in schema.items()}

    records: list[ChargingTransaction] = []
    report = RejectReport()
    for row_no, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(header):
            report.add(row_no, "column-count")
            continue
        raw = {name: row[idx] for name, idx in position.items()}
        try:
            records.append(_parse_row(raw))
        except _RowError as exc:
            report.add(row_no, exc.reason)
    return records, report


def _format(value: object) -> str:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, datetime):
        return value.isoformat()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_transactions(txns: Iterable[ChargingTransaction], sink: IO[str] | None = None) -> str:
    """Write transactions in the same CSV layout ``parse_transactions`` reads."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIELDS)
    for t in txns:
        writer.writerow([_format(getattr(t, name)) for name in FIELDS])
    text = buf.getvalue()
    if sink is not None:
        sink.write(text)
    return text


def clean_trial_data(txns: Iterable[ChargingTransaction]) -> list[ChargingTransaction]:
    """Drop incentive-biased trial-3 sessions, keeping the original order."""
    return [t for t in txns if t.trial_stage is not TrialStage.T3]
