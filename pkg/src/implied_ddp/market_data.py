"""Option quotes to implied-price differences.

Put-call parity gives an option-implied value of the underlying for every
traded strike; the quantity modelled downstream is the gap between that
implied value and the observed spot level, grouped by trading day.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Sequence

import numpy as np

QUOTE_COLUMNS = ("date", "strike", "call", "put", "spot", "rate", "maturity")
DUMP_COLUMNS = ("day_index", "date", "delta")


class PanelError(ValueError):
    """Raised for malformed quote files, calendars or panel dumps."""


def _finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class QuoteRecord:
    date: date
    strike: float
    call: float
    put: float
    spot: float
    rate: float
    maturity: float

    def __post_init__(self):
        for name in ("strike", "call", "put", "spot", "rate", "maturity"):
            _finite(name, getattr(self, name))
        if self.strike <= 0 or self.spot <= 0 or self.maturity <= 0:
            raise ValueError("strike, spot and maturity must be positive")
        if self.call < 0 or self.put < 0:
            raise ValueError("call and put prices must be nonnegative")

    @property
    def implied(self) -> float:
        return implied_price(self.call, self.put, self.strike, self.rate, self.maturity)

    @property
    def delta(self) -> float:
        return compute_delta(self.implied, self.spot)


def implied_price(call: float, put: float, strike: float, rate: float, maturity: float) -> float:
    """Underlying value implied by put-call parity.

    Solves ``C - P = S - X exp(-r tau)`` for ``S``. Prices are mid quotes in
    index points, ``rate`` is a continuously compounded annual decimal and
    ``maturity`` is the time to expiry in years.
    """
    call = _finite("call", call)
    put = _finite("put", put)
    strike = _finite("strike", strike)
    rate = _finite("rate", rate)
    maturity = _finite("maturity", maturity)
    if strike <= 0:
        raise ValueError(f"strike must be positive, got {strike}")
    if maturity <= 0:
        raise ValueError(f"maturity must be positive, got {maturity}")
    return call - put + strike * math.exp(-rate * maturity)


def compute_delta(implied: float, spot: float) -> float:
    return _finite("implied", implied) - _finite("spot", spot)


@dataclass(frozen=True)
class TradePanel:
    """Implied-minus-spot differences for each trading day.

    ``deltas[t]`` holds the observations of ``days[t]``; days without
    trades keep an empty array so that the dynamics still step through them.
    Arrays are read-only.
    """

    days: tuple
    deltas: tuple

    def __post_init__(self):
        days = tuple(self.days)
        if len(days) != len(self.deltas):
            raise PanelError("days and deltas differ in length")
        if any(b <= a for a, b in zip(days, days[1:])):
            raise PanelError("days must be strictly increasing")
        frozen = []
        for d in self.deltas:
            arr = np.array(d, dtype=float).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise PanelError("deltas must be finite")
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "deltas", tuple(frozen))

    @property
    def T(self) -> int:
        return len(self.days)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(d) for d in self.deltas], dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def flatten(self):
        """Return ``(day, value)`` arrays with days numbered 1..T."""
        counts = self.counts
        day = np.repeat(np.arange(1, self.T + 1), counts)
        values = np.concatenate(self.deltas) if self.n else np.zeros(0)
        return day.astype(np.int64), values.astype(float)

    @classmethod
    def from_flat(cls, days: Sequence, day_index, values) -> "TradePanel":
        day_index = np.asarray(day_index, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        deltas = [values[day_index == t] for t in range(1, len(days) + 1)]
        return cls(tuple(days), tuple(deltas))


def _read_calendar(path) -> list:
    days = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                days.append(date.fromisoformat(text))
            except ValueError as exc:
                raise PanelError(f"{path}: line {lineno}: bad calendar date {text!r}") from exc
    if not days:
        raise PanelError(f"{path}: calendar is empty")
    days = sorted(set(days))
    return days


def read_quotes(path) -> list:
    """Parse the quote CSV into ``(line_number, QuoteRecord)`` pairs."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        missing = [c for c in QUOTE_COLUMNS if c not in header]
        if missing:
            raise PanelError(f"{path}: line 1: missing columns {missing}")
        index = {c: header.index(c) for c in QUOTE_COLUMNS}
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise PanelError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rec = QuoteRecord(
                    date=date.fromisoformat(row[index["date"]].strip()),
                    strike=float(row[index["strike"]]),
                    call=float(row[index["call"]]),
                    put=float(row[index["put"]]),
                    spot=float(row[index["spot"]]),
                    rate=float(row[index["rate"]]),
                    maturity=float(row[index["maturity"]]),
                )
            except ValueError as exc:
                raise PanelError(f"{path}: line {lineno}: {exc}") from exc
            records.append((lineno, rec))
    if not records:
        raise PanelError(f"{path}: no quote rows")
    return records


def load_panel(source, calendar=None) -> TradePanel:
    """Build a :class:`TradePanel` from a quote CSV.

    Without a calendar the day set is the distinct quote dates. With one,
    the calendar defines the day set and quotes dated outside it are an
    error; calendar days without quotes get zero observations.
    Same-day duplicate strikes are kept as separate observations.
    """
    records = read_quotes(source)
    if calendar is not None:
        days = _read_calendar(calendar)
        known = set(days)
        for lineno, rec in records:
            if rec.date not in known:
                raise PanelError(f"{source}: line {lineno}: date {rec.date} not in calendar")
    else:
        days = sorted({rec.date for _, rec in records})
    by_day = {d: [] for d in days}
    for _, rec in records:
        by_day[rec.date].append(rec.delta)
    return TradePanel(tuple(days), tuple(np.array(by_day[d]) for d in days))


def write_panel(panel: TradePanel, path) -> None:
    """Dump as ``day_index,date,delta``; empty-day rows carry a blank delta."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DUMP_COLUMNS)
        for t, (day, values) in enumerate(zip(panel.days, panel.deltas), start=1):
            if len(values) == 0:
                writer.writerow([t, day.isoformat(), ""])
            for v in values:
                writer.writerow([t, day.isoformat(), repr(float(v))])


def read_panel(path) -> TradePanel:
    """Inverse of :func:`write_panel`."""
    days = {}
    values = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PanelError(f"{path}: file is empty") from None
        if tuple(header) != DUMP_COLUMNS:
            raise PanelError(f"{path}: line 1: expected header {','.join(DUMP_COLUMNS)}")
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                raise PanelError(f"{path}: line {lineno}: expected 3 fields")
            try:
                t = int(row[0])
                d = date.fromisoformat(row[1].strip())
            except ValueError as exc:
                raise PanelError(f"{path}: line {lineno}: {exc}") from exc
            if days.setdefault(t, d) != d:
                raise PanelError(f"{path}: line {lineno}: day {t} has two dates")
            bucket = values.setdefault(t, [])
            if row[2].strip():
                try:
                    bucket.append(float(row[2]))
                except ValueError as exc:
                    raise PanelError(f"{path}: line {lineno}: {exc}") from exc
    if not days:
        raise PanelError(f"{path}: no rows")
    index = sorted(days)
    if index != list(range(1, len(index) + 1)):
        raise PanelError(f"{path}: day indices must run 1..T without gaps")
    return TradePanel(tuple(days[t] for t in index), tuple(np.array(values[t]) for t in index))


def panel_from_records(records: Iterable[QuoteRecord], days: Sequence | None = None) -> TradePanel:
    records = list(records)
    if days is None:
        days = sorted({r.date for r in records})
    by_day = {d: [] for d in days}
    for r in records:
        by_day[r.date].append(r.delta)
    return TradePanel(tuple(days), tuple(np.array(by_day[d]) for d in days))
