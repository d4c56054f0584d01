"""Meter-read parsing and construction of regression datasets.

Three dataset variants are supported: the aggregated (synchronous) curve
of the whole panel, per-consumer mean weekday curves, and individual
consumer days.
"""

import csv
import datetime as dt
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DataError, ParseError
from .wavelet import N_SLOTS, PreprocessSpec, preprocess

log = logging.getLogger(__name__)

WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


def weekday_of(date):
    return WEEKDAYS[date.weekday()]


@dataclass(frozen=True)
class DayCurve:
    values: np.ndarray
    date: Optional[dt.date] = None
    weekday: Optional[str] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (N_SLOTS,):
            raise DataError(f"day curve must have {N_SLOTS} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError(f"day curve for {self.date} has non-finite values")
        object.__setattr__(self, "values", v)
        if self.weekday is None and self.date is not None:
            object.__setattr__(self, "weekday", weekday_of(self.date))


@dataclass
class MeterPanel:
    """Half-hourly reads, ``readings[c, d]`` is the 48-slot curve of consumer c on day d."""

    consumer_ids: list
    days: list
    readings: np.ndarray

    def __post_init__(self):
        self.readings = np.asarray(self.readings, dtype=float)
        nc, nd = len(self.consumer_ids), len(self.days)
        if self.readings.shape != (nc, nd, N_SLOTS):
            raise DataError(f"readings shape {self.readings.shape} does not match "
                            f"({nc}, {nd}, {N_SLOTS})")
        if len(set(self.consumer_ids)) != nc:
            raise DataError("consumer ids are not unique")
        if any(b <= a for a, b in zip(self.days, self.days[1:])):
            raise DataError("days are not strictly increasing")
        if not np.all(np.isfinite(self.readings)):
            raise DataError("panel contains non-finite readings")
        if np.any(self.readings < 0):
            raise DataError("panel contains negative readings")

    @property
    def weekdays(self):
        return [weekday_of(d) for d in self.days]

    def curves(self, consumer):
        c = self.consumer_ids.index(consumer)
        return [DayCurve(self.readings[c, j], d) for j, d in enumerate(self.days)]

    def scaled(self, alpha):
        return MeterPanel(list(self.consumer_ids), list(self.days), alpha * self.readings)


@dataclass(frozen=True)
class RowMeta:
    consumer: str
    eve_date: Optional[dt.date]
    day_date: Optional[dt.date]
    eve_weekday: Optional[str]
    day_weekday: Optional[str]


@dataclass
class RegressionDataset:
    """Rows of (regressor features x, response features y).

    ``x_curves``/``y_curves`` optionally keep the raw 48-slot eve and day
    curves behind each row; they feed cluster profiles and forecasting.
    """

    x: np.ndarray
    y: np.ndarray
    meta: list = field(default_factory=list)
    preprocessing_tag: Optional[int] = None
    x_curves: Optional[np.ndarray] = None
    y_curves: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.x.shape[0] == 0 or self.x.shape[0] != self.y.shape[0]:
            raise DataError(f"x and y must have equal non-zero row counts, "
                            f"got {self.x.shape[0]} and {self.y.shape[0]}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise DataError("dataset contains non-finite values")
        if not self.meta:
            self.meta = [RowMeta(str(i), None, None, None, None) for i in range(self.n)]
        if len(self.meta) != self.n:
            raise DataError("meta length does not match row count")
        for name in ("x_curves", "y_curves"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != (self.n, N_SLOTS):
                    raise DataError(f"{name} must have shape ({self.n}, {N_SLOTS})")
                setattr(self, name, arr)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def q(self):
        return self.y.shape[1]

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.x).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()[:16]

    def subset(self, rows):
        rows = np.asarray(rows)
        return RegressionDataset(
            self.x[rows], self.y[rows], [self.meta[i] for i in rows], self.preprocessing_tag,
            None if self.x_curves is None else self.x_curves[rows],
            None if self.y_curves is None else self.y_curves[rows],
        )


# --------------------------------------------------------------------------
# parsing

def _parse_float(text, line):
    text = text.strip()
    if text == "" or text.upper() in ("NA", "NAN"):
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"cannot parse value {text!r}", line) from None


def _parse_date(text, line):
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"invalid date {text!r}", line) from None


def _fill_gaps(values, consumer, date, impute):
    missing = np.isnan(values)
    if not missing.any():
        return values
    if impute != "linear":
        raise DataError(f"consumer {consumer} on {date}: {int(missing.sum())} missing "
                        f"half-hour reads (strict policy)")
    idx = np.flatnonzero(missing)
    isolated = all(0 < i < N_SLOTS - 1 and not missing[i - 1] and not missing[i + 1]
                   for i in idx)
    if not isolated:
        raise DataError(f"consumer {consumer} on {date}: missing reads are not isolated, "
                        f"cannot interpolate")
    out = values.copy()
    out[idx] = 0.5 * (values[idx - 1] + values[idx + 1])
    return out


def _read_wide(path):
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", 1)
        header = [h.strip() for h in header]
        if header[:2] != ["consumer", "date"]:
            raise ParseError("wide header must start with consumer,date", 1)
        has_weekday = len(header) > 2 and header[2] == "weekday"
        first = 3 if has_weekday else 2
        slots = header[first:]
        if slots != [f"h{i:02d}" for i in range(N_SLOTS)]:
            raise ParseError(f"wide header must list h00..h{N_SLOTS - 1}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            consumer = row[0].strip()
            date = _parse_date(row[1], line)
            if has_weekday and row[2].strip() and row[2].strip()[:3].title() != weekday_of(date):
                log.warning("line %d: weekday %r does not match calendar date %s (%s); "
                            "using the calendar", line, row[2], date, weekday_of(date))
            if (consumer, date) in cells:
                raise ParseError(f"duplicate row for consumer {consumer} on {date}", line)
            cells[(consumer, date)] = np.array([_parse_float(v, line) for v in row[first:]])
    return cells


def _parse_timestamp(text, line):
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    try:
        ts = dt.datetime.fromisoformat(text)
    except ValueError:
        raise ParseError(f"invalid timestamp {text!r}", line) from None
    # wall-clock reading; a fixed offset, if present, is not applied
    return ts.date(), ts.hour * 2 + ts.minute // 30


def _read_long(path):
    cells = {}
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", 1)
        if [h.strip() for h in header] != ["consumer", "timestamp", "value"]:
            raise ParseError("long header must be consumer,timestamp,value", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line)
            consumer = row[0].strip()
            date, slot = _parse_timestamp(row[1], line)
            key = (consumer, date, slot)
            if key in seen:
                raise DataError(f"consumer {consumer} on {date}: slot {slot} read twice "
                                f"(DST or duplicate)")
            seen.add(key)
            cell = cells.setdefault((consumer, date), np.full(N_SLOTS, np.nan))
            cell[slot] = _parse_float(row[2], line)
    return cells


def parse_meter_csv(path, layout="wide", impute=None):
    """Read a meter file into a :class:`MeterPanel`.

    ``layout`` is ``"wide"`` (one row per consumer-day, columns h00..h47) or
    ``"long"`` (one row per consumer/timestamp/value). Incomplete days raise
    :class:`DataError` unless ``impute="linear"``, which fills isolated gaps.
    """
    if layout == "wide":
        cells = _read_wide(path)
    elif layout == "long":
        cells = _read_long(path)
    else:
        raise ParseError(f"unknown layout {layout!r}")
    if not cells:
        raise DataError(f"{path}: no meter reads")
    consumers = list(dict.fromkeys(c for c, _ in cells))
    days = sorted({d for _, d in cells})
    readings = np.empty((len(consumers), len(days), N_SLOTS))
    for ci, c in enumerate(consumers):
        for di, d in enumerate(days):
            if (c, d) not in cells:
                raise DataError(f"consumer {c} has no reads on {d}")
            readings[ci, di] = _fill_gaps(cells[(c, d)], c, d, impute)
    return MeterPanel(consumers, days, readings)


# --------------------------------------------------------------------------
# dataset construction

def aggregate_synchronous(panel):
    """Slot-wise sum over consumers, one curve per day."""
    if not panel.consumer_ids:
        raise DataError("empty panel")
    total = panel.readings.sum(axis=0)
    return [DayCurve(total[j], d) for j, d in enumerate(panel.days)]


def all_pairs(eve, day):
    return True


def single_pair(eve_date):
    """Selector for the one pair (eve_date, eve_date + 1 day)."""
    if isinstance(eve_date, str):
        eve_date = dt.date.fromisoformat(eve_date)
    return lambda eve, day: eve.date == eve_date


def weekday_pairs(eve_weekday, day_weekday):
    return lambda eve, day: eve.weekday == eve_weekday and day.weekday == day_weekday


def _consecutive(curves):
    for eve, day in zip(curves, curves[1:]):
        if eve.date is None or day.date is None or day.date - eve.date == dt.timedelta(days=1):
            yield eve, day


def build_day_pairs(curves, selector: Callable = all_pairs, prep=PreprocessSpec(2)):
    """Regression rows (preprocess(eve), preprocess(day)) for selected consecutive days.

    ``curves`` is either a chronological list of :class:`DayCurve` (one
    series, labelled ``"aggregate"``) or a mapping consumer -> such a list.
    Only calendar-consecutive pairs are considered.
    """
    if not isinstance(prep, PreprocessSpec):
        prep = PreprocessSpec(int(prep))
    series = {"aggregate": curves} if not isinstance(curves, dict) else curves
    xs, ys, meta = [], [], []
    for consumer, cs in series.items():
        for eve, day in _consecutive(list(cs)):
            if selector(eve, day):
                xs.append(eve.values)
                ys.append(day.values)
                meta.append(RowMeta(str(consumer), eve.date, day.date, eve.weekday, day.weekday))
    if not xs:
        raise DataError("no day pairs selected; dataset would be empty")
    xc, yc = np.array(xs), np.array(ys)
    return RegressionDataset(preprocess(xc, prep), preprocess(yc, prep), meta, prep.mode, xc, yc)


def individual_curves(panel):
    """Mapping consumer -> chronological list of day curves."""
    return {c: [DayCurve(panel.readings[ci, j], d) for j, d in enumerate(panel.days)]
            for ci, c in enumerate(panel.consumer_ids)}


def mean_weekday_curves(panel, weekdays=WEEKDAYS):
    """Per consumer, the slot-wise mean curve of every requested weekday."""
    labels = np.array(panel.weekdays)
    out = {}
    for ci, c in enumerate(panel.consumer_ids):
        per = {}
        for wd in weekdays:
            mask = labels == wd
            if not mask.any():
                raise DataError(f"consumer {c} has no {wd} in the panel")
            per[wd] = DayCurve(panel.readings[ci, mask].mean(axis=0), None, wd)
        out[c] = per
    return out


def build_mean_day_pairs(means, eve_weekday, day_weekday, prep=PreprocessSpec(2)):
    """One row per consumer: (mean eve_weekday curve, mean day_weekday curve)."""
    if not isinstance(prep, PreprocessSpec):
        prep = PreprocessSpec(int(prep))
    if not means:
        raise DataError("no consumers")
    consumers = list(means)
    xc = np.array([means[c][eve_weekday].values for c in consumers])
    yc = np.array([means[c][day_weekday].values for c in consumers])
    meta = [RowMeta(str(c), None, None, eve_weekday, day_weekday) for c in consumers]
    return RegressionDataset(preprocess(xc, prep), preprocess(yc, prep), meta, prep.mode, xc, yc)
