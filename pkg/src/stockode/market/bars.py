"""Bars CSV and universe file I/O."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stockode.errors import DataError

BAR_HEADER = ["date", "ticker", "open", "high", "low", "close", "volume"]


@dataclass
class StockUniverse:
    tickers: list

    def __post_init__(self):
        self.tickers = list(self.tickers)
        if len(set(self.tickers)) != len(self.tickers):
            dupes = sorted({t for t in self.tickers if self.tickers.count(t) > 1})
            raise DataError(f"duplicate tickers in universe: {dupes}")
        self.index = {t: i for i, t in enumerate(self.tickers)}

    def __len__(self) -> int:
        return len(self.tickers)

    def __contains__(self, ticker) -> bool:
        return ticker in self.index


@dataclass
class BarSeries:
    """Chronological daily bars for one ticker."""

    dates: list  # datetime.date
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __len__(self) -> int:
        return len(self.dates)


def load_universe(path) -> StockUniverse:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return StockUniverse([ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")])


def write_universe(path, universe: StockUniverse) -> None:
    Path(path).write_text("".join(t + "\n" for t in universe.tickers), encoding="utf-8")


def load_bars(path, universe: StockUniverse) -> dict:
    """Read a bars CSV into one forward-filled series per universe ticker.

    Missing days (relative to the union of all dates in the file) take the
    previous close for open/high/low/close and volume 0. A ticker absent on the
    first calendar day cannot be filled and is a data error.
    """
    rows: dict = {t: {} for t in universe.tickers}
    unknown = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != BAR_HEADER:
            raise DataError(f"{path}: expected header {','.join(BAR_HEADER)}, got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 7:
                raise DataError(f"{path}:{lineno}: expected 7 fields, got {len(rec)}")
            date_s, ticker = rec[0].strip(), rec[1].strip()
            if ticker not in universe:
                unknown.add(ticker)
                continue
            try:
                day = dt.date.fromisoformat(date_s)
                o, h, lo, c, v = (float(x) for x in rec[2:])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if not c > 0:
                raise DataError(f"{path}:{lineno}: non-positive close {c} for {ticker}")
            if not (o > 0 and lo <= min(o, c) and h >= max(o, c) and v >= 0):
                raise DataError(f"{path}:{lineno}: inconsistent bar for {ticker} on {date_s}")
            if day in rows[ticker]:
                raise DataError(f"{path}:{lineno}: duplicate bar for {ticker} on {date_s}")
            rows[ticker][day] = (o, h, lo, c, v)
    if unknown:
        raise DataError(f"{path}: tickers not in universe: {sorted(unknown)}")

    calendar = sorted(set().union(*(r.keys() for r in rows.values())))
    if not calendar:
        raise DataError(f"{path}: no bars for any universe ticker")
    out = {}
    for ticker, by_day in rows.items():
        if calendar[0] not in by_day:
            raise DataError(f"{path}: {ticker} has no bar on the first date {calendar[0]}; cannot forward-fill")
        vals = np.empty((len(calendar), 5))
        prev_close = None
        for i, day in enumerate(calendar):
            bar = by_day.get(day)
            if bar is None:
                vals[i] = (prev_close, prev_close, prev_close, prev_close, 0.0)
            else:
                vals[i] = bar
                prev_close = bar[3]
        out[ticker] = BarSeries(list(calendar), vals[:, 0], vals[:, 1], vals[:, 2], vals[:, 3], vals[:, 4])
    return out


def write_bars(path, bars: dict) -> None:
    """Write series as a bars CSV; floats use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BAR_HEADER)
        for ticker, s in bars.items():
            for i, day in enumerate(s.dates):
                w.writerow([day.isoformat(), ticker, repr(float(s.open[i])), repr(float(s.high[i])),
                            repr(float(s.low[i])), repr(float(s.close[i])), repr(float(s.volume[i]))])
