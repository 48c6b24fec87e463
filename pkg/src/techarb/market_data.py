"""OHLCV ingestion, bar calendars, price relatives, liquidity ranking and the risk-free series."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

DAILY = "daily"
INTRADAY = "intraday-5min"
FREQUENCIES = (DAILY, INTRADAY)

BARS_PER_DAY = 88
OHLCV_HEADER = ("timestamp", "ticker", "open", "high", "low", "close", "volume")
RISK_FREE_HEADER = ("date", "level")
CLUSTER_NAMES = ("trivial", "resources", "industrials", "financials")


class DataError(ValueError):
    """Input data violates the documented file format or invariants."""


class ParseError(DataError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class OrderingError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


@dataclass(frozen=True)
class Bar:
    timestamp: datetime
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self):
        _check_bar(self.open, self.high, self.low, self.close, self.volume)


def _check_bar(o, h, l, c, v) -> None:
    if not all(np.isfinite([o, h, l, c, v])):
        raise ValueError("non-finite price or volume")
    if min(o, h, l, c) <= 0:
        raise ValueError("prices must be strictly positive")
    if v < 0:
        raise ValueError("volume must be non-negative")
    if l > min(o, c) or h < max(o, c) or h < l:
        raise ValueError(f"inconsistent bar: open={o} high={h} low={l} close={c}")


@dataclass
class BarSeries:
    """Column-oriented OHLCV series for one asset on a strictly increasing calendar.

    ``filled`` marks bars synthesised to close a gap in the calendar (close
    carried forward, zero volume).
    """

    ticker: str
    frequency: str
    timestamps: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    filled: np.ndarray = None

    def __post_init__(self):
        if self.frequency not in FREQUENCIES:
            raise ValueError(f"unknown frequency {self.frequency!r}")
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        for name in ("open", "high", "low", "close", "volume"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.timestamps.size
        if self.filled is None:
            self.filled = np.zeros(n, dtype=bool)
        if any(a.size != n for a in (self.open, self.high, self.low, self.close, self.volume)):
            raise ValueError("column lengths differ")
        if n > 1 and not np.all(np.diff(self.timestamps) > np.timedelta64(0, "s")):
            raise OrderingError(f"{self.ticker}: timestamps not strictly increasing")

    @classmethod
    def from_bars(cls, ticker: str, frequency: str, bars: Sequence[Bar]) -> "BarSeries":
        return cls(
            ticker, frequency,
            np.array([np.datetime64(b.timestamp, "s") for b in bars], dtype="datetime64[s]"),
            [b.open for b in bars], [b.high for b in bars], [b.low for b in bars],
            [b.close for b in bars], [b.volume for b in bars],
        )

    @classmethod
    def from_closes(cls, ticker: str, closes, frequency: str = DAILY, start="2000-01-03",
                    volume=1.0) -> "BarSeries":
        """Series whose open/high/low equal the close; handy for synthetic paths."""
        c = np.asarray(closes, dtype=float)
        step = np.timedelta64(1, "D") if frequency == DAILY else np.timedelta64(5, "m")
        ts = np.datetime64(start, "s") + np.arange(c.size) * step
        return cls(ticker, frequency, ts, c, c, c, c, np.broadcast_to(volume, c.shape).copy())

    def __len__(self) -> int:
        return self.timestamps.size

    @property
    def bars(self) -> list[Bar]:
        return [
            Bar(t.astype(datetime), *vals)
            for t, *vals in zip(self.timestamps, self.open, self.high, self.low, self.close, self.volume)
        ]

    def slice(self, start: int, stop: int) -> "BarSeries":
        s = slice(start, stop)
        return BarSeries(self.ticker, self.frequency, self.timestamps[s], self.open[s], self.high[s],
                         self.low[s], self.close[s], self.volume[s], self.filled[s])


@dataclass
class RiskFreeSeries:
    dates: np.ndarray
    level: np.ndarray

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.level = np.asarray(self.level, dtype=float)
        if self.dates.size != self.level.size:
            raise ValueError("dates and levels differ in length")
        if self.dates.size > 1 and not np.all(np.diff(self.dates) > np.timedelta64(0, "D")):
            raise OrderingError("risk-free dates not strictly increasing")
        if np.any(self.level <= 0):
            raise DataError("risk-free levels must be positive")

    @classmethod
    def flat(cls, dates, rate: float = 0.0) -> "RiskFreeSeries":
        """Index growing at a constant per-day ``rate``."""
        dates = np.asarray(dates, dtype="datetime64[D]")
        return cls(dates, (1.0 + rate) ** np.arange(dates.size))

    def relatives(self) -> np.ndarray:
        """Daily price relatives of the index; the first day is 1."""
        out = np.ones(self.level.size)
        out[1:] = self.level[1:] / self.level[:-1]
        return out

    def aligned(self, days) -> "RiskFreeSeries":
        """Levels on the given trading days, carrying the last published value forward."""
        days = np.asarray(days, dtype="datetime64[D]")
        idx = np.searchsorted(self.dates, days, side="right") - 1
        if np.any(idx < 0):
            raise DataError("risk-free series starts after the first trading day")
        return RiskFreeSeries(days, self.level[idx])

    def intraday_relatives(self, bars_per_day: int = BARS_PER_DAY) -> np.ndarray:
        """Per-bar relatives: each day's rate apportioned equally across its bars."""
        daily_rate = self.relatives() - 1.0
        return 1.0 + daily_rate / bars_per_day


@dataclass
class Universe:
    tickers: list[str]
    clusters: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.tickers = list(self.tickers)
        clusters = {"trivial": list(self.tickers)}
        for name, members in self.clusters.items():
            if name == "trivial":
                continue
            unknown = set(members) - set(self.tickers)
            if unknown:
                raise DataError(f"cluster {name!r} names unknown tickers {sorted(unknown)}")
            clusters[name] = [t for t in self.tickers if t in set(members)]
        self.clusters = clusters

    def mask(self, cluster: str) -> np.ndarray:
        members = set(self.clusters[cluster])
        return np.array([t in members for t in self.tickers])

    def restrict(self, tickers: Iterable[str]) -> "Universe":
        keep = [t for t in self.tickers if t in set(tickers)]
        return Universe(keep, {k: [t for t in v if t in keep] for k, v in self.clusters.items()})


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _parse_time(text: str) -> np.datetime64:
    return np.datetime64(datetime.fromisoformat(text.strip().replace("Z", "+00:00")).replace(tzinfo=None), "s")


def load_ohlcv(path, frequency: str = DAILY, min_coverage: float = 0.6) -> dict[str, BarSeries]:
    """Read a long-format OHLCV CSV into aligned per-ticker series.

    All retained tickers share the union calendar.  Tickers present on fewer
    than ``min_coverage`` of the calendar's bars are dropped.  Gaps inside a
    retained series carry the previous close forward with zero volume and are
    flagged; bars before a ticker's first observation take its first close.
    """
    path = Path(path)
    if frequency not in FREQUENCIES:
        raise ValueError(f"unknown frequency {frequency!r}")
    rows: dict[str, list[tuple]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != OHLCV_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(OHLCV_HEADER)}")
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(OHLCV_HEADER):
                raise ParseError(path, line, f"expected {len(OHLCV_HEADER)} fields, got {len(rec)}")
            try:
                ts = _parse_time(rec[0])
                o, h, l, c, v = (float(x) for x in rec[2:])
                _check_bar(o, h, l, c, v)
            except ValueError as exc:
                raise ParseError(path, line, str(exc)) from None
            ticker = rec[1].strip()
            series_rows = rows.setdefault(ticker, [])
            if series_rows and ts <= series_rows[-1][0]:
                raise OrderingError(f"{path}:{line}: timestamps for {ticker} not strictly increasing")
            series_rows.append((ts, o, h, l, c, v))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return align(rows, frequency, min_coverage)


def align(rows: Mapping[str, list[tuple]], frequency: str, min_coverage: float = 0.6) -> dict[str, BarSeries]:
    calendar = np.unique(np.concatenate([np.array([r[0] for r in v], dtype="datetime64[s]")
                                         for v in rows.values()]))
    out = {}
    for ticker in sorted(rows):
        recs = rows[ticker]
        if len(recs) / calendar.size < min_coverage:
            continue
        ts = np.array([r[0] for r in recs], dtype="datetime64[s]")
        data = np.array([r[1:] for r in recs], dtype=float)
        pos = np.searchsorted(calendar, ts)
        present = np.zeros(calendar.size, dtype=bool)
        present[pos] = True
        # index of the latest observed bar at or before each calendar slot
        last = np.maximum.accumulate(np.where(present, np.arange(calendar.size), -1))
        src = np.full(calendar.size, -1)
        src[pos] = np.arange(len(recs))
        carried = np.where(last >= 0, src[np.maximum(last, 0)], 0)
        close = data[carried, 3]
        o, h, l, v = data[:, 0][carried], data[:, 1][carried], data[:, 2][carried], data[:, 4][carried]
        o, h, l = np.where(present, o, close), np.where(present, h, close), np.where(present, l, close)
        v = np.where(present, v, 0.0)
        out[ticker] = BarSeries(ticker, frequency, calendar, o, h, l, close, v, filled=~present)
    return out


def load_risk_free(path) -> RiskFreeSeries:
    path = Path(path)
    dates, levels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != RISK_FREE_HEADER:
            raise ParseError(path, 1, "expected header date,level")
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                dates.append(np.datetime64(rec[0].strip()[:10], "D"))
                level = float(rec[1])
                if not level > 0:
                    raise ValueError("level must be positive")
                levels.append(level)
            except (ValueError, IndexError) as exc:
                raise ParseError(path, line, str(exc)) from None
    return RiskFreeSeries(dates, levels)


def load_clusters(path, tickers: Sequence[str] | None = None) -> Universe:
    """Read a cluster map (YAML or JSON: name -> ticker list) into a Universe.

    Tickers named in the file but absent from ``tickers`` are dropped.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        mapping = json.loads(text)
    else:
        import yaml
        mapping = yaml.safe_load(text) or {}
    if not isinstance(mapping, dict):
        raise DataError(f"{path}: expected a mapping of cluster name to tickers")
    mapping = {str(k): [str(t) for t in (v or [])] for k, v in mapping.items()}
    if tickers is None:
        tickers = sorted({t for v in mapping.values() for t in v})
    keep = set(tickers)
    return Universe(list(tickers), {k: [t for t in v if t in keep] for k, v in mapping.items()})


# ---------------------------------------------------------------------------
# Derived quantities
# ---------------------------------------------------------------------------

def price_relatives(series) -> np.ndarray:
    """x_t = close_t / close_{t-1}; one fewer entry than bars."""
    close = series.close if hasattr(series, "close") else np.asarray(series, dtype=float)
    if close.size < 2:
        raise InsufficientDataError("need at least 2 bars for a price relative")
    return close[1:] / close[:-1]


def relatives_matrix(series: Mapping[str, BarSeries], tickers: Sequence[str]) -> np.ndarray:
    """(T, m) relatives with a leading row of ones so row t is the return into bar t."""
    closes = np.column_stack([series[t].close for t in tickers])
    x = np.ones_like(closes)
    x[1:] = closes[1:] / closes[:-1]
    return x


def adv(volumes, window: int) -> float:
    v = np.asarray(volumes, dtype=float)
    if v.size < window:
        raise InsufficientDataError(f"need {window} volume entries, got {v.size}")
    return float(v[-window:].mean())


def adv_rank(volumes: Mapping[str, Sequence[float]], window: int, m: int) -> list[str]:
    """The ``m`` tickers with the largest average volume over the last ``window`` periods.

    Ties are broken by ticker name.
    """
    if m > len(volumes):
        raise ValueError(f"asked for {m} tickers from a universe of {len(volumes)}")
    scores = {t: adv(v, window) for t, v in volumes.items()}
    return sorted(scores, key=lambda t: (-scores[t], t))[:m]


def trading_days(series: BarSeries) -> np.ndarray:
    return np.unique(series.timestamps.astype("datetime64[D]"))


def split_days(series: BarSeries, bars_per_day: int = BARS_PER_DAY) -> list[BarSeries]:
    """Partition an intraday series into per-day series of exactly ``bars_per_day`` bars."""
    days = series.timestamps.astype("datetime64[D]")
    bounds = np.flatnonzero(np.diff(days.astype(np.int64))) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [len(series)]])
    out = []
    for a, b in zip(starts, stops):
        if b - a != bars_per_day:
            raise DataError(f"{series.ticker}: day {days[a]} has {b - a} bars, expected {bars_per_day}")
        out.append(series.slice(a, b))
    return out


def daily_from_intraday(series: BarSeries) -> BarSeries:
    """Aggregate intraday bars into daily OHLCV (first open, max high, min low, last close, summed volume)."""
    days = series.timestamps.astype("datetime64[D]")
    uniq, start = np.unique(days, return_index=True)
    stop = np.append(start[1:], len(series))
    return BarSeries(
        series.ticker, DAILY, uniq.astype("datetime64[s]"),
        series.open[start],
        np.maximum.reduceat(series.high, start),
        np.minimum.reduceat(series.low, start),
        series.close[stop - 1],
        np.add.reduceat(series.volume, start),
    )


@dataclass
class Panel:
    """Aligned (T, m) OHLCV matrices for a universe plus the risk-free relative per period."""

    tickers: list[str]
    timestamps: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    rf_relative: np.ndarray = None

    def __post_init__(self):
        self.tickers = list(self.tickers)
        for name in ("open", "high", "low", "close", "volume"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim == 1:
                a = a[:, None]
            setattr(self, name, a)
        T, m = self.close.shape
        if m != len(self.tickers):
            raise ValueError("ticker count does not match matrix width")
        self.timestamps = np.asarray(self.timestamps)
        if self.timestamps.size != T:
            raise ValueError("timestamps do not match matrix length")
        self.rf_relative = (np.ones(T) if self.rf_relative is None
                            else np.asarray(self.rf_relative, dtype=float))
        if self.rf_relative.shape != (T,):
            raise ValueError("rf_relative must have one entry per period")

    @classmethod
    def from_series(cls, series: Mapping[str, BarSeries], tickers: Sequence[str] | None = None,
                    rf_relative=None) -> "Panel":
        tickers = sorted(series) if tickers is None else list(tickers)
        first = series[tickers[0]]
        for t in tickers[1:]:
            if not np.array_equal(series[t].timestamps, first.timestamps):
                raise DataError(f"{t}: calendar differs from {tickers[0]}")
        cols = {k: np.column_stack([getattr(series[t], k) for t in tickers])
                for k in ("open", "high", "low", "close", "volume")}
        return cls(tickers, first.timestamps, rf_relative=rf_relative, **cols)

    @classmethod
    def from_closes(cls, closes, tickers: Sequence[str] | None = None, rf_relative=None,
                    volume=1.0) -> "Panel":
        c = np.asarray(closes, dtype=float)
        c = c[:, None] if c.ndim == 1 else c
        tickers = [f"A{i}" for i in range(c.shape[1])] if tickers is None else tickers
        return cls(tickers, np.arange(c.shape[0]), c, c, c, c,
                   np.broadcast_to(volume, c.shape).astype(float), rf_relative)

    @property
    def n_periods(self) -> int:
        return self.close.shape[0]

    @property
    def n_assets(self) -> int:
        return self.close.shape[1]

    def asset(self, i: int) -> "_AssetView":
        return _AssetView(self.open[:, i], self.high[:, i], self.low[:, i], self.close[:, i], self.volume[:, i])

    def relatives(self) -> np.ndarray:
        """(T, m+1) relatives into each period, risk-free last; row 0 is all ones."""
        x = np.ones((self.n_periods, self.n_assets + 1))
        x[1:, :-1] = self.close[1:] / self.close[:-1]
        x[1:, -1] = self.rf_relative[1:]
        return x

    def slice(self, start: int, stop: int) -> "Panel":
        s = slice(start, stop)
        return Panel(self.tickers, self.timestamps[s], self.open[s], self.high[s], self.low[s],
                     self.close[s], self.volume[s], self.rf_relative[s])

    def select(self, tickers: Sequence[str]) -> "Panel":
        idx = [self.tickers.index(t) for t in tickers]
        return Panel(list(tickers), self.timestamps, self.open[:, idx], self.high[:, idx], self.low[:, idx],
                     self.close[:, idx], self.volume[:, idx], self.rf_relative)


@dataclass(frozen=True)
class _AssetView:
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
