"""Seeded synthetic OHLCV panels for tests, demos and the CLI's ``--synthetic`` option."""
from __future__ import annotations

import numpy as np

from .market_data import BARS_PER_DAY, Panel, Universe


def gbm_closes(T: int, m: int, rng: np.random.Generator, sigma: float = 0.02, drift: float = 0.0,
               start: float = 100.0) -> np.ndarray:
    """(T, m) geometric random-walk closes."""
    r = rng.normal(drift - 0.5 * sigma**2, sigma, size=(T - 1, m))
    return start * np.exp(np.vstack([np.zeros((1, m)), np.cumsum(r, axis=0)]))


def ohlcv_from_closes(close: np.ndarray, rng: np.random.Generator, range_frac: float = 0.01,
                      volume_scale: float = 1e6) -> dict[str, np.ndarray]:
    """Consistent OHLCV around given closes: open = previous close, high/low padded outward."""
    close = np.asarray(close, dtype=float)
    open_ = np.vstack([close[:1], close[:-1]])
    top = np.maximum(open_, close)
    bot = np.minimum(open_, close)
    high = top * (1 + range_frac * rng.uniform(0, 1, close.shape))
    low = bot * (1 - range_frac * rng.uniform(0, 1, close.shape))
    volume = volume_scale * rng.lognormal(0.0, 0.3, close.shape)
    return {"open": open_, "high": high, "low": low, "close": close, "volume": volume}


def random_panel(T: int = 500, m: int = 6, seed: int = 0, sigma: float = 0.02, drift: float = 0.0,
                 rf_rate: float = 0.0, tickers=None) -> Panel:
    rng = np.random.default_rng(seed)
    cols = ohlcv_from_closes(gbm_closes(T, m, rng, sigma, drift), rng)
    tickers = [f"S{i:02d}" for i in range(m)] if tickers is None else list(tickers)
    ts = np.datetime64("2010-01-04", "D") + np.arange(T)
    return Panel(tickers, ts, rf_relative=np.full(T, 1.0 + rf_rate), **cols)


def sector_universe(tickers, names=("resources", "industrials", "financials")) -> Universe:
    """Trivial cluster plus tickers dealt round-robin into the named sectors."""
    tickers = list(tickers)
    clusters = {n: tickers[i::len(names)] for i, n in enumerate(names)}
    return Universe(tickers, clusters)


def random_intraday(days: int = 5, m: int = 3, seed: int = 0, sigma_bar: float = 0.002,
                    bars: int = BARS_PER_DAY, gap_sigma: float = 0.01, rf_rate: float = 0.0,
                    tickers=None) -> tuple[list[Panel], Panel]:
    """Per-day intraday panels and the matching daily panel (daily close = last bar close)."""
    rng = np.random.default_rng(seed)
    tickers = [f"S{i:02d}" for i in range(m)] if tickers is None else list(tickers)
    last = np.full(m, 100.0)
    day_panels, d_cols = [], {k: [] for k in ("open", "high", "low", "close", "volume")}
    base = np.datetime64("2020-01-06T09:15", "m")
    for d in range(days):
        first = last * np.exp(rng.normal(0, gap_sigma, m))
        c = first * np.exp(np.vstack([np.zeros((1, m)), np.cumsum(rng.normal(0, sigma_bar, (bars - 1, m)), axis=0)]))
        cols = ohlcv_from_closes(c, rng, range_frac=0.001, volume_scale=1e4)
        cols["open"][0] = last
        cols["high"][0] = np.maximum(cols["high"][0], np.maximum(last, c[0]))
        cols["low"][0] = np.minimum(cols["low"][0], np.minimum(last, c[0]))
        ts = base + np.timedelta64(d, "D").astype("timedelta64[m]") + np.arange(bars) * np.timedelta64(5, "m")
        rf = np.full(bars, 1.0 + rf_rate / bars)
        day_panels.append(Panel(tickers, ts, rf_relative=rf, **cols))
        d_cols["open"].append(cols["open"][0])
        d_cols["high"].append(cols["high"].max(axis=0))
        d_cols["low"].append(cols["low"].min(axis=0))
        d_cols["close"].append(cols["close"][-1])
        d_cols["volume"].append(cols["volume"].sum(axis=0))
        last = c[-1]
    daily = Panel(tickers, np.datetime64("2020-01-06", "D") + np.arange(days),
                  rf_relative=np.full(days, 1.0 + rf_rate), **{k: np.array(v) for k, v in d_cols.items()})
    return day_panels, daily
