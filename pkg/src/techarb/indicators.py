"""Technical indicators and the buy/sell/hold trading rules built on them.

Every indicator is causal: the value at index t only uses bars 0..t.  Periods
without enough history are NaN ("unavailable"), and a rule evaluated on an
unavailable value holds.

Indicator conventions
---------------------
SMA(n)        arithmetic mean of the last n closes
EMA(n)        y_t = y_{t-1} + a (x_t - y_{t-1}), a = 2/(n+1), seeded with x_0
MOM(n)        C_t - C_{t-n}
ACCEL(n)      MOM_t / MOM_{t-1} - 1 (NaN on a zero denominator)
MACD(n2, n1)  EMA(n1) - EMA(n2); signal line MACDS = EMA(MACD, n3), n3 = 9
Fast %K(n)    100 (C - L_n) / (H_n - L_n);  Fast %D = SMA(Fast %K, 3)
Slow %K(n)    Fast %D;  Slow %D = SMA(Slow %K, 3)
RSI(n)        Wilder smoothing of gains and losses; 50 when both are zero
MARSI(n)      SMA(RSI(n), n)
Bollinger(n)  SMA(n) +/- 2 stdev(n)
PROC(n)       (C_t - C_{t-n}) / C_{t-n}
Williams %R   -100 (H_n - C) / (H_n - L_n)
SAR           Wilder parabolic SAR, acceleration step 0.02 capped at 0.20
Kijun Sen(n)  (max H_n + min L_n) / 2
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BUY, SELL, HOLD = 1, -1, 0

MACD_SIGNAL = 9
STOCH_SMOOTH = 3
SAR_STEP = 0.02
SAR_MAX = 0.20


def _rolling(x: np.ndarray, n: int, fn) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, np.nan)
    if n < 1:
        raise ValueError("look-back must be >= 1")
    if x.size >= n:
        out[n - 1:] = fn(sliding_window_view(x, n), axis=1)
    return out


def sma(x, n: int) -> np.ndarray:
    return _rolling(x, n, np.mean)


def rolling_std(x, n: int) -> np.ndarray:
    """Sample (ddof=1) standard deviation over the last n values; n >= 2."""
    if n < 2:
        raise ValueError("rolling standard deviation needs n >= 2")
    return _rolling(x, n, lambda w, axis: np.std(w, axis=axis, ddof=1))


def rolling_max(x, n: int) -> np.ndarray:
    return _rolling(x, n, np.max)


def rolling_min(x, n: int) -> np.ndarray:
    return _rolling(x, n, np.min)


def ema(x, n: int | None = None, alpha: float | None = None) -> np.ndarray:
    """Exponential moving average seeded with the first available value.

    Leading NaNs are skipped; the recursion starts at the first finite entry.
    """
    x = np.asarray(x, dtype=float)
    if alpha is None:
        alpha = 2.0 / (n + 1.0)
    out = np.full(x.shape, np.nan)
    finite = np.flatnonzero(np.isfinite(x))
    if finite.size == 0:
        return out
    start = finite[0]
    y = x[start]
    out[start] = y
    for t in range(start + 1, x.size):
        v = x[t]
        if np.isfinite(v):
            y = y + alpha * (v - y)
        out[t] = y
    return out


def momentum(close, n: int) -> np.ndarray:
    c = np.asarray(close, dtype=float)
    out = np.full(c.shape, np.nan)
    out[n:] = c[n:] - c[:-n]
    return out


def acceleration(close, n: int) -> np.ndarray:
    mom = momentum(close, n)
    out = np.full(mom.shape, np.nan)
    prev, cur = mom[:-1], mom[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(prev != 0, cur / prev - 1.0, np.nan)
    out[1:] = ratio
    return out


def macd(close, n_long: int, n_short: int, n_signal: int = MACD_SIGNAL) -> tuple[np.ndarray, np.ndarray]:
    line = ema(close, n_short) - ema(close, n_long)
    line[: n_long - 1] = np.nan
    return line, ema(line, n_signal)


def fast_stochastic(high, low, close, n: int) -> tuple[np.ndarray, np.ndarray]:
    hn, ln = rolling_max(high, n), rolling_min(low, n)
    rng = hn - ln
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(rng > 0, 100.0 * (np.asarray(close, float) - ln) / rng, np.nan)
    return k, _nan_sma(k, STOCH_SMOOTH)


def slow_stochastic(high, low, close, n: int) -> tuple[np.ndarray, np.ndarray]:
    _, fast_d = fast_stochastic(high, low, close, n)
    return fast_d, _nan_sma(fast_d, STOCH_SMOOTH)


def _nan_sma(x: np.ndarray, n: int) -> np.ndarray:
    # windows touching an unavailable value are unavailable
    return sma(x, n)


def rsi(close, n: int) -> np.ndarray:
    c = np.asarray(close, dtype=float)
    out = np.full(c.shape, np.nan)
    if c.size <= n:
        return out
    d = np.diff(c)
    gain, loss = np.clip(d, 0, None), np.clip(-d, 0, None)
    g, l = gain[:n].mean(), loss[:n].mean()
    for t in range(n, c.size):
        if t > n:
            g = (g * (n - 1) + gain[t - 1]) / n
            l = (l * (n - 1) + loss[t - 1]) / n
        if l == 0.0:
            out[t] = 50.0 if g == 0.0 else 100.0
        else:
            out[t] = 100.0 - 100.0 / (1.0 + g / l)
    return out


def marsi(close, n: int) -> np.ndarray:
    return sma(rsi(close, n), n)


def bollinger(close, n: int, k: float = 2.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mid = sma(close, n)
    sd = rolling_std(close, n)
    return mid - k * sd, mid, mid + k * sd


def proc(close, n: int) -> np.ndarray:
    c = np.asarray(close, dtype=float)
    out = np.full(c.shape, np.nan)
    out[n:] = (c[n:] - c[:-n]) / c[:-n]
    return out


def williams_r(high, low, close, n: int) -> np.ndarray:
    hn, ln = rolling_max(high, n), rolling_min(low, n)
    rng = hn - ln
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rng > 0, -100.0 * (hn - np.asarray(close, float)) / rng, np.nan)


def kijun_sen(high, low, n: int) -> np.ndarray:
    return 0.5 * (rolling_max(high, n) + rolling_min(low, n))


def parabolic_sar(high, low, close, n: int = 2, step: float = SAR_STEP,
                  max_af: float = SAR_MAX) -> np.ndarray:
    """Wilder's parabolic SAR.

    The first ``n`` bars set the initial trend (up when the close has not
    fallen over them) and its extreme point; SAR is defined from bar n-1.
    """
    h = np.asarray(high, dtype=float)
    l = np.asarray(low, dtype=float)
    c = np.asarray(close, dtype=float)
    out = np.full(c.shape, np.nan)
    n = max(int(n), 2)
    if c.size < n:
        return out
    up = c[n - 1] >= c[0]
    if up:
        sar, ep = l[:n].min(), h[:n].max()
    else:
        sar, ep = h[:n].max(), l[:n].min()
    af = step
    out[n - 1] = sar
    for t in range(n, c.size):
        sar = sar + af * (ep - sar)
        if up:
            sar = min(sar, l[t - 1], l[t - 2])
            if l[t] < sar:
                up, sar, ep, af = False, ep, l[t], step
            elif h[t] > ep:
                ep, af = h[t], min(af + step, max_af)
        else:
            sar = max(sar, h[t - 1], h[t - 2])
            if h[t] > sar:
                up, sar, ep, af = True, ep, h[t], step
            elif l[t] < ep:
                ep, af = l[t], min(af + step, max_af)
        out[t] = sar
    return out


_INDICATORS: dict[str, Callable] = {
    "sma": lambda o, h, l, c, n: sma(c, n),
    "ema": lambda o, h, l, c, n: ema(c, n),
    "mom": lambda o, h, l, c, n: momentum(c, n),
    "accel": lambda o, h, l, c, n: acceleration(c, n),
    "macd": lambda o, h, l, c, n2, n1, n3=MACD_SIGNAL: macd(c, n2, n1, n3)[0],
    "macds": lambda o, h, l, c, n2, n1, n3=MACD_SIGNAL: macd(c, n2, n1, n3)[1],
    "fast_k": lambda o, h, l, c, n: fast_stochastic(h, l, c, n)[0],
    "fast_d": lambda o, h, l, c, n: fast_stochastic(h, l, c, n)[1],
    "slow_k": lambda o, h, l, c, n: slow_stochastic(h, l, c, n)[0],
    "slow_d": lambda o, h, l, c, n: slow_stochastic(h, l, c, n)[1],
    "rsi": lambda o, h, l, c, n: rsi(c, n),
    "marsi": lambda o, h, l, c, n: marsi(c, n),
    "boll_lower": lambda o, h, l, c, n: bollinger(c, n)[0],
    "boll_upper": lambda o, h, l, c, n: bollinger(c, n)[2],
    "proc": lambda o, h, l, c, n: proc(c, n),
    "williams_r": lambda o, h, l, c, n: williams_r(h, l, c, n),
    "sar": lambda o, h, l, c, n=2: parabolic_sar(h, l, c, n),
    "kijun": lambda o, h, l, c, n: kijun_sen(h, l, n),
}


def _ohlc(series) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if hasattr(series, "close"):
        return series.open, series.high, series.low, series.close
    c = np.asarray(series, dtype=float)
    return c, c, c, c


def indicator(series, kind: str, *params: int) -> np.ndarray:
    """Evaluate a named indicator on a BarSeries (or a bare close array)."""
    try:
        fn = _INDICATORS[kind]
    except KeyError:
        raise ValueError(f"unknown indicator {kind!r}") from None
    return fn(*_ohlc(series), *params)


# ---------------------------------------------------------------------------
# Trading rules
# ---------------------------------------------------------------------------

def _cross(prev_a, prev_b, a, b) -> np.ndarray:
    """+1 where a crosses up through b, -1 where it crosses down (ties as in the rule table)."""
    with np.errstate(invalid="ignore"):
        buy = (prev_a < prev_b) & (a >= b)
        sell = (prev_a > prev_b) & (a <= b)
    return buy.astype(int) - sell.astype(int)


def _lag(x: np.ndarray) -> np.ndarray:
    out = np.full(x.shape, np.nan)
    out[1:] = x[:-1]
    return out


def _vs_reference(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Signals of the form  x_{t-1} <= ref_t & x_t > ref_t  (buy) and mirror (sell)."""
    prev = _lag(x)
    with np.errstate(invalid="ignore"):
        buy = (prev <= ref) & (x > ref)
        sell = (prev >= ref) & (x < ref)
    return buy.astype(int) - sell.astype(int)


def _thresholds(x: np.ndarray, low: float, high: float) -> np.ndarray:
    prev = _lag(x)
    with np.errstate(invalid="ignore"):
        buy = (prev <= low) & (x > low)
        sell = (prev >= high) & (x < high)
    return buy.astype(int) - sell.astype(int)


def _ma_crossover(o, h, l, c, n1, n2):
    s1, s2 = sma(c, n1), sma(c, n2)
    return _cross(_lag(s1), _lag(s2), s1, s2)


def _ema_crossover(o, h, l, c, n1, n2):
    e1, e2 = ema(c, n1), ema(c, n2)
    return _cross(_lag(e1), _lag(e2), e1, e2)


def _kijun_cross(o, h, l, c, n1, n2):
    # Kijun Sen crossing the close from below is a buy, from above a sell
    ks = kijun_sen(h, l, n1)
    return _cross(_lag(ks), _lag(c), ks, c)


def _momentum_rule(o, h, l, c, n1, n2):
    mom = momentum(c, n1)
    return _vs_reference(mom, ema(mom, n1))


def _acceleration_rule(o, h, l, c, n1, n2):
    a1 = acceleration(c, n1) + 1.0
    prev = _lag(a1)
    with np.errstate(invalid="ignore"):
        buy = (prev <= 0) & (a1 > 0)
        sell = (prev >= 0) & (a1 < 0)
    return buy.astype(int) - sell.astype(int)


def _macd_rule(o, h, l, c, n1, n2):
    line, signal = macd(c, n2, n1)
    return _vs_reference(line, signal)


def _fast_stoch_rule(o, h, l, c, n1, n2):
    k, d = fast_stochastic(h, l, c, n1)
    return _vs_reference(k, d)


def _slow_stoch_rule(o, h, l, c, n1, n2):
    k, d = slow_stochastic(h, l, c, n1)
    return _vs_reference(k, d)


def _rsi_rule(o, h, l, c, n1, n2):
    return _thresholds(rsi(c, n1), 30.0, 70.0)


def _marsi_rule(o, h, l, c, n1, n2):
    return _thresholds(marsi(c, n1), 30.0, 70.0)


def _bollinger_rule(o, h, l, c, n1, n2):
    # buy: close crosses up through the lower band; sell: down through the upper band
    lower, _, upper = bollinger(c, n1)
    prev = _lag(np.asarray(c, float))
    with np.errstate(invalid="ignore"):
        buy = (prev <= lower) & (c > lower)
        sell = (prev >= upper) & (c < upper)
    return buy.astype(int) - sell.astype(int)


def _proc_rule(o, h, l, c, n1, n2):
    x = proc(c, n1)
    prev = _lag(x)
    with np.errstate(invalid="ignore"):
        buy = (prev <= 0) & (x > 0)
        sell = (prev >= 0) & (x < 0)
    return buy.astype(int) - sell.astype(int)


def _williams_rule(o, h, l, c, n1, n2):
    # condition rows reproduced as tabulated
    w = williams_r(h, l, c, n1)
    prev = _lag(w)
    with np.errstate(invalid="ignore"):
        buy = (prev >= -20) & (w < -80)
        sell = (prev <= -20) & (w > -80)
    return buy.astype(int) - sell.astype(int)


def _sar_rule(o, h, l, c, n1, n2):
    s = parabolic_sar(h, l, c, n1)
    c = np.asarray(c, float)
    ps, pc = _lag(s), _lag(c)
    with np.errstate(invalid="ignore"):
        buy = (ps >= pc) & (s < c)
        sell = (ps <= pc) & (s > c)
    return buy.astype(int) - sell.astype(int)


@dataclass(frozen=True)
class RuleId:
    name: str
    label: str
    arity: int
    scale_free: bool = True

    def warmup(self, n1: int, n2: int | None = None) -> int:
        """First index at which the rule may emit a non-hold signal."""
        return _WARMUP[self.name](n1, n2)


RULES: dict[str, RuleId] = {r.name: r for r in (
    RuleId("ma_crossover", "Moving Ave X-over", 2),
    RuleId("ema_crossover", "EMA X-over", 2),
    RuleId("kijun_sen", "Ichimoku Kijun Sen", 1),
    RuleId("momentum", "MOM", 1),
    RuleId("acceleration", "ACC", 1),
    RuleId("macd", "MACD", 2),
    RuleId("fast_stochastic", "Fast Stochastic", 1),
    RuleId("slow_stochastic", "Slow Stochastic", 1),
    RuleId("rsi", "RSI", 1),
    RuleId("marsi", "MARSI", 1),
    RuleId("bollinger", "BOLL", 1),
    RuleId("proc", "PROC", 1),
    RuleId("williams_r", "Williams %R", 1),
    RuleId("sar", "SAR", 1),
)}

_RULE_FNS: dict[str, Callable] = {
    "ma_crossover": _ma_crossover,
    "ema_crossover": _ema_crossover,
    "kijun_sen": _kijun_cross,
    "momentum": _momentum_rule,
    "acceleration": _acceleration_rule,
    "macd": _macd_rule,
    "fast_stochastic": _fast_stoch_rule,
    "slow_stochastic": _slow_stoch_rule,
    "rsi": _rsi_rule,
    "marsi": _marsi_rule,
    "bollinger": _bollinger_rule,
    "proc": _proc_rule,
    "williams_r": _williams_rule,
    "sar": _sar_rule,
}

# every rule needs its look-back filled at t-1 as well as at t
_WARMUP: dict[str, Callable] = {
    "ma_crossover": lambda n1, n2: n2,
    "ema_crossover": lambda n1, n2: n2,
    "macd": lambda n1, n2: n2,
    "kijun_sen": lambda n1, n2: n1,
    "momentum": lambda n1, n2: n1 + 1,
    "acceleration": lambda n1, n2: n1 + 2,
    "fast_stochastic": lambda n1, n2: n1,
    "slow_stochastic": lambda n1, n2: n1,
    "rsi": lambda n1, n2: n1 + 1,
    "marsi": lambda n1, n2: n1,
    "bollinger": lambda n1, n2: n1,
    "proc": lambda n1, n2: n1 + 1,
    "williams_r": lambda n1, n2: n1,
    "sar": lambda n1, n2: n1,
}


def get_rule(rule) -> RuleId:
    if isinstance(rule, RuleId):
        return rule
    try:
        return RULES[rule]
    except KeyError:
        raise ValueError(f"unknown trading rule {rule!r}") from None


def rule_signals(rule, series, n1: int, n2: int | None = None) -> np.ndarray:
    """Signal path (values in {-1, 0, +1}) of a rule over the whole series."""
    rid = get_rule(rule)
    if rid.arity == 2:
        if n2 is None or n1 >= n2:
            raise ValueError(f"{rid.name} needs n1 < n2, got n1={n1}, n2={n2}")
    o, h, l, c = _ohlc(series)
    sig = _RULE_FNS[rid.name](o, h, l, c, n1, n2).astype(np.int8)
    sig[: rid.warmup(n1, n2)] = HOLD
    return sig


def rule_signal(rule, series, n1: int, n2: int | None, t: int) -> int:
    """Signal of a rule at period ``t`` using bars 0..t only."""
    o, h, l, c = _ohlc(series)
    if t < 0 or t >= len(c):
        raise IndexError(t)
    window = _Window(o[: t + 1], h[: t + 1], l[: t + 1], c[: t + 1])
    return int(rule_signals(rule, window, n1, n2)[t])


@dataclass
class _Window:
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
