"""Transaction costs: the square-root impact formula and its volatility estimators.

Per-period cost of holding controls b_t entered from b_{t-1}:

    TC_t = Spread * M_t + sigma * sqrt(n / ADV) + direct * 1{b_t != 0}

where M_t counts assets whose position sign reversed over all stocks, n is a
fixed fraction (``participation``) of ADV, and the impact term is the scalar
formula for a representative held stock: the mean of sigma_m sqrt(n_m / ADV_m)
over held stocks (``impact_weighting="mean"``).  Alternatives: ``"held"`` sums
the per-stock terms; ``"abs_weight"`` weights each by |b_m|.  Costs are fractions of
wealth and are subtracted from the wealth increment of the period in which the
position is held.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.special import expit

from .experts import trailing_vol

TRAILING, GARCH, REALIZED = "trailing-stdev-90", "garch11-forecast", "realized-vol"
GARCH_MIN_OBS = 60
GARCH_BARS = 15
ACTIVE_BARS = 85


@dataclass
class CostConfig:
    """Cost parameters as fractions per period.

    ``participation`` is the traded quantity as a fraction of ADV.  When ADV
    is zero but something is traded the impact term is replaced by
    ``zero_adv_penalty``.
    """

    spread: float = 1e-4
    direct: float = 4e-4
    participation: float = 1e-4
    adv_window: int = 90
    vol_window: int = 90
    zero_adv_penalty: float = 0.01
    impact_weighting: str = "mean"

    def __post_init__(self):
        if self.impact_weighting not in ("mean", "held", "abs_weight"):
            raise ValueError(f"unknown impact weighting {self.impact_weighting!r}")
        for k in ("spread", "direct", "participation", "zero_adv_penalty"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")
        if self.adv_window < 1 or self.vol_window < 2:
            raise ValueError("windows too short")

    @classmethod
    def daily(cls, **kw) -> "CostConfig":
        return cls(**kw)

    @classmethod
    def intraday(cls, **kw) -> "CostConfig":
        """Per-day intraday budgets split across the 85 bars on which experts can trade."""
        base = dict(spread=0.0020 / ACTIVE_BARS, direct=0.0070 / ACTIVE_BARS,
                    participation=0.0070 / ACTIVE_BARS, adv_window=5)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VolEstimate:
    sigma: float
    method: str
    flags: list[str] = field(default_factory=list)
    params: dict | None = None

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")


def transaction_cost(M: int, sigma: float, n: float, adv: float, cfg: CostConfig,
                     flags: list[str] | None = None) -> float:
    """TC = M * Spread + sigma * sqrt(n / ADV) for one asset (direct cost excluded).

    With ADV = 0 and n > 0 the impact term is the configured penalty and
    ``"zero_adv"`` is appended to ``flags``.
    """
    if M < 0 or sigma < 0 or n < 0 or adv < 0:
        raise ValueError("inputs must be non-negative")
    if n == 0:
        return M * cfg.spread
    if adv == 0:
        if flags is not None:
            flags.append("zero_adv")
        return M * cfg.spread + cfg.zero_adv_penalty
    return M * cfg.spread + sigma * float(np.sqrt(n / adv))


def flip_count(prev, curr) -> int:
    """Number of strict sign reversals (+ to - or - to +)."""
    p, c = np.sign(np.asarray(prev, dtype=float)), np.sign(np.asarray(curr, dtype=float))
    return int(np.count_nonzero(p * c < 0))


def trailing_stdev(closes, window: int = 90, normalize: bool = False) -> VolEstimate:
    """Sample stdev of the last ``window`` closes (all of them when fewer are available).

    With ``normalize`` the price stdev is divided by the latest close to put
    it on a return scale.
    """
    c = np.asarray(closes, dtype=float)
    if c.size < 2:
        return VolEstimate(0.0, TRAILING, ["insufficient_data"])
    s = float(c[-window:].std(ddof=1))
    if normalize:
        s /= c[-1]
    return VolEstimate(s, TRAILING)


def realized_vol(returns) -> VolEstimate:
    """sigma = sqrt(sum r^2) over the supplied intraday returns."""
    r = np.asarray(returns, dtype=float)
    if r.size < 1:
        raise ValueError("need at least one return")
    return VolEstimate(float(np.sqrt(np.sum(r * r))), REALIZED, params={"RV": float(np.sum(r * r)), "f": int(r.size)})


# ---------------------------------------------------------------------------
# GARCH(1,1)
# ---------------------------------------------------------------------------

def garch_variance(r: np.ndarray, omega: float, alpha: float, beta: float, s0: float) -> np.ndarray:
    """sigma^2_t = omega + alpha r^2_{t-1} + beta sigma^2_{t-1}, with sigma^2_0 = s0; length T + 1."""
    r2 = np.concatenate([[0.0], r * r])
    drive = omega + alpha * r2
    drive[0] = s0
    return lfilter([1.0], [1.0, -beta], drive)


def _unpack(z: np.ndarray) -> tuple[float, float, float]:
    # omega = exp(z0); (alpha, beta) = persistence * (share, 1 - share), both via logistic maps
    omega = np.exp(z[0])
    persistence, share = expit(z[1]), expit(z[2])
    return omega, persistence * share, persistence * (1.0 - share)


def _pack(omega: float, alpha: float, beta: float) -> np.ndarray:
    p = alpha + beta
    return np.array([np.log(omega), np.log(p / (1 - p)), np.log(alpha / beta)])


def garch_loglik(r: np.ndarray, omega: float, alpha: float, beta: float, s0: float | None = None) -> float:
    r = np.asarray(r, dtype=float)
    s0 = float(np.mean(r * r)) if s0 is None else s0
    s2 = garch_variance(r, omega, alpha, beta, s0)[:-1]
    if np.any(s2 <= 0):
        return -np.inf
    return float(-0.5 * np.sum(np.log(2 * np.pi * s2) + r * r / s2))


def _numeric_hessian(f, x: np.ndarray, rel: float = 1e-4) -> np.ndarray:
    k = x.size
    h = rel * np.maximum(np.abs(x), 1e-8)
    H = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            ei, ej = np.zeros(k), np.zeros(k)
            ei[i], ej[j] = h[i], h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
    return H


@dataclass
class GarchFit:
    omega: float
    alpha: float
    beta: float
    loglik: float
    se: dict
    forecast: float
    flags: list[str]


def garch11_fit(returns, min_obs: int = GARCH_MIN_OBS) -> GarchFit:
    """Gaussian quasi-MLE of GARCH(1,1) by Nelder-Mead on a reparameterisation enforcing
    omega > 0, alpha, beta > 0 and alpha + beta < 1.  The recursion starts at the sample
    second moment.  Standard errors come from a finite-difference Hessian in natural
    parameters; they are NaN when it is not negative definite.
    """
    r = np.asarray(returns, dtype=float)
    if r.size < min_obs:
        raise ValueError(f"need {min_obs} returns, got {r.size}")
    s0 = float(np.mean(r * r))
    if not s0 > 0:
        raise ValueError("degenerate returns (zero second moment)")
    scale = np.sqrt(s0)
    z = r / scale  # fit on unit-variance data, then map omega back

    def nll(p):
        om, a, b = _unpack(p)
        val = -garch_loglik(z, om, a, b, 1.0)
        return val if np.isfinite(val) else 1e300

    best = None
    for a0, b0 in ((0.05, 0.90), (0.10, 0.60), (0.02, 0.50)):
        start = _pack(1.0 - a0 - b0, a0, b0)
        res = minimize(nll, start, method="Nelder-Mead",
                       options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000})
        if best is None or res.fun < best.fun:
            best = res
    flags = [] if best.success else ["not_converged"]
    om, a, b = _unpack(best.x)
    omega = om * s0
    ll = garch_loglik(r, omega, a, b, s0)
    H = _numeric_hessian(lambda p: garch_loglik(r, p[0], p[1], p[2], s0), np.array([omega, a, b]))
    se = {"omega": np.nan, "alpha": np.nan, "beta": np.nan}
    try:
        cov = np.linalg.inv(-H)
        d = np.diag(cov)
        if np.all(d > 0) and np.all(np.linalg.eigvalsh(-H) > 0):
            se = dict(zip(("omega", "alpha", "beta"), np.sqrt(d)))
        else:
            flags.append("information_not_positive_definite")
    except np.linalg.LinAlgError:
        flags.append("information_singular")
    s2 = garch_variance(r, omega, a, b, s0)
    return GarchFit(omega, a, b, ll, se, float(np.sqrt(s2[-1])), flags)


def garch11_fit_forecast(returns, min_obs: int = GARCH_MIN_OBS) -> VolEstimate:
    """One-step-ahead GARCH(1,1) volatility forecast from the last ``min_obs`` returns.

    Falls back to the sample stdev (flagged) when there are too few returns,
    the returns are degenerate, or the fit fails.
    """
    r = np.asarray(returns, dtype=float)
    r = r[np.isfinite(r)]
    fallback = float(r.std(ddof=1)) if r.size >= 2 else 0.0
    if r.size < min_obs:
        return VolEstimate(fallback, TRAILING, ["garch_fallback_insufficient_data"])
    r = r[-min_obs:]
    try:
        fit = garch11_fit(r, min_obs)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return VolEstimate(fallback, TRAILING, [f"garch_fallback: {exc}"])
    if "not_converged" in fit.flags or not np.isfinite(fit.forecast):
        return VolEstimate(fallback, TRAILING, ["garch_fallback_not_converged"])
    return VolEstimate(fit.forecast, GARCH, fit.flags,
                       {"omega": fit.omega, "alpha": fit.alpha, "beta": fit.beta})


# ---------------------------------------------------------------------------
# Per-period costs of a control path
# ---------------------------------------------------------------------------

def portfolio_costs(b: np.ndarray, sigma: np.ndarray, adv: np.ndarray, cfg: CostConfig) -> np.ndarray:
    """Per-period costs of the control path ``b`` (T, m+1, risk-free last).

    ``sigma`` and ``adv`` are (T, m) and taken at the decision period t-1.
    Period t is charged for holding b[t-1]: spread on the sign reversals from
    b[t-2], impact for each held asset, and the direct cost when anything is
    held.  Period 0 costs nothing.
    """
    b = np.asarray(b, dtype=float)
    stocks = b[:, :-1]
    T = b.shape[0]
    cost = np.zeros(T)
    if T < 2:
        return cost
    held = stocks[:-1]
    prev = np.vstack([np.zeros((1, stocks.shape[1])), stocks[:-2]])
    flips = np.count_nonzero(np.sign(prev) * np.sign(held) < 0, axis=1)
    sig = np.nan_to_num(np.asarray(sigma, dtype=float)[:-1], nan=0.0)
    a = np.asarray(adv, dtype=float)[:-1]
    traded = np.abs(held) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        impact = np.where(a > 0, sig * np.sqrt(cfg.participation), cfg.zero_adv_penalty)
    impact = np.where(traded & (cfg.participation > 0), impact, 0.0)
    if cfg.impact_weighting == "abs_weight":
        impact = np.sum(impact * np.abs(held), axis=1)
    elif cfg.impact_weighting == "held":
        impact = np.sum(impact, axis=1)
    else:
        impact = np.sum(impact, axis=1) / np.maximum(np.count_nonzero(traded, axis=1), 1)
    cost[1:] = (flips * cfg.spread + impact
                + cfg.direct * (np.abs(b[:-1]).sum(axis=1) > 0))
    return cost


def rolling_adv(volume: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean volume over up to ``window`` periods, per column."""
    v = np.asarray(volume, dtype=float)
    cs = np.cumsum(np.concatenate([np.zeros((1,) + v.shape[1:]), v]), axis=0)
    T = v.shape[0]
    idx = np.arange(1, T + 1)
    lo = np.maximum(idx - window, 0)
    n = (idx - lo).reshape((-1,) + (1,) * (v.ndim - 1))
    return (cs[idx] - cs[lo]) / n


def daily_sigma(close: np.ndarray, window: int = 90) -> np.ndarray:
    """Trailing price stdev divided by the latest close (return scale), per column."""
    c = np.asarray(close, dtype=float)
    return trailing_vol(c, window) / c


class DailyCosts:
    """Cost callback for daily backtests."""

    def __init__(self, close: np.ndarray, volume: np.ndarray, cfg: CostConfig | None = None):
        self.cfg = cfg or CostConfig.daily()
        self.sigma = daily_sigma(close, self.cfg.vol_window)
        self.adv = rolling_adv(volume, self.cfg.adv_window)

    def __call__(self, b: np.ndarray) -> np.ndarray:
        return portfolio_costs(b, self.sigma, self.adv, self.cfg)


def intraday_sigma(prev_day_close: np.ndarray | None, close: np.ndarray,
                   garch_bars: int = GARCH_BARS, min_obs: int = GARCH_MIN_OBS) -> tuple[np.ndarray, list[str]]:
    """Per-bar sigma for one day, per column.

    Bars before ``garch_bars`` use a GARCH(1,1) forecast fitted on the previous
    day's last returns; later bars use sqrt(cumulative RV / elapsed bars).
    """
    c = np.asarray(close, dtype=float)
    bars, m = c.shape
    sig = np.zeros((bars, m))
    flags = []
    r = np.zeros((bars, m))
    r[1:] = np.log(c[1:] / c[:-1])
    rv = np.cumsum(r * r, axis=0)
    elapsed = np.maximum(np.arange(bars), 1)[:, None]
    sig[:] = np.sqrt(rv / elapsed)
    for j in range(m):
        if prev_day_close is None:
            est = VolEstimate(float(np.sqrt(rv[garch_bars - 1, j] / max(garch_bars - 1, 1))), REALIZED,
                              ["no_previous_day"])
        else:
            pc = np.asarray(prev_day_close, dtype=float)[:, j]
            est = garch11_fit_forecast(np.log(pc[1:] / pc[:-1]), min_obs)
        sig[:garch_bars, j] = est.sigma
        flags.extend(est.flags)
    return sig, flags


class IntradayCosts:
    """Cost callback for the intraday legs of a fused backtest."""

    def __init__(self, day_closes: Sequence[np.ndarray], day_volumes: Sequence[np.ndarray],
                 cfg: CostConfig | None = None):
        self.cfg = cfg or CostConfig.intraday()
        self.sigma, self.flags = [], []
        daily_volume = np.array([np.asarray(v, dtype=float).sum(axis=0) for v in day_volumes])
        # ADV from the previous days only; the first day uses its own volume
        adv = rolling_adv(daily_volume, self.cfg.adv_window)
        self.adv = np.vstack([adv[:1], adv[:-1]])
        for t, c in enumerate(day_closes):
            s, f = intraday_sigma(day_closes[t - 1] if t > 0 else None, c)
            self.sigma.append(s)
            self.flags.extend(f)

    def __call__(self, t: int, b: np.ndarray) -> np.ndarray:
        sig = self.sigma[t]
        sig = np.vstack([sig, sig[-1:]])  # close-out interval reuses the last bar's estimate
        adv = np.broadcast_to(self.adv[t], sig.shape)
        return portfolio_costs(b, sig, adv, self.cfg)
