"""Online aggregation of expert controls into a single zero-cost portfolio, and the BCRP benchmark.

Indexing convention: ``b[t]`` and ``H[t]`` are decided at the end of period t
with information up to t, and earn the relatives of period t+1:

    dS_t  = b[t-1] . (x_t - 1) + 1 - cost_t
    Sh_t  = Sh_{t-1} (H[t-1] . (x_t - 1) + 1)
    q     = centre-and-normalise(Sh_t)
    b[t]  = sum_n q_n H[t, n]     (rescaled if its absolute sum exceeds 1)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .experts import ControlBuilder, ExpertSpec
from .market_data import BARS_PER_DAY, DataError, Panel, Universe

LEVERAGE_TOL = 1e-12


def renormalize_mixtures(sh) -> np.ndarray:
    """q = (Sh - mean) / sum|Sh - mean|; all zeros when the experts are indistinguishable."""
    sh = np.asarray(sh, dtype=float)
    if sh.size < 2:
        return np.zeros_like(sh)
    c = sh - sh.mean()
    s = np.abs(c).sum()
    if s <= 1e-14 * np.abs(sh).max():
        return np.zeros_like(sh)
    return c / s


def aggregate_controls(q, H) -> np.ndarray:
    """b = sum_n q_n h^n, scaled down to unit absolute sum only if it exceeds 1."""
    b = np.asarray(q, dtype=float) @ np.asarray(H, dtype=float)
    s = np.abs(b).sum()
    if s > 1.0 + LEVERAGE_TOL:
        b = b / s
    return b


@dataclass
class PortfolioLedger:
    """Wealth path of the aggregate strategy.

    ``b`` has one row per period (risk-free last); ``cost`` is the fraction
    deducted from that period's wealth increment.
    """

    timestamps: np.ndarray
    S: np.ndarray
    PL: np.ndarray
    b: np.ndarray
    cost: np.ndarray
    n_active_experts: np.ndarray
    gross_increment: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def increments(self) -> np.ndarray:
        """Per-period profit-and-loss increments PL_t - PL_{t-1}."""
        return np.diff(self.PL, prepend=0.0)

    def __len__(self) -> int:
        return self.S.size

    def rows(self):
        for t in range(len(self)):
            yield t, self.timestamps[t], self.S[t], self.PL[t], self.cost[t], int(self.n_active_experts[t])

    def truncate(self, n: int) -> "PortfolioLedger":
        return PortfolioLedger(self.timestamps[:n], self.S[:n], self.PL[:n], self.b[:n], self.cost[:n],
                               self.n_active_experts[:n], self.gross_increment[:n], dict(self.extra))


@dataclass
class LearnerResult:
    b: np.ndarray            # (T, m+1) portfolio controls
    expert_wealth: np.ndarray  # (T, Omega)
    gross_increment: np.ndarray  # (T,) b[t-1].(x_t - 1) + 1, 1 at t = 0
    n_active: np.ndarray     # (T,) experts with non-zero controls at t


def run_learner(H: np.ndarray, X: np.ndarray, sh0=None) -> LearnerResult:
    """Steps 1-5 over a control tensor H (T, Omega, m+1) and relatives X (T, m+1).

    Row 0 of X is ignored (nothing is held before the first decision).  The
    portfolio path does not depend on its own wealth, so costs can be applied
    afterwards.
    """
    H = np.asarray(H, dtype=float)
    X = np.asarray(X, dtype=float)
    T, n_exp, width = H.shape
    if X.shape != (T, width):
        raise ValueError(f"relatives shape {X.shape} does not match controls {(T, width)}")
    sh = np.ones(n_exp) if sh0 is None else np.array(sh0, dtype=float)
    Sh = np.empty((T, n_exp))
    b = np.zeros((T, width))
    gross = np.ones(T)
    active = np.zeros(T, dtype=int)
    for t in range(T):
        if t > 0:
            r = X[t] - 1.0
            gross[t] = b[t - 1] @ r + 1.0
            sh = sh * (H[t - 1] @ r + 1.0)
        Sh[t] = sh
        b[t] = aggregate_controls(renormalize_mixtures(sh), H[t])
        active[t] = np.count_nonzero(np.abs(H[t]).sum(axis=1))
    return LearnerResult(b, Sh, gross, active)


def compound(gross, cost=None) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative wealth and profit-and-loss after subtracting per-period costs."""
    gross = np.asarray(gross, dtype=float)
    cost = np.zeros_like(gross) if cost is None else np.asarray(cost, dtype=float)
    ds = gross - cost
    return np.cumprod(ds), np.cumsum(ds - 1.0)


# Cost callbacks receive the portfolio control path and return per-period costs.
CostFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class BacktestResult:
    ledger: PortfolioLedger
    specs: list[ExpertSpec]
    expert_wealth: np.ndarray
    H: np.ndarray | None = None


def run_daily_backtest(panel: Panel, universe: Universe, specs: Sequence[ExpertSpec],
                       cost_fn: CostFn | None = None, vol_window: int = 90, mode: str = "volatility",
                       keep_controls: bool = False) -> BacktestResult:
    if panel.n_periods < 2:
        raise DataError("need at least 2 periods")
    H = ControlBuilder(panel, universe, vol_window, mode).tensor(specs)
    res = run_learner(H, panel.relatives())
    cost = np.zeros(panel.n_periods) if cost_fn is None else np.asarray(cost_fn(res.b), dtype=float)
    S, PL = compound(res.gross_increment, cost)
    ledger = PortfolioLedger(panel.timestamps, S, PL, res.b, cost, res.n_active, res.gross_increment)
    return BacktestResult(ledger, list(specs), res.expert_wealth, H if keep_controls else None)


# ---------------------------------------------------------------------------
# Intraday-daily fusion
# ---------------------------------------------------------------------------

@dataclass
class IntradayDay:
    """Per-day diagnostics of the fused run."""

    b_intraday: np.ndarray     # (bars, m+1) intraday controls
    b_daily: np.ndarray        # (m+1,) controls decided at the close, held to the next close
    intraday_gross: np.ndarray  # (bars,) per-bar increments; last entry is the close-out
    closeout_increment: float
    daily_increment: float


def run_intraday_daily_backtest(intraday: Sequence[Panel], daily: Panel, universe: Universe,
                                specs: Sequence[ExpertSpec],
                                intraday_cost_fn: Callable[[int, np.ndarray], np.ndarray] | None = None,
                                daily_cost_fn: CostFn | None = None, bars_per_day: int = BARS_PER_DAY,
                                vol_window: int = 90, mode: str = "volatility"
                                ) -> tuple[PortfolioLedger, list[IntradayDay]]:
    """Fused intraday and daily trading, one ledger row per day.

    For each day t: expert wealth restarts at 1 and experts trade the day's
    bars using that day's bars only.  The position decided on the last bar is
    held to the official close (relative = daily close / last bar close) and
    then flattened, so nothing intraday is carried overnight.  Expert wealth
    is then carried through the daily leg (yesterday's daily controls on
    today's daily relatives) and the resulting mixture sets tonight's daily
    position, which is held until the next close.

    ``intraday_cost_fn(t, b_path)`` gets the day's (bars + 1, m+1) control
    path whose final row is the flat position after the close-out.
    """
    if len(intraday) != daily.n_periods:
        raise DataError(f"{len(intraday)} intraday days vs {daily.n_periods} daily periods")
    for k, day in enumerate(intraday):
        if day.n_periods != bars_per_day:
            raise DataError(f"day {k} has {day.n_periods} bars, expected {bars_per_day}")
        if day.tickers != daily.tickers:
            raise DataError(f"day {k}: tickers differ from the daily panel")
    T, width = daily.n_periods, daily.n_assets + 1
    Hd = ControlBuilder(daily, universe, vol_window, mode).tensor(specs)
    Xd = daily.relatives()
    B = np.zeros((T, width))
    intra_factor = np.ones(T)
    intra_gross = np.ones(T)
    intra_cost = np.zeros(T)
    days: list[IntradayDay] = []
    for t, day in enumerate(intraday):
        HI = ControlBuilder(day, universe, vol_window, mode).tensor(specs)
        res = run_learner(HI, day.relatives())
        x_close = np.ones(width)
        x_close[:-1] = daily.close[t] / day.close[-1]
        closeout = float(res.b[-1] @ (x_close - 1.0) + 1.0)
        bars_gross = np.append(res.gross_increment, closeout)
        c = np.zeros(bars_gross.size)
        if intraday_cost_fn is not None:
            c = np.asarray(intraday_cost_fn(t, np.vstack([res.b, np.zeros(width)])), dtype=float)
        intra_factor[t] = np.prod(bars_gross - c)
        intra_gross[t] = np.prod(bars_gross)
        intra_cost[t] = c.sum()
        sh = res.expert_wealth[-1] * (HI[-1] @ (x_close - 1.0) + 1.0)
        if t > 0:
            sh = sh * (Hd[t - 1] @ (Xd[t] - 1.0) + 1.0)
        B[t] = aggregate_controls(renormalize_mixtures(sh), Hd[t])
        daily_gross = float(B[t - 1] @ (Xd[t] - 1.0) + 1.0) if t > 0 else 1.0
        days.append(IntradayDay(res.b, B[t], bars_gross, closeout, daily_gross))
    daily_gross = np.ones(T)
    daily_gross[1:] = np.einsum("ij,ij->i", B[:-1], Xd[1:] - 1.0) + 1.0
    c_daily = np.zeros(T) if daily_cost_fn is None else np.asarray(daily_cost_fn(B), dtype=float)
    ds = intra_factor * (daily_gross - c_daily)
    n_active = np.count_nonzero(np.abs(Hd).sum(axis=2), axis=1)
    ledger = PortfolioLedger(daily.timestamps, np.cumprod(ds), np.cumsum(ds - 1.0), B,
                             intra_cost + c_daily, n_active, intra_gross * daily_gross,
                             extra={"intraday_factor": intra_factor, "daily_increment": daily_gross})
    return ledger, days


# ---------------------------------------------------------------------------
# BCRP benchmark
# ---------------------------------------------------------------------------

def crp_wealth(weights, relatives) -> np.ndarray:
    """Terminal wealth of constant rebalanced portfolios; ``weights`` is (k, m) or (m,)."""
    x = np.asarray(relatives, dtype=float)
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    return np.exp(np.log(w @ x.T).sum(axis=1))


@dataclass
class BCRPResult:
    weights: np.ndarray
    wealth: float
    seed: int | None
    n_samples: int


def bcrp_benchmark(relatives, n_samples: int = 5000, seed: int | None = 0,
                   rng: np.random.Generator | None = None, chunk: int = 1000) -> BCRPResult:
    """Best of ``n_samples`` uniformly drawn (Dirichlet(1)) constant rebalanced portfolios."""
    x = np.asarray(relatives, dtype=float)
    rng = np.random.default_rng(seed) if rng is None else rng
    m = x.shape[1]
    best_w, best = None, -np.inf
    for start in range(0, n_samples, chunk):
        w = rng.dirichlet(np.ones(m), size=min(chunk, n_samples - start))
        wealth = crp_wealth(w, x)
        k = int(np.argmax(wealth))
        if wealth[k] > best:
            best, best_w = float(wealth[k]), w[k]
    return BCRPResult(best_w, best, seed, n_samples)


def crp_path(weights, relatives) -> np.ndarray:
    """Wealth path of one constant rebalanced portfolio, starting at 1 before the first relative."""
    x = np.asarray(relatives, dtype=float)
    return np.concatenate([[1.0], np.cumprod(x @ np.asarray(weights, dtype=float))])
