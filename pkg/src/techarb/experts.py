"""Expert grid enumeration and the translation of trading signals into zero-cost controls.

An expert is one (strategy, cluster, n1, n2) combination.  Its controls cover
the m risky assets plus a trailing risk-free leg, so control vectors have
length m + 1.  Controls are either all zero or sum to zero with unit
absolute sum.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import indicators as ind
from . import port_strategies as ps
from .market_data import Panel, Universe

VOL_WINDOW = 90
DEFAULT_N1 = (4, 8, 12, 16, 20)
DEFAULT_N2 = (24, 32, 40, 48)
PORTFOLIO_STRATEGIES = ("z_bcrp", "anti_z_bcrp", "z_anticor")
STRATEGY_LABELS = {**{k: r.label for k, r in ind.RULES.items()},
                   "z_bcrp": "Z-BCRP", "anti_z_bcrp": "Anti-Z-BCRP", "z_anticor": "Z-Anticor"}
ALL_STRATEGIES = tuple(ind.RULES) + PORTFOLIO_STRATEGIES
VOLATILITY, INVERSE_VOLATILITY = "volatility", "inverse-volatility"


def arity(strategy: str) -> int:
    if strategy in PORTFOLIO_STRATEGIES:
        return 1
    return ind.get_rule(strategy).arity


@dataclass(frozen=True, order=True)
class ExpertSpec:
    rule: str
    cluster: str
    n1: int
    n2: int | None = None

    def __post_init__(self):
        if self.rule not in ALL_STRATEGIES:
            raise ValueError(f"unknown strategy {self.rule!r}")
        if arity(self.rule) == 2:
            if self.n2 is None or self.n1 >= self.n2:
                raise ValueError(f"{self.rule} needs n1 < n2, got ({self.n1}, {self.n2})")
        elif self.n2 is not None:
            object.__setattr__(self, "n2", None)

    @property
    def label(self) -> str:
        return STRATEGY_LABELS[self.rule]

    @property
    def key(self) -> str:
        return f"{self.rule}|{self.cluster}|{self.n1}|{self.n2 if self.n2 is not None else '-'}"


@dataclass
class ExpertState:
    controls: np.ndarray
    wealth: float = 1.0
    last_signals: np.ndarray = None

    @classmethod
    def initial(cls, m: int) -> "ExpertState":
        return cls(np.zeros(m + 1), 1.0, np.zeros(m, dtype=np.int8))


def enumerate_experts(universe: Universe, rules: Iterable[str] = ALL_STRATEGIES,
                      n1_grid: Sequence[int] = DEFAULT_N1, n2_grid: Sequence[int] = DEFAULT_N2,
                      clusters: Sequence[str] | None = None) -> list[ExpertSpec]:
    """All experts ordered by (rule, cluster, n1, n2); two-parameter rules keep only n1 < n2."""
    clusters = list(universe.clusters) if clusters is None else list(clusters)
    out = []
    for rule in rules:
        for c in clusters:
            if c not in universe.clusters:
                raise ValueError(f"unknown cluster {c!r}")
            for n1 in n1_grid:
                if arity(rule) == 1:
                    out.append(ExpertSpec(rule, c, n1))
                else:
                    out.extend(ExpertSpec(rule, c, n1, n2) for n2 in n2_grid if n1 < n2)
    return out


def output_signals(current, previous) -> np.ndarray:
    """Replace holds with the previous period's output signal."""
    current = np.asarray(current)
    return np.where(current != 0, current, np.asarray(previous)).astype(np.int8)


def carry_signals(raw: np.ndarray) -> np.ndarray:
    """Apply output_signals recursively down the time axis of a (T, m) signal matrix."""
    raw = np.asarray(raw)
    T = raw.shape[0]
    idx = np.where(raw != 0, np.arange(T)[:, None], 0)
    np.maximum.accumulate(idx, axis=0, out=idx)
    out = np.take_along_axis(raw, idx, axis=0)
    return np.where((idx == 0) & (raw[0] == 0), 0, out).astype(np.int8)


def signals_to_controls(signals, vol, mode: str = VOLATILITY) -> np.ndarray:
    """Volatility-loaded zero-cost controls for one or many periods.

    ``signals`` and ``vol`` have shape (m,) or (T, m); the result has one
    extra trailing column for the risk-free asset.  Each side carries half of
    the capital in proportion to its assets' volatility; when only one side
    is present the risk-free leg takes the other half.  A side whose
    volatilities sum to zero is equally weighted.
    """
    s = np.asarray(signals)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    v = np.nan_to_num(np.atleast_2d(np.asarray(vol, dtype=float)), nan=0.0, posinf=0.0)
    if mode == INVERSE_VOLATILITY:
        with np.errstate(divide="ignore"):
            v = np.where(v > 0, 1.0 / v, 0.0)
    elif mode != VOLATILITY:
        raise ValueError(f"unknown loading mode {mode!r}")
    if np.any(v < 0):
        raise ValueError("volatilities must be non-negative")
    h = np.zeros((s.shape[0], s.shape[1] + 1))
    for side in (1, -1):
        on = s == side
        load = np.where(on, v, 0.0)
        total = load.sum(axis=1, keepdims=True)
        count = on.sum(axis=1, keepdims=True)
        equal = np.where(on, 1.0, 0.0) / np.maximum(count, 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(total > 0, load / np.where(total > 0, total, 1.0), equal)
        h[:, :-1] += side * 0.5 * w
    h[:, -1] = -h[:, :-1].sum(axis=1)
    return h[0] if single else h


def trailing_vol(close, window: int = VOL_WINDOW) -> np.ndarray:
    """Sample stdev (ddof 1) of the last ``window`` closes, or of all available ones early on.

    Works column-wise on a (T, m) matrix; the first row is NaN (one observation).
    """
    c = np.asarray(close, dtype=float)
    squeeze = c.ndim == 1
    c = c[:, None] if squeeze else c
    T = c.shape[0]
    out = np.full(c.shape, np.nan)
    head = min(window - 1, T)
    for t in range(1, head):
        out[t] = c[: t + 1].std(axis=0, ddof=1)
    if T >= window:
        out[window - 1:] = sliding_window_view(c, window, axis=0).std(axis=-1, ddof=1)
    return out[:, 0] if squeeze else out


# ---------------------------------------------------------------------------
# Controls over a whole panel
# ---------------------------------------------------------------------------

class ControlBuilder:
    """Computes causal expert control paths on a panel, sharing signal work across clusters."""

    def __init__(self, panel: Panel, universe: Universe, vol_window: int = VOL_WINDOW,
                 mode: str = VOLATILITY):
        self.panel = panel
        self.universe = universe
        self.mode = mode
        self.vol = trailing_vol(panel.close, vol_window)
        self.x = panel.relatives()
        self._signals: dict[tuple, np.ndarray] = {}
        self._index = {t: i for i, t in enumerate(panel.tickers)}

    def _members(self, cluster: str) -> np.ndarray:
        return np.array([self._index[t] for t in self.universe.clusters[cluster] if t in self._index], dtype=int)

    def raw_signals(self, rule: str, n1: int, n2: int | None) -> np.ndarray:
        key = (rule, n1, n2)
        if key not in self._signals:
            self._signals[key] = np.column_stack(
                [ind.rule_signals(rule, self.panel.asset(i), n1, n2) for i in range(self.panel.n_assets)]
            )
        return self._signals[key]

    def controls(self, spec: ExpertSpec) -> np.ndarray:
        """(T, m+1) controls; row t is decided with data up to and including period t."""
        T, m = self.panel.n_periods, self.panel.n_assets
        members = self._members(spec.cluster)
        h = np.zeros((T, m + 1))
        if members.size == 0:
            return h
        if spec.rule in PORTFOLIO_STRATEGIES:
            return self._portfolio_controls(spec, members, h)
        sig = np.zeros((T, m), dtype=np.int8)
        sig[:, members] = self.raw_signals(spec.rule, spec.n1, spec.n2)[:, members]
        return signals_to_controls(carry_signals(sig), self.vol, self.mode)

    def _portfolio_controls(self, spec: ExpertSpec, members: np.ndarray, h: np.ndarray) -> np.ndarray:
        ell, T = spec.n1, h.shape[0]
        x = self.x[:, members]
        if spec.rule == "z_anticor":
            prev = np.zeros(members.size)
            for t in range(2 * ell, T):
                prev = ps.z_anticor(prev, x[t - 2 * ell + 1: t + 1], ell)
                h[t, members] = prev
            return h
        fn = ps.z_bcrp if spec.rule == "z_bcrp" else ps.anti_z_bcrp
        for t in range(ell, T):
            h[t, members] = fn(x[t - ell + 1: t + 1])
        return h

    def tensor(self, specs: Sequence[ExpertSpec]) -> np.ndarray:
        """(T, Omega, m+1) control tensor."""
        T, m = self.panel.n_periods, self.panel.n_assets
        H = np.empty((T, len(specs), m + 1))
        for k, spec in enumerate(specs):
            H[:, k, :] = self.controls(spec)
        return H


def expert_controls(spec: ExpertSpec, panel: Panel, universe: Universe, vol_window: int = VOL_WINDOW,
                    mode: str = VOLATILITY) -> np.ndarray:
    return ControlBuilder(panel, universe, vol_window, mode).controls(spec)


def control_tensor(specs: Sequence[ExpertSpec], panel: Panel, universe: Universe,
                   vol_window: int = VOL_WINDOW, mode: str = VOLATILITY) -> np.ndarray:
    return ControlBuilder(panel, universe, vol_window, mode).tensor(specs)


# ---------------------------------------------------------------------------
# One-period update
# ---------------------------------------------------------------------------

def wealth_increment(h, x) -> float:
    """Sum_m h_m (x_m - 1) + 1 over assets and the risk-free leg."""
    return float(np.dot(np.asarray(h, dtype=float), np.asarray(x, dtype=float) - 1.0) + 1.0)


def expert_step(spec: ExpertSpec, state: ExpertState, window: Panel, universe: Universe,
                x_t=None, vol_window: int = VOL_WINDOW, mode: str = VOLATILITY) -> ExpertState:
    """Compound the expert's wealth over the latest period, then compute its next controls.

    ``window`` holds every bar up to and including the current period;
    ``x_t`` are that period's relatives (risk-free last) and default to the
    last row of the window's relatives.
    """
    t = window.n_periods - 1
    m = window.n_assets
    if x_t is None:
        x_t = window.relatives()[-1]
    wealth = state.wealth * wealth_increment(state.controls, x_t)
    index = {tk: i for i, tk in enumerate(window.tickers)}
    members = np.array([index[tk] for tk in universe.clusters[spec.cluster] if tk in index], dtype=int)
    last = np.zeros(m, dtype=np.int8) if state.last_signals is None else state.last_signals
    h = np.zeros(m + 1)
    if members.size == 0:
        return ExpertState(h, wealth, last)
    if spec.rule in PORTFOLIO_STRATEGIES:
        ell = spec.n1
        x = window.relatives()[:, members]
        if spec.rule == "z_anticor":
            if t >= 2 * ell:
                h[members] = ps.z_anticor(state.controls[members], x[t - 2 * ell + 1:], ell)
        elif t >= ell:
            fn = ps.z_bcrp if spec.rule == "z_bcrp" else ps.anti_z_bcrp
            h[members] = fn(x[t - ell + 1:])
        return ExpertState(h, wealth, last)
    current = np.zeros(m, dtype=np.int8)
    for i in members:
        current[i] = ind.rule_signal(spec.rule, window.asset(i), spec.n1, spec.n2, t)
    out = output_signals(current, last)
    vol = trailing_vol(window.close[-vol_window:], vol_window)[-1]
    return ExpertState(signals_to_controls(out, vol, mode), wealth, out)


def omega(n_clusters: int, n1_grid: Sequence[int], n2_grid: Sequence[int], w1: int, w2: int) -> int:
    """Closed-form expert count C L W1 + C W2 #{(l, k): n1(l) < n2(k)}."""
    pairs = sum(1 for a in n1_grid for b in n2_grid if a < b)
    return n_clusters * len(n1_grid) * w1 + n_clusters * w2 * pairs


@dataclass
class ExpertGridConfig:
    rules: list[str] = field(default_factory=lambda: list(ALL_STRATEGIES))
    n1: list[int] = field(default_factory=lambda: list(DEFAULT_N1))
    n2: list[int] = field(default_factory=lambda: list(DEFAULT_N2))
    clusters: list[str] | None = None
    vol_window: int = VOL_WINDOW
    mode: str = VOLATILITY
