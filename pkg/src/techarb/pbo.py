"""Probability of backtest overfitting via combinatorially symmetric cross-validation (CSCV).

Rows of the trial matrix are periods and columns are trials.  The rows are
cut into S equal chunks; every choice of S/2 chunks forms an in-sample set
and its complement the out-of-sample set.  For each split the in-sample best
trial is located, its out-of-sample rank r among the N trials (average ranks
for ties) gives w = r / (N + 1), and the logit ln(w / (1 - w)) is recorded.
PBO is the fraction of splits with a negative logit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

DEFAULT_CHUNKS = 16


@dataclass
class TrialMatrix:
    values: np.ndarray
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("trial matrix must be 2-D (periods x trials)")
        if self.values.shape[1] < 2:
            raise ValueError("need at least 2 trials")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trial matrix has missing or non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class PBOResult:
    pbo: float
    logits: np.ndarray
    n_splits: int
    s_chunks: int
    n_trials: int
    n_periods: int
    metric: str
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"pbo": self.pbo, "n_splits": self.n_splits, "s_chunks": self.s_chunks,
                "n_trials": self.n_trials, "n_periods": self.n_periods, "metric": self.metric,
                "flags": list(self.flags), "logits": self.logits.tolist()}


def build_trial_matrix(ledgers: Sequence) -> TrialMatrix:
    """Columns are per-period P&L increments of each ledger, truncated to the shortest one."""
    incs = [np.asarray(l.increments if hasattr(l, "increments") else np.diff(l, prepend=0.0), dtype=float)
            for l in ledgers]
    n = min(len(x) for x in incs)
    flags = [] if all(len(x) == n for x in incs) else [f"truncated_to_{n}"]
    return TrialMatrix(np.column_stack([x[:n] for x in incs]), flags)


def _sharpe_from_moments(total, sq, n, flags):
    mean = total / n
    var = (sq - n * mean * mean) / (n - 1)
    # cancellation can leave tiny negative or noise-level variances for constant columns
    tiny = 1e-14 * np.maximum(sq / n, np.finfo(float).tiny)
    zero = var <= tiny
    if np.any(zero):
        flags.add("zero_variance_metric")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(zero, 0.0, mean / np.sqrt(np.where(zero, 1.0, var)))


def sharpe(x: np.ndarray) -> np.ndarray:
    """Column-wise mean / sample stdev; 0 for zero-variance columns."""
    x = np.asarray(x, dtype=float)
    return _sharpe_from_moments(x.sum(axis=0), (x * x).sum(axis=0), x.shape[0], set())


def total_return(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float).sum(axis=0)


METRICS: dict[str, Callable] = {"sharpe": sharpe, "total": total_return}


def split_masks(s_chunks: int) -> np.ndarray:
    """(C(S, S/2), S) boolean matrix of in-sample chunk selections in lexicographic order."""
    half = s_chunks // 2
    combos = np.array(list(combinations(range(s_chunks), half)), dtype=int)
    mask = np.zeros((combos.shape[0], s_chunks), dtype=bool)
    np.put_along_axis(mask, combos, True, axis=1)
    return mask


def cscv_pbo(matrix, s_chunks: int = DEFAULT_CHUNKS, metric: str | Callable = "sharpe") -> PBOResult:
    tm = matrix if isinstance(matrix, TrialMatrix) else TrialMatrix(matrix)
    x = tm.values
    T, N = x.shape
    if s_chunks < 2 or s_chunks % 2:
        raise ValueError("number of chunks must be even and at least 2")
    if s_chunks > T:
        raise ValueError(f"{s_chunks} chunks but only {T} periods")
    flags = set(tm.flags)
    rows = (T // s_chunks) * s_chunks
    if rows < T:
        flags.add(f"dropped_{T - rows}_trailing_rows")
    chunks = x[:rows].reshape(s_chunks, rows // s_chunks, N)
    masks = split_masks(s_chunks)
    half_rows = rows // 2
    if metric == "sharpe":
        # sums and sums of squares per chunk make every split a matrix product
        s1, s2 = chunks.sum(axis=1), (chunks * chunks).sum(axis=1)
        m = masks.astype(float)
        is_perf = _sharpe_from_moments(m @ s1, m @ s2, half_rows, flags)
        oos_perf = _sharpe_from_moments((1 - m) @ s1, (1 - m) @ s2, half_rows, flags)
        name = "sharpe"
    else:
        fn = METRICS[metric] if isinstance(metric, str) else metric
        name = metric if isinstance(metric, str) else getattr(metric, "__name__", "custom")
        is_perf = np.array([fn(chunks[mk].reshape(-1, N)) for mk in masks])
        oos_perf = np.array([fn(chunks[~mk].reshape(-1, N)) for mk in masks])
    best = np.argmax(is_perf, axis=1)
    ranks = rankdata(oos_perf, method="average", axis=1)
    w = ranks[np.arange(masks.shape[0]), best] / (N + 1)
    logits = np.log(w / (1 - w))
    return PBOResult(float(np.mean(logits < 0)), logits, comb(s_chunks, s_chunks // 2), s_chunks, N, rows,
                     name, sorted(flags))
