"""Zero-cost portfolio strategies that emit controls directly: Z-BCRP, Anti-Z-BCRP and Z-Anticor.

Controls returned here cover the m risky assets only.  They are already
self-financing (sum to zero), so the risk-free leg of these experts is 0.
"""
from __future__ import annotations

import numpy as np

RIDGE = 1e-8


def normalize_zero_cost(h) -> np.ndarray:
    """Subtract the mean then scale to unit absolute sum; a degenerate vector maps to zeros."""
    h = np.asarray(h, dtype=float)
    c = h - h.mean()
    s = np.abs(c).sum()
    if not np.isfinite(s) or s <= 1e-14 * max(1.0, np.abs(h).max(initial=0.0)):
        return np.zeros_like(h)
    return c / s


def _active_direction(er: np.ndarray, cov: np.ndarray) -> np.ndarray:
    m = er.size
    cov = cov + RIDGE * max(np.trace(cov) / m, np.finfo(float).tiny) * np.eye(m)
    ones = np.ones(m)
    a = np.linalg.solve(cov, er)
    c = np.linalg.solve(cov, ones)
    # Sigma^{-1} [E[R] - 1 (1' S^-1 E[R]) / (1' S^-1 1)]; sums to zero by construction
    return a - c * (ones @ a) / (ones @ c)


def z_bcrp(window) -> np.ndarray:
    """Zero-cost tangency controls on a window of price relatives (rows = periods)."""
    x = np.asarray(window, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("window needs at least 2 rows of relatives")
    r = x - 1.0
    if x.shape[1] < 2:
        return np.zeros(x.shape[1])
    er = r.mean(axis=0)
    cov = np.cov(r, rowvar=False)
    if np.ptp(er) <= 1e-15 * max(1.0, np.abs(er).max()):
        return np.zeros(x.shape[1])
    d = _active_direction(er, np.atleast_2d(cov))
    s = np.abs(d).sum()
    if not np.isfinite(s) or s <= 0:
        return np.zeros(x.shape[1])
    # gamma absorbs the scale; re-centre to wipe out rounding in the sum
    return normalize_zero_cost(d / s)


def anti_z_bcrp(window) -> np.ndarray:
    """Z-BCRP with the expected-return vector negated, i.e. the exact negation of z_bcrp."""
    return -z_bcrp(window)


def _lagged_correlation(lr1: np.ndarray, lr2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ell = lr1.shape[0]
    mu1, mu2 = lr1.mean(axis=0), lr2.mean(axis=0)
    cov = (lr1 - mu1).T @ (lr2 - mu2) / (ell - 1)
    sd1, sd2 = lr1.std(axis=0, ddof=1), lr2.std(axis=0, ddof=1)
    denom = np.outer(sd1, sd2)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(denom > 0, cov / denom, 0.0)
    return corr, mu2


def anticor_transfers(relatives, ell: int) -> np.ndarray:
    """Matrix T with T[i, j] the amount moved from asset i to asset j (claim/3)."""
    x = np.asarray(relatives, dtype=float)
    if x.shape[0] < 2 * ell or ell < 2:
        raise ValueError(f"need 2*ell = {2 * ell} rows (ell >= 2), got {x.shape[0]}")
    lr = np.log(x[-2 * ell:])
    corr, mu2 = _lagged_correlation(lr[:ell], lr[ell:])
    diag = np.diag(corr)
    claim = corr + np.maximum(-diag, 0.0)[:, None] + np.maximum(-diag, 0.0)[None, :]
    active = (mu2[:, None] > mu2[None, :]) & (corr > 0)
    np.fill_diagonal(active, False)
    return np.where(active, claim, 0.0) / 3.0


def z_anticor(prev, relatives, ell: int) -> np.ndarray:
    """Shift controls from recent winners to losers that they are positively lag-correlated with."""
    prev = np.asarray(prev, dtype=float)
    transfer = anticor_transfers(relatives, ell)
    h = prev + transfer.T.sum(axis=1) - transfer.sum(axis=1)
    return normalize_zero_cost(h)
