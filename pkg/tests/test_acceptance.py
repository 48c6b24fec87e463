"""Acceptance criteria 1-10.  Each test records one PASS/FAIL line (see conftest)."""
from __future__ import annotations

import time

import numpy as np
import pytest

import oracles
from techarb import costs as co
from techarb import experts as ex
from techarb import learner as le
from techarb import pbo as pb
from techarb import statarb as sa
from techarb import synthetic as syn
from techarb.market_data import Panel, Universe

pytestmark = pytest.mark.slow

NULL_PARAMS = (0.0, 0.0, 0.01)  # (mu, lambda, sigma^2)
ARB = dict(mu=0.002, sigma2=0.01**2, lam=-0.2)


@pytest.fixture(scope="module")
def critical():
    t0 = time.perf_counter()
    cv = sa.critical_value(T=400, alpha=0.05, n_sims=5000, params=NULL_PARAMS, model=sa.CM, seed=0)
    return cv, time.perf_counter() - t0


def test_1_critical_value(critical, criterion):
    cv, elapsed = critical
    ok = 0.65 <= cv.t_c <= 0.80 and elapsed <= 600
    criterion("1. critical value", ok,
              f"t_c = {cv.t_c:.4f} (band [0.65, 0.80]), {elapsed:.0f}s for 5000 paths, "
              f"{cv.n_resimulated} redraws")


def _fd_hessian(dv, p):
    """Central-difference Hessian of the CM log-likelihood in (mu, sigma2, lam)."""
    def f(q):
        return sa.log_likelihood(dv, q[0], q[1], q[2])
    p = np.asarray(p, dtype=float)
    h = 1e-3 * np.abs(p) + 1e-12
    H = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            ei, ej = np.zeros(3), np.zeros(3)
            ei[i], ej[j] = h[i], h[j]
            H[i, j] = (f(p + ei + ej) - f(p + ei - ej) - f(p - ei + ej) + f(p - ei - ej)) / (4 * h[i] * h[j])
    return H


def test_2_mle_recovery(criterion):
    true = {"mu": 5e-4, "sigma2": 1e-4, "lam": -0.1}
    hits = {k: 0 for k in true}
    n_paths = 200
    worst_hess = 0.0
    for k, child in enumerate(np.random.SeedSequence(2).spawn(n_paths)):
        rng = np.random.default_rng(child)
        dv = sa.simulate_increments(2000, true["mu"], true["lam"], true["sigma2"], rng)
        fit = sa.fit_profit_model(dv, sa.CM)
        for name, value in true.items():
            if abs(fit.estimates()[name] - value) <= 3 * fit.se[name]:
                hits[name] += 1
        if k < 10:
            p = (fit.mu, fit.sigma2, fit.lam)
            A = sa.hessian(dv, *p, model=sa.CM)
            F = _fd_hessian(dv, p)
            # entrywise error relative to sqrt(|F_ii F_jj|), the scale-free size of entry (i, j)
            scale = np.sqrt(np.outer(np.abs(np.diag(F)), np.abs(np.diag(F))))
            worst_hess = max(worst_hess, float(np.max(np.abs(A - F) / scale)))
    cover = {k: v / n_paths for k, v in hits.items()}
    ok = all(c >= 0.95 for c in cover.values()) and worst_hess <= 1e-4
    criterion("2. MLE recovery", ok,
              "coverage within 3 se: " + ", ".join(f"{k} {v:.3f}" for k, v in cover.items())
              + f" (need >= 0.95); Hessian max rel. error {worst_hess:.2e} (need <= 1e-4)")


def _rejection_rate(params, n_trials, t_c, seed):
    mu, lam, sigma2 = params
    rejections = 0
    for child in np.random.SeedSequence(seed).spawn(n_trials):
        dv = sa.simulate_increments(400, mu, lam, sigma2, np.random.default_rng(child))
        rejections += sa.min_t(sa.fit_profit_model(dv, sa.CM))[1] > t_c
    return rejections / n_trials


def test_3_size_and_power(critical, criterion):
    cv, _ = critical
    size = _rejection_rate(NULL_PARAMS, 1000, cv.t_c, seed=3)
    power = _rejection_rate((ARB["mu"], ARB["lam"], ARB["sigma2"]), 1000, cv.t_c, seed=4)
    ok = size <= 0.07 and power >= 0.90
    criterion("3. test size and power", ok,
              f"null rejection {size:.3f} (need <= 0.07); arbitrage rejection {power:.3f} (need >= 0.90)")


def test_4_probability_of_loss(criterion):
    exact = all(sa.probability_of_loss(n, 0.0, s2, lam) == 0.5
                for n in (1, 10, 400) for s2 in (1e-6, 0.01, 3.0) for lam in (-0.5, 0.0, 0.3))
    worst = 0.0
    for child in np.random.SeedSequence(5).spawn(5):
        dv = sa.simulate_increments(400, ARB["mu"], ARB["lam"], ARB["sigma2"], np.random.default_rng(child))
        curve = sa.probability_of_loss_curve(dv, 400)
        truth = np.array([sa.probability_of_loss(n, ARB["mu"], ARB["sigma2"], ARB["lam"]) for n in range(1, 401)])
        worst = max(worst, float(np.max(np.abs(curve[99:] - truth[99:]))))
    ok = exact and worst <= 0.05
    criterion("4. probability of loss", ok,
              f"mu=0 gives exactly 0.5: {exact}; max |fitted - true| for n >= 100 over 5 paths {worst:.2e} "
              f"(need <= 0.05)")


def test_5_portfolio_constraints(criterion):
    panel = syn.random_panel(500, 10, seed=5)
    universe = syn.sector_universe(panel.tickers)
    specs = ex.enumerate_experts(universe)
    res = le.run_daily_backtest(panel, universe, specs, keep_controls=True)
    b = res.ledger.b
    net, lev = np.abs(b.sum(axis=1)).max(), np.abs(b).sum(axis=1).max()
    H = res.H
    s, z = np.abs(H).sum(axis=2), np.abs(H.sum(axis=2))
    zero = s == 0
    unit = (np.abs(s - 1) < 1e-10) & (z < 1e-10)
    experts_ok = bool(np.all(zero | unit))
    ok = net < 1e-10 and lev <= 1 + 1e-10 and experts_ok and len(specs) == 520
    criterion("5. portfolio constraints", ok,
              f"Omega={len(specs)}, T=500: max|sum b| {net:.1e}, max sum|b| {lev:.6f}, "
              f"expert controls zero or zero-cost/unit-leverage: {experts_ok} "
              f"({np.mean(unit):.1%} of expert-periods active)")


def _replay_case(seed):
    rng = np.random.default_rng(seed)
    T, m = 20, 3
    t = np.arange(T)[:, None]
    closes = 100 * np.exp(0.03 * np.sin(t / 2.0 + np.arange(m)) + 0.01 * np.cumsum(rng.normal(size=(T, m)), axis=0))
    rf = np.full(T, 1.0002)
    panel = Panel.from_closes(closes, ["A", "B", "C"], rf_relative=rf)
    universe = Universe(["A", "B", "C"], {"pair": ["A", "C"]})
    specs = [ex.ExpertSpec("ma_crossover", "trivial", 2, 5), ex.ExpertSpec("rsi", "pair", 3),
             ex.ExpertSpec("z_bcrp", "trivial", 4)]
    ledger = le.run_daily_backtest(panel, universe, specs).ledger
    C = closes.tolist()
    H = [oracles.expert_controls("ma_crossover", 2, 5, C, [0, 1, 2]),
         oracles.expert_controls("rsi", 3, None, C, [0, 2]),
         oracles.z_bcrp_controls(C, [0, 1, 2], 4)]
    X = [[1.0] * (m + 1)] + [[C[k][i] / C[k - 1][i] for i in range(m)] + [rf[k]] for k in range(1, T)]
    S, PL, B, _ = oracles.replay(H, X)
    err = max(np.max(np.abs(ledger.S - S)), np.max(np.abs(ledger.PL - PL)), np.max(np.abs(ledger.b - B)))
    return err, float(np.abs(ledger.b).sum()), float(ledger.S[-1])


def test_6_replay_oracle(criterion):
    results = [_replay_case(seed) for seed in range(5)]
    err = max(r[0] for r in results)
    nontrivial = all(r[1] > 0 and r[2] != 1.0 for r in results)
    criterion("6. replay oracle", err <= 1e-10 and nontrivial,
              f"Omega=3, m=3, T=20, 5 scenarios: max |ledger - replay| {err:.1e} (need <= 1e-10); "
              f"portfolio traded in every scenario: {nontrivial}")


def test_7_bcrp(criterion):
    # cash, an asset alternating 1.1 / 0.9, and a random-walk stock
    rng = np.random.default_rng(7)
    T = 250
    x = np.column_stack([
        np.ones(T),
        np.where(np.arange(T) % 2 == 0, 1.1, 0.9),
        np.exp(rng.normal(0.0005, 0.02, T)),
    ])
    res = le.bcrp_benchmark(x, n_samples=5000, seed=0)
    grid_wealth, grid_w = oracles.bcrp_grid(x, 0.001)
    rel = res.wealth / grid_wealth - 1
    # informational: a high-curvature history (anti-phase alternating assets) where the
    # 5000-sample gap is close to 1%, and the same history with 10x the samples
    y = np.column_stack([
        np.ones(T),
        np.where(np.arange(T) % 2 == 0, 1.2, 0.85),
        np.where(np.arange(T) % 2 == 0, 0.88, 1.18) * np.exp(rng.normal(0.0, 0.01, T)),
    ])
    stress_grid, _ = oracles.bcrp_grid(y, 0.001)
    stress = [le.bcrp_benchmark(y, n, seed=0).wealth / stress_grid - 1 for n in (5000, 50000)]
    criterion("7. BCRP benchmark", abs(rel) <= 0.01,
              f"Monte Carlo {res.wealth:.6f} vs grid {grid_wealth:.6f} (rel {rel:+.2e}, need |.| <= 1e-2), "
              f"grid weights {np.round(grid_w, 3).tolist()}; stress history (grid wealth {stress_grid:.0f}): "
              f"rel {stress[0]:+.2e} at 5000 samples, {stress[1]:+.2e} at 50000")


def _fused_scenario(gap_shift=1.0):
    days, daily = syn.random_intraday(days=12, m=3, seed=8, sigma_bar=0.003, rf_rate=2e-4)
    rng = np.random.default_rng(80)
    # official close differs from the last 5-minute close
    daily.close[:] = np.array([d.close[-1] for d in days]) * np.exp(rng.normal(0, 0.002, daily.close.shape))
    daily.high[:] = np.maximum(daily.high, daily.close)
    daily.low[:] = np.minimum(daily.low, daily.close)
    if gap_shift != 1.0:
        # move day 6 (and everything after its open) by a common factor: an overnight gap
        for d in days[6:]:
            for k in ("open", "high", "low", "close"):
                getattr(d, k)[:] *= gap_shift
        for k in ("open", "high", "low", "close"):
            getattr(daily, k)[6:] *= gap_shift
    return days, daily


def _fused_replay(days, daily, rules, universe_members):
    m = daily.n_assets
    width = m + 1
    Cd = daily.close.tolist()
    Hd = [oracles.expert_controls(r, n1, n2, Cd, universe_members) for r, n1, n2 in rules]
    Xd = [[1.0] * width] + [[Cd[k][i] / Cd[k - 1][i] for i in range(m)] + [daily.rf_relative[k]]
                            for k in range(1, len(Cd))]
    wealth, b_daily_prev, out = 1.0, [0.0] * width, []
    for t, day in enumerate(days):
        C = day.close.tolist()
        HI = [oracles.expert_controls(r, n1, n2, C, universe_members) for r, n1, n2 in rules]
        XI = [[1.0] * width] + [[C[k][i] / C[k - 1][i] for i in range(m)] + [day.rf_relative[k]]
                                for k in range(1, len(C))]
        S_I, _, B_I, SH = oracles.replay(HI, XI)
        x_close = [Cd[t][i] / C[-1][i] for i in range(m)] + [1.0]
        closeout = sum(B_I[-1][j] * (x_close[j] - 1) for j in range(width)) + 1
        sh = []
        for n in range(len(rules)):
            v = SH[-1][n] * (sum(HI[n][-1][j] * (x_close[j] - 1) for j in range(width)) + 1)
            if t > 0:
                v *= sum(Hd[n][t - 1][j] * (Xd[t][j] - 1) for j in range(width)) + 1
            sh.append(v)
        mean = sum(sh) / len(sh)
        tot = sum(abs(v - mean) for v in sh)
        q = [(v - mean) / tot for v in sh] if tot > 1e-14 * max(sh) else [0.0] * len(sh)
        b_daily = [sum(q[n] * Hd[n][t][j] for n in range(len(rules))) for j in range(width)]
        lev = sum(abs(v) for v in b_daily)
        if lev > 1 + 1e-12:
            b_daily = [v / lev for v in b_daily]
        daily_leg = sum(b_daily_prev[j] * (Xd[t][j] - 1) for j in range(width)) + 1 if t > 0 else 1.0
        wealth *= S_I[-1] * closeout * daily_leg
        out.append(wealth)
        b_daily_prev = b_daily
    return np.array(out)


def test_8_intraday_closeout(criterion):
    rules = [("ma_crossover", 3, 6), ("rsi", 4, None), ("momentum", 4, None)]
    specs = [ex.ExpertSpec(r, "trivial", n1, n2) for r, n1, n2 in rules]
    days, daily = _fused_scenario()
    universe = Universe(daily.tickers)
    ledger, info = le.run_intraday_daily_backtest(days, daily, universe, specs)
    hand = _fused_replay(days, daily, rules, list(range(daily.n_assets)))
    err = float(np.max(np.abs(ledger.S - hand)))
    # no intraday position is open at any day's first bar, and the close-out is applied every day
    flat_open = all(np.all(d.b_intraday[0] == 0) for d in info)
    closeouts = [d.closeout_increment for d in info]
    traded = any(np.abs(d.b_intraday[-1]).sum() > 0 and d.closeout_increment != 1.0 for d in info)
    daily_leg = any(d.daily_increment != 1.0 for d in info)
    # an overnight gap changes only the daily leg
    days_g, daily_g = _fused_scenario(gap_shift=1.05)
    _, info_g = le.run_intraday_daily_backtest(days_g, daily_g, universe, specs)
    intraday_same = all(np.allclose(a.intraday_gross, b.intraday_gross, rtol=0, atol=1e-12)
                        for a, b in zip(info, info_g))
    daily_moved = any(abs(a.daily_increment - b.daily_increment) > 1e-6 for a, b in zip(info, info_g))
    ok = err <= 1e-10 and flat_open and traded and daily_leg and intraday_same and daily_moved
    criterion("8. intraday close-out", ok,
              f"12 days x 88 bars: max |S - hand replay| {err:.1e} (need <= 1e-10); flat at every open: "
              f"{flat_open}; close-out moved wealth: {traded} (min/max {min(closeouts):.5f}/{max(closeouts):.5f}); "
              f"daily leg active: {daily_leg}; gap leaves intraday legs unchanged: {intraday_same}, "
              f"moves daily leg: {daily_moved}")


def test_9_pbo(criterion):
    vals = []
    for child in np.random.SeedSequence(9).spawn(200):
        x = np.random.default_rng(child).normal(size=(160, 20))
        vals.append(pb.cscv_pbo(x, 16).pbo)
    mean = float(np.mean(vals))
    rng = np.random.default_rng(90)
    dom = rng.normal(size=(160, 20))
    dom[:, 7] += 5.0
    dominant = pb.cscv_pbo(dom, 16).pbo
    ok = 0.40 <= mean <= 0.60 and dominant < 0.05
    criterion("9. PBO sanity", ok,
              f"noise N=20, S=16, 200 seeds: mean PBO {mean:.3f} (band [0.40, 0.60]); "
              f"dominant column PBO {dominant:.3f} (need < 0.05)")


def test_10_costs(criterion):
    cfg = co.CostConfig.daily()
    rng = np.random.default_rng(10)
    mono = True
    for _ in range(2000):
        M = int(rng.integers(0, 20))
        sigma, n, adv = rng.uniform(0, 0.1), rng.uniform(0, 1e5), rng.uniform(1, 1e7)
        base = co.transaction_cost(M, sigma, n, adv, cfg)
        mono &= co.transaction_cost(M + 1, sigma, n, adv, cfg) >= base
        mono &= co.transaction_cost(M, sigma * 1.1, n, adv, cfg) >= base
        mono &= co.transaction_cost(M, sigma, n * 1.1, adv, cfg) >= base
        mono &= co.transaction_cost(M, sigma, n, adv * 1.1, cfg) <= base
    panel = syn.random_panel(500, 15, seed=10)
    universe = syn.sector_universe(panel.tickers)
    res = le.run_daily_backtest(panel, universe, ex.enumerate_experts(universe),
                                cost_fn=co.DailyCosts(panel.close, panel.volume, cfg))
    mean_bp = 1e4 * float(res.ledger.cost[1:].mean())
    ok = bool(mono) and 10 <= mean_bp <= 30
    criterion("10. cost model", ok,
              f"monotone in (M, n, sigma, 1/ADV) over 2000 random points: {bool(mono)}; mean daily cost "
              f"{mean_bp:.2f} bp on a 15-stock, 500-day random walk (band [10, 30])")
