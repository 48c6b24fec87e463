"""Min-t test for statistical arbitrage.

Cumulative discounted trading profits v(t) of a zero-cost, self-financing
strategy are differenced into increments dv_i, i = 1..T, which are modelled as

    dv_i = mu * i**theta + sigma * i**lam * z_i,    z_i ~ iid N(0, 1)

(UM, unconstrained mean) or with theta fixed at zero (CM, constrained mean).
The parameters are estimated by maximum likelihood, standard errors come from
the inverse of the observed Fisher information (analytic Hessian), and the
sub-hypothesis t-statistics are combined into the Min-t statistic.  The null
of "no statistical arbitrage" is rejected when Min-t exceeds a critical value
simulated under mu = lam = 0.

Profits are taken as already discounted: the strategies produced by this
package are zero-cost and self-financing with the money-market leg inside the
controls, so the cumulative P&L series is used directly as v(t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

MIN_LENGTH = 10
SIGMA2_FLOOR = 1e-12

CM = "CM"
UM = "UM"


class FitError(RuntimeError):
    """Raised when the likelihood cannot be maximised or the information is singular."""


@dataclass
class ProfitModelFit:
    model: str
    mu: float
    sigma2: float
    lam: float
    theta: float
    se: dict[str, float]
    cov: np.ndarray
    loglik: float
    n_obs: int
    flags: list[str] = field(default_factory=list)

    @property
    def param_names(self) -> tuple[str, ...]:
        return _param_names(self.model)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def estimates(self) -> dict[str, float]:
        values = {"mu": self.mu, "sigma2": self.sigma2, "lam": self.lam, "theta": self.theta}
        return {k: values[k] for k in self.param_names}

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "estimates": self.estimates(),
            "se": dict(self.se),
            "loglik": self.loglik,
            "n_obs": self.n_obs,
            "flags": list(self.flags),
        }


@dataclass
class MinTResult:
    t_stats: dict[str, float]
    min_t: float
    t_c: float
    p_value: float
    alpha: float
    n_sims: int
    seed: int | None = None
    fit: ProfitModelFit | None = None
    loss_curve: np.ndarray | None = None

    @property
    def reject(self) -> bool:
        return self.min_t > self.t_c

    def to_dict(self) -> dict:
        out = {
            "t_stats": dict(self.t_stats),
            "min_t": self.min_t,
            "t_c": self.t_c,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "n_sims": self.n_sims,
            "seed": self.seed,
            "reject_null": self.reject,
        }
        if self.fit is not None:
            out["fit"] = self.fit.to_dict()
        if self.loss_curve is not None:
            out["loss_curve"] = [None if np.isnan(p) else float(p) for p in self.loss_curve]
        return out


@dataclass
class CriticalValue:
    t_c: float
    sample: np.ndarray
    alpha: float
    seed: int | None
    n_resimulated: int = 0


def _param_names(model: str) -> tuple[str, ...]:
    if model == CM:
        return ("mu", "sigma2", "lam")
    if model == UM:
        return ("mu", "sigma2", "lam", "theta")
    raise ValueError(f"unknown profit model {model!r}")


def _as_increments(dv, min_length: int) -> np.ndarray:
    dv = np.asarray(dv, dtype=float).ravel()
    if dv.size < min_length:
        raise ValueError(f"need at least {min_length} increments, got {dv.size}")
    if not np.all(np.isfinite(dv)):
        raise ValueError("increments must be finite")
    if not np.any(dv):
        raise ValueError("increments are identically zero")
    return dv


def log_likelihood(dv, mu: float, sigma2: float, lam: float, theta: float = 0.0) -> float:
    """Gaussian log-likelihood of the increments (additive 2*pi constant dropped)."""
    dv = np.asarray(dv, dtype=float)
    logi = np.log(np.arange(1, dv.size + 1))
    w = np.exp(-2.0 * lam * logi)
    e = dv - mu * np.exp(theta * logi)
    return float(-0.5 * (dv.size * math.log(sigma2) + 2.0 * lam * logi.sum())
                 - 0.5 / sigma2 * np.sum(w * e * e))


def gradient(dv, mu, sigma2, lam, theta=0.0, model: str = CM) -> np.ndarray:
    dv = np.asarray(dv, dtype=float)
    logi = np.log(np.arange(1, dv.size + 1))
    s = sigma2
    w = np.exp(-2.0 * lam * logi)
    u = np.exp(theta * logi)
    e = dv - mu * u
    g = [
        np.sum(w * e * u) / s,
        -dv.size / (2 * s) + np.sum(w * e * e) / (2 * s * s),
        -logi.sum() + np.sum(logi * w * e * e) / s,
    ]
    if model == UM:
        g.append(mu * np.sum(w * e * u * logi) / s)
    return np.array(g)


def hessian(dv, mu, sigma2, lam, theta=0.0, model: str = CM) -> np.ndarray:
    """Analytic Hessian of the log-likelihood in (mu, sigma2, lam[, theta])."""
    dv = np.asarray(dv, dtype=float)
    T = dv.size
    L = np.log(np.arange(1, T + 1))
    s = sigma2
    w = np.exp(-2.0 * lam * L)
    u = np.exp(theta * L)
    e = dv - mu * u
    we2 = w * e * e

    h_mm = -np.sum(w * u * u) / s
    h_ms = -np.sum(w * e * u) / s**2
    h_ml = -2.0 * np.sum(L * w * e * u) / s
    h_ss = T / (2 * s**2) - np.sum(we2) / s**3
    h_sl = -np.sum(L * we2) / s**2
    h_ll = -2.0 * np.sum(L * L * we2) / s
    if model == CM:
        return np.array([
            [h_mm, h_ms, h_ml],
            [h_ms, h_ss, h_sl],
            [h_ml, h_sl, h_ll],
        ])
    r = e - mu * u
    h_mt = np.sum(w * L * u * r) / s
    h_st = -mu * np.sum(w * e * u * L) / s**2
    h_lt = -2.0 * mu * np.sum(L * L * w * e * u) / s
    h_tt = mu * np.sum(w * L * L * u * r) / s
    return np.array([
        [h_mm, h_ms, h_ml, h_mt],
        [h_ms, h_ss, h_sl, h_st],
        [h_ml, h_sl, h_ll, h_lt],
        [h_mt, h_st, h_lt, h_tt],
    ])


def _profile(z: np.ndarray, logi: np.ndarray, lam: float) -> tuple[float, float]:
    # closed-form (mu, sigma2) maximising the CM likelihood for fixed lam
    w = np.exp(-2.0 * lam * logi)
    mu = float(np.sum(w * z) / np.sum(w))
    s = float(np.sum(w * (z - mu) ** 2) / z.size)
    return mu, s


def _moment_start(z: np.ndarray, logi: np.ndarray, model: str) -> np.ndarray:
    # lam from the log-log slope of absolute deviations against the index
    dev = np.abs(z - z.mean())
    keep = dev > 0
    if keep.sum() >= 3:
        lam0 = float(np.polyfit(logi[keep], np.log(dev[keep]), 1)[0])
    else:
        lam0 = 0.0
    lam0 = float(np.clip(lam0, -2.0, 2.0))
    mu0, s0 = _profile(z, logi, lam0)
    x0 = [mu0, math.log(max(s0, SIGMA2_FLOOR)), lam0]
    if model == UM:
        x0.append(0.0)
    return np.array(x0)


def _nm_objective(x: np.ndarray, z: np.ndarray, logi: np.ndarray, sum_logi: float) -> float:
    mu, log_s, lam = x[0], x[1], x[2]
    theta = x[3] if x.size > 3 else 0.0
    if abs(lam) > 50 or abs(theta) > 50 or abs(log_s) > 700:
        return np.inf
    s = math.exp(log_s)
    w = np.exp(-2.0 * lam * logi)
    e = z - mu * np.exp(theta * logi) if x.size > 3 else z - mu
    val = 0.5 * (z.size * log_s + 2.0 * lam * sum_logi) + 0.5 / s * np.dot(w, e * e)
    return float(val) if np.isfinite(val) else np.inf


def _newton_polish(z: np.ndarray, x: np.ndarray, model: str, iters: int = 20) -> np.ndarray:
    """Refine an interior optimum with safeguarded Newton steps in natural parameters."""
    p = x.copy()
    ll = log_likelihood(z, *p)
    for _ in range(iters):
        g = gradient(z, *p, model=model)
        H = hessian(z, *p, model=model)
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        # only accept ascent steps from a negative-definite Hessian
        if not np.all(np.linalg.eigvalsh(H) < 0):
            break
        t = 1.0
        improved = False
        while t > 1e-6:
            cand = p + t * step
            if cand[1] > 0:
                cll = log_likelihood(z, *cand)
                if cll >= ll:
                    p, improved = cand, True
                    ll = cll
                    break
            t *= 0.5
        if not improved or np.max(np.abs(t * step)) < 1e-14 * (1 + np.max(np.abs(p))):
            break
    return p


def fit_profit_model(dv, model: str = CM, min_length: int = MIN_LENGTH,
                     fix_lambda: float | None = None) -> ProfitModelFit:
    """Maximum likelihood fit of the CM or UM profit-increment model.

    The increments are rescaled to unit root-mean-square before optimisation so
    that the fitted t-statistics are exactly invariant to the currency scale.
    Nelder-Mead runs from a moment-based start and from (mean, variance, 0[, 0]);
    the better optimum is refined with Newton steps on the analytic derivatives.
    ``fix_lambda`` pins the variance exponent (CM only), giving the weighted
    Gaussian closed form.
    """
    _param_names(model)
    dv = _as_increments(dv, min_length)
    T = dv.size
    logi = np.log(np.arange(1, T + 1))
    flags: list[str] = []

    scale = float(np.sqrt(np.mean(dv * dv)))
    z = dv / scale

    if np.ptp(dv) == 0.0:
        flags.append("degenerate_constant_increments")
        lam = 0.0 if fix_lambda is None else float(fix_lambda)
        mu_z, s_z = float(z.mean()), SIGMA2_FLOOR / scale**2
        theta = 0.0
        est = np.array([mu_z, s_z, lam] + ([theta] if model == UM else []))
    elif fix_lambda is not None:
        if model != CM:
            raise ValueError("fix_lambda is only supported for the CM model")
        lam = float(fix_lambda)
        mu_z, s_z = _profile(z, logi, lam)
        est = np.array([mu_z, s_z, lam])
    else:
        sum_logi = float(logi.sum())
        starts = [_moment_start(z, logi, model)]
        naive = [float(z.mean()), math.log(max(float(z.var()), SIGMA2_FLOOR)), 0.0]
        if model == UM:
            naive.append(0.0)
        starts.append(np.array(naive))
        best = None
        for x0 in starts:
            res = minimize(_nm_objective, x0, args=(z, logi, sum_logi), method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 20000,
                                    "maxfev": 40000, "adaptive": model == UM})
            if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                best = res
        if best is None:
            raise FitError("likelihood optimisation failed from every start")
        if not best.success:
            flags.append("nelder_mead_not_converged")
        x = best.x
        est = np.array([x[0], math.exp(x[1]), x[2]] + ([x[3]] if model == UM else []))
        est = _newton_polish(z, est, model)

    mu = float(est[0]) * scale
    sigma2 = float(est[1]) * scale**2
    lam = float(est[2])
    theta = float(est[3]) if model == UM else 0.0
    if sigma2 < SIGMA2_FLOOR:
        sigma2 = SIGMA2_FLOOR
        if "degenerate_constant_increments" not in flags:
            flags.append("sigma2_floored")

    names = _param_names(model)
    if fix_lambda is not None and model == CM:
        H = hessian(dv, mu, sigma2, lam)[:2, :2]
        free = ("mu", "sigma2")
    else:
        H = hessian(dv, mu, sigma2, lam, theta, model=model)
        free = names
    info = -H
    try:
        eig = np.linalg.eigvalsh(info)
        if np.min(eig) <= 0:
            raise np.linalg.LinAlgError
        cov_free = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        flags.append("information_not_positive_definite")
        cov_free = np.full(info.shape, np.nan)
    cov = np.full((len(names), len(names)), np.nan)
    idx = [names.index(n) for n in free]
    cov[np.ix_(idx, idx)] = cov_free
    if fix_lambda is not None:
        cov[names.index("lam"), :] = 0.0
        cov[:, names.index("lam")] = 0.0
    se = {n: float(math.sqrt(cov[i, i])) if cov[i, i] >= 0 else float("nan")
          for i, n in enumerate(names)}

    return ProfitModelFit(
        model=model, mu=mu, sigma2=sigma2, lam=lam, theta=theta, se=se, cov=cov,
        loglik=log_likelihood(dv, mu, sigma2, lam, theta), n_obs=T, flags=flags,
    )


def _t(fit: ProfitModelFit, coef: dict[str, float], const: float = 0.0) -> float:
    names = fit.param_names
    c = np.array([coef.get(n, 0.0) for n in names])
    est = np.array([fit.estimates()[n] for n in names])
    var = float(c @ fit.cov @ c)
    if not np.isfinite(var) or var <= 0:
        raise FitError("singular information matrix; t-statistic undefined")
    return float((c @ est + const) / math.sqrt(var))


def min_t(fit: ProfitModelFit) -> tuple[dict[str, float], float]:
    """Sub-hypothesis t-statistics and the Min-t statistic for a fitted model.

    CM uses min{t(mu), t(-lam)}.  UM uses
    min{t(mu), t(theta-lam), t(theta-lam+0.5), max[t(-lam), t(theta+1)]}
    with the full estimated covariance for the linear combinations.
    """
    stats = {
        "t_mu": _t(fit, {"mu": 1.0}),
        "t_neg_lam": _t(fit, {"lam": -1.0}),
    }
    if fit.model == CM:
        return stats, min(stats["t_mu"], stats["t_neg_lam"])
    stats["t_theta_minus_lam"] = _t(fit, {"theta": 1.0, "lam": -1.0})
    stats["t_theta_minus_lam_plus_half"] = _t(fit, {"theta": 1.0, "lam": -1.0}, 0.5)
    stats["t_theta_plus_one"] = _t(fit, {"theta": 1.0}, 1.0)
    value = min(
        stats["t_mu"],
        stats["t_theta_minus_lam"],
        stats["t_theta_minus_lam_plus_half"],
        max(stats["t_neg_lam"], stats["t_theta_plus_one"]),
    )
    return stats, value


def simulate_increments(T: int, mu: float, lam: float, sigma2: float, rng: np.random.Generator,
                        theta: float = 0.0) -> np.ndarray:
    i = np.arange(1, T + 1, dtype=float)
    return mu * i**theta + math.sqrt(sigma2) * i**lam * rng.standard_normal(T)


def simulate_min_t(T: int, n_sims: int, params=(0.0, 0.0, 0.01), model: str = CM,
                   seed: int | None = 0) -> tuple[np.ndarray, int]:
    """Min-t values of ``n_sims`` paths simulated under (mu, lam, sigma2).

    Each path draws from its own child stream of ``seed`` so the sample is
    independent of evaluation order; a path whose fit fails is redrawn from the
    same stream.  Returns the sample and the number of redraws.
    """
    mu, lam, sigma2 = params
    children = np.random.SeedSequence(seed).spawn(n_sims)
    out = np.empty(n_sims)
    redraws = 0
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        for _attempt in range(100):
            dv = simulate_increments(T, mu, lam, sigma2, rng)
            try:
                out[k] = min_t(fit_profit_model(dv, model))[1]
                break
            except (FitError, ValueError):
                redraws += 1
        else:
            raise FitError(f"simulation {k} failed 100 consecutive fits")
    return out, redraws


def critical_value(T: int = 400, alpha: float = 0.05, n_sims: int = 5000,
                   params=(0.0, 0.0, 0.01), model: str = CM,
                   seed: int | None = 0) -> CriticalValue:
    """Monte Carlo (1 - alpha) quantile of Min-t under the no-arbitrage boundary."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    sample, redraws = simulate_min_t(T, n_sims, params, model, seed)
    t_c = float(np.quantile(sample, 1.0 - alpha))
    return CriticalValue(t_c=t_c, sample=sample, alpha=alpha, seed=seed, n_resimulated=redraws)


def p_value(observed: float, sample) -> float:
    """Fraction of simulated Min-t values at least as large as ``observed``."""
    sample = np.asarray(sample, dtype=float)
    if sample.size == 0:
        raise ValueError("simulated sample is empty")
    return float(np.mean(sample >= observed))


def probability_of_loss(n: int, mu: float, sigma2: float, lam: float,
                        theta: float = 0.0, phi: float = 0.0) -> float:
    """P(cumulative discounted profit after n periods < 0)."""
    i = np.arange(1, n + 1, dtype=float)
    num = -mu * np.sum(i**theta)
    den = math.sqrt(sigma2) * (1.0 + phi) * math.sqrt(np.sum(i ** (2.0 * lam)))
    return float(norm.cdf(num / den))


def probability_of_loss_curve(dv, n_max: int | None = None, model: str = CM,
                              min_length: int = MIN_LENGTH) -> np.ndarray:
    """Loss probability after n periods, re-estimating on dv[:n] for each n.

    Entry n-1 holds the value for horizon n; prefixes shorter than
    ``min_length`` (or whose fit fails) are NaN.
    """
    dv = np.asarray(dv, dtype=float).ravel()
    n_max = dv.size if n_max is None else n_max
    if n_max > dv.size:
        raise ValueError("n_max exceeds the number of increments")
    curve = np.full(n_max, np.nan)
    for n in range(min_length, n_max + 1):
        try:
            fit = fit_profit_model(dv[:n], model, min_length=min_length)
        except (FitError, ValueError):
            continue
        curve[n - 1] = probability_of_loss(n, fit.mu, fit.sigma2, fit.lam, fit.theta)
    return curve


def statarb_test(dv, alpha: float = 0.05, n_sims: int = 5000, model: str = CM,
                 seed: int | None = 0, sim_params=(0.0, 0.0, 0.01),
                 loss_horizon: int | None = None,
                 critical: CriticalValue | None = None) -> tuple[MinTResult, CriticalValue]:
    """Run the full test on an increment series: fit, Min-t, critical value, p-value.

    A precomputed ``critical`` distribution (same length and alpha) may be
    supplied to avoid re-simulating.
    """
    dv = np.asarray(dv, dtype=float).ravel()
    fit = fit_profit_model(dv, model)
    stats, value = min_t(fit)
    if critical is None:
        critical = critical_value(dv.size, alpha, n_sims, sim_params, model, seed)
    curve = None
    if loss_horizon:
        curve = probability_of_loss_curve(dv, min(loss_horizon, dv.size), model)
    result = MinTResult(
        t_stats=stats, min_t=value, t_c=critical.t_c, p_value=p_value(value, critical.sample),
        alpha=critical.alpha, n_sims=critical.sample.size, seed=critical.seed, fit=fit,
        loss_curve=curve,
    )
    return result, critical
