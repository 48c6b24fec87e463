"""Command-line entry point: ``techarb {backtest,statarb,pbo,bench-bcrp}``.

Exit codes: 0 success, 1 computation error, 2 input error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import costs as co
from . import experts as ex
from . import learner as le
from . import market_data as md
from . import pbo as pb
from . import reports as rp
from . import statarb as sa
from . import synthetic as syn

log = logging.getLogger("techarb")

EXIT_OK, EXIT_COMPUTE, EXIT_INPUT = 0, 1, 2

DEFAULT_CONFIG = {
    "mode": "daily",
    "seed": 0,
    "out": "techarb-out",
    "data": {"ohlcv": None, "intraday": None, "daily": None, "risk_free": None, "clusters": None},
    "synthetic": None,  # e.g. {"periods": 500, "assets": 10} replaces the data section
    "universe": {"m": 15, "liquidity_window": None, "min_coverage": 0.6},
    "experts": {"rules": list(ex.ALL_STRATEGIES), "n1": list(ex.DEFAULT_N1), "n2": list(ex.DEFAULT_N2),
                "clusters": None, "vol_window": ex.VOL_WINDOW, "loading": ex.VOLATILITY},
    "costs": {"enabled": True, "daily": {}, "intraday": {}},
    "test": {"model": sa.CM, "alpha": 0.05, "n_sims": 5000, "start": 30, "length": 400,
             "loss_horizon": None, "sim_params": [0.0, 0.0, 0.01]},
    "pbo": {"t_bl": 60, "s_chunks": pb.DEFAULT_CHUNKS, "metric": "sharpe"},
    "bcrp": {"enabled": False, "n_samples": 5000},
    "write_expert_wealth": False,
}

LIQUIDITY_DEFAULT = {"daily": 250, "intraday": 4}


class InputError(Exception):
    """Bad configuration or input files (exit code 2)."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG), Path.cwd()
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    text = p.read_text()
    try:
        if p.suffix.lower() == ".json":
            user = json.loads(text)
        else:
            import yaml
            user = yaml.safe_load(text) or {}
    except Exception as exc:  # parse errors from either format
        raise InputError(f"cannot parse config {p}: {exc}") from None
    if not isinstance(user, dict):
        raise InputError(f"config {p} must be a mapping")
    return _merge(DEFAULT_CONFIG, user), p.parent


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class Run:
    cfg: dict
    base: Path
    out: Path
    command: str
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    @contextmanager
    def timed(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def path(self, key: str) -> Path | None:
        v = self.cfg["data"].get(key)
        if v is None:
            return None
        p = Path(v)
        p = p if p.is_absolute() else self.base / p
        if not p.exists():
            raise InputError(f"{key} file not found: {p}")
        return p

    def emit(self, p: Path):
        self.outputs.append(str(p))

    def manifest(self, extra: dict | None = None) -> Path:
        data = {
            "command": self.command,
            "version": __version__,
            "config_hash": config_hash(self.cfg),
            "seed": self.cfg["seed"],
            "config": self.cfg,
            "timings_seconds": self.timings,
            "outputs": self.outputs,
        }
        data.update(extra or {})
        p = rp.write_json(self.out / f"manifest_{self.command}.json", data)
        return p


# ---------------------------------------------------------------------------
# Data assembly
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    mode: str
    universe: md.Universe
    daily: md.Panel
    intraday: list[md.Panel] | None = None


def _clusters(run: Run, tickers: list[str]) -> md.Universe:
    path = run.path("clusters")
    if path is None:
        return md.Universe(tickers)
    try:
        return md.load_clusters(path, tickers)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _synthetic(run: Run) -> Dataset:
    s = run.cfg["synthetic"]
    seed = int(s.get("seed", run.cfg["seed"]))
    m = int(s.get("assets", 10))
    if run.cfg["mode"] == "daily":
        panel = syn.random_panel(int(s.get("periods", 500)), m, seed, sigma=float(s.get("sigma", 0.02)),
                                 rf_rate=float(s.get("rf_rate", 0.0)))
        return Dataset("daily", syn.sector_universe(panel.tickers), panel)
    days, daily = syn.random_intraday(int(s.get("days", 10)), m, seed, rf_rate=float(s.get("rf_rate", 0.0)))
    return Dataset("intraday", syn.sector_universe(daily.tickers), daily, days)


def _select(series: dict[str, md.BarSeries], m: int, window: int) -> list[str]:
    vols = {t: s.volume[:window] for t, s in series.items()}
    return md.adv_rank(vols, window, min(m, len(vols)))


def _rf_for(run: Run, days: np.ndarray) -> np.ndarray:
    path = run.path("risk_free")
    if path is None:
        return np.ones(days.size)
    return md.load_risk_free(path).aligned(days).relatives()


def load_dataset(run: Run) -> Dataset:
    cfg = run.cfg
    mode = cfg["mode"]
    if mode not in ("daily", "intraday"):
        raise InputError(f"unknown mode {mode!r}")
    if cfg.get("synthetic"):
        return _synthetic(run)
    ucfg = cfg["universe"]
    window = ucfg.get("liquidity_window") or LIQUIDITY_DEFAULT[mode]
    if mode == "daily":
        path = run.path("ohlcv")
        if path is None:
            raise InputError("data.ohlcv is required in daily mode")
        series = md.load_ohlcv(path, md.DAILY, ucfg["min_coverage"])
        n = len(next(iter(series.values())))
        if n < window + 2:
            raise InputError(f"{n} periods cannot cover a {window}-period liquidity window plus trading")
        tickers = _select(series, ucfg["m"], window)
        panel = md.Panel.from_series(series, tickers).slice(window, n)
        days = panel.timestamps.astype("datetime64[D]")
        panel.rf_relative = _rf_for(run, days)
        return Dataset(mode, _clusters(run, tickers), panel)
    path = run.path("intraday")
    if path is None:
        raise InputError("data.intraday is required in intraday mode")
    series = md.load_ohlcv(path, md.INTRADAY, ucfg["min_coverage"])
    per_day = {t: md.split_days(s) for t, s in series.items()}
    n_days = len(next(iter(per_day.values())))
    if n_days < window + 1:
        raise InputError(f"{n_days} days cannot cover a {window}-day liquidity window plus trading")
    day_volume = {t: np.array([d.volume.sum() for d in v]) for t, v in per_day.items()}
    tickers = md.adv_rank({t: v[:window] for t, v in day_volume.items()}, window, min(ucfg["m"], len(day_volume)))
    dpath = run.path("daily")
    if dpath is not None:
        dseries = md.load_ohlcv(dpath, md.DAILY, ucfg["min_coverage"])
        missing = set(tickers) - set(dseries)
        if missing:
            raise InputError(f"daily file lacks {sorted(missing)}")
    else:
        dseries = {t: md.daily_from_intraday(series[t]) for t in tickers}
    daily = md.Panel.from_series(dseries, tickers)
    if daily.n_periods != n_days:
        raise InputError(f"daily file has {daily.n_periods} days, intraday has {n_days}")
    days = daily.timestamps.astype("datetime64[D]")
    rf = _rf_for(run, days)
    daily.rf_relative = rf
    intraday = []
    for k in range(n_days):
        p = md.Panel.from_series({t: per_day[t][k] for t in tickers}, tickers)
        p.rf_relative = np.full(p.n_periods, 1.0 + (rf[k] - 1.0) / md.BARS_PER_DAY)
        intraday.append(p)
    return Dataset(mode, _clusters(run, tickers), daily.slice(window, n_days), intraday[window:])


def _specs(run: Run, universe: md.Universe) -> list[ex.ExpertSpec]:
    e = run.cfg["experts"]
    clusters = e.get("clusters")
    if clusters:
        clusters = [c for c in clusters if c in universe.clusters]
    try:
        return ex.enumerate_experts(universe, e["rules"], e["n1"], e["n2"], clusters)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def backtest_dataset(run: Run, data: Dataset, costs_on: bool):
    specs = _specs(run, data.universe)
    e = run.cfg["experts"]
    ccfg = run.cfg["costs"]
    if data.mode == "daily":
        cost_fn = co.DailyCosts(data.daily.close, data.daily.volume, co.CostConfig.daily(**ccfg["daily"])) \
            if costs_on else None
        res = le.run_daily_backtest(data.daily, data.universe, specs, cost_fn, e["vol_window"], e["loading"])
        return res.ledger, specs, res.expert_wealth
    icost = dcost = None
    if costs_on:
        icost = co.IntradayCosts([d.close for d in data.intraday], [d.volume for d in data.intraday],
                                 co.CostConfig.intraday(**ccfg["intraday"]))
        dcost = co.DailyCosts(data.daily.close, data.daily.volume, co.CostConfig.daily(**ccfg["daily"]))
    ledger, days = le.run_intraday_daily_backtest(data.intraday, data.daily, data.universe, specs, icost, dcost,
                                                  vol_window=e["vol_window"], mode=e["loading"])
    return ledger, specs, None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_backtest(run: Run, args) -> int:
    with run.timed("market_data"):
        data = load_dataset(run)
    costs_on = bool(run.cfg["costs"]["enabled"])
    with run.timed("learner"):
        ledger, specs, wealth = backtest_dataset(run, data, costs_on)
    bench = None
    if run.cfg["bcrp"]["enabled"] or getattr(args, "bcrp", False):
        with run.timed("bcrp"):
            x = data.daily.relatives()[1:, :-1]
            res = le.bcrp_benchmark(x, int(run.cfg["bcrp"]["n_samples"]), run.cfg["seed"])
            bench = le.crp_path(res.weights, x)
            run.emit(rp.write_json(run.out / "bcrp.json", {"weights": res.weights, "wealth": res.wealth,
                                                           "seed": res.seed, "n_samples": res.n_samples}))
    with run.timed("reports"):
        run.emit(rp.write_ledger(run.out / "ledger.csv", ledger, bench))
        if wealth is not None:
            run.emit(rp.write_summary(run.out / "strategy_summary.csv", rp.strategy_summary(specs, wealth)))
            if run.cfg["write_expert_wealth"]:
                run.emit(rp.write_expert_wealth(run.out / "expert_wealth.csv", specs, wealth))
    run.manifest({"n_experts": len(specs), "n_periods": len(ledger), "tickers": data.universe.tickers,
                  "costs": costs_on, "terminal_S": float(ledger.S[-1])})
    print(f"backtest: {len(specs)} experts, {len(ledger)} periods, S_T = {ledger.S[-1]:.6f} -> {run.out}")
    return EXIT_OK


def cmd_statarb(run: Run, args) -> int:
    if not args.ledger:
        raise InputError("statarb needs --ledger <ledger.csv>")
    with run.timed("market_data"):
        try:
            led = rp.read_ledger(args.ledger)
        except FileNotFoundError as exc:
            raise InputError(str(exc)) from None
    t = run.cfg["test"]
    start, length = int(t["start"]), int(t["length"])
    pl = led["PL"]
    if start < 1 or start + length > pl.size:
        raise InputError(f"ledger has {pl.size} rows; window [{start}, {start + length}) does not fit")
    dv = pl[start:start + length] - pl[start - 1:start + length - 1]
    with run.timed("statarb"):
        result, crit = sa.statarb_test(dv, float(t["alpha"]), int(t["n_sims"]), t["model"], run.cfg["seed"],
                                       tuple(t["sim_params"]), t.get("loss_horizon") or length)
    out = result.to_dict()
    out.update({"window_start": start, "window_length": length, "n_resimulated": crit.n_resimulated,
                "ledger": str(args.ledger)})
    run.emit(rp.write_json(run.out / "statarb.json", out))
    run.emit(rp.write_histogram(run.out / "min_t_histogram.csv", crit.sample))
    run.emit(rp.write_column(run.out / "min_t_sample.csv", "min_t", crit.sample))
    run.manifest()
    print(f"statarb: Min-t = {result.min_t:.4f}, t_c = {result.t_c:.4f}, p = {result.p_value:.4f}")
    return EXIT_OK


def cmd_pbo(run: Run, args) -> int:
    with run.timed("market_data"):
        data = load_dataset(run)
    p = run.cfg["pbo"]
    t_bl = int(p["t_bl"])
    T = data.daily.n_periods
    n_trials = T // t_bl
    if n_trials < 2:
        raise InputError(f"{T} periods give {n_trials} trial(s) of length {t_bl}; need at least 2")
    ledgers = []
    with run.timed("learner"):
        for k in range(n_trials):
            sub = Dataset(data.mode, data.universe, data.daily.slice(k * t_bl, (k + 1) * t_bl),
                          None if data.intraday is None else data.intraday[k * t_bl:(k + 1) * t_bl])
            ledgers.append(backtest_dataset(run, sub, bool(run.cfg["costs"]["enabled"]))[0])
    with run.timed("pbo"):
        tm = pb.build_trial_matrix(ledgers)
        s = int(p["s_chunks"])
        if s > tm.shape[0]:
            raise InputError(f"{s} chunks exceed the {tm.shape[0]} periods per trial")
        res = pb.cscv_pbo(tm, s, p["metric"])
    out = res.to_dict()
    out["config"] = p
    counts, edges = np.histogram(res.logits, bins=30)
    out["logit_histogram"] = {"edges": edges, "counts": counts}
    run.emit(rp.write_json(run.out / "pbo.json", out))
    run.manifest({"n_trials": n_trials})
    print(f"pbo: N = {n_trials}, S = {s}, PBO = {res.pbo:.4f}")
    return EXIT_OK


def cmd_bench_bcrp(run: Run, args) -> int:
    with run.timed("market_data"):
        data = load_dataset(run)
    with run.timed("bcrp"):
        x = data.daily.relatives()[1:, :-1]
        res = le.bcrp_benchmark(x, int(run.cfg["bcrp"]["n_samples"]), run.cfg["seed"])
    run.emit(rp.write_json(run.out / "bcrp.json", {"tickers": data.daily.tickers, "weights": res.weights,
                                                   "wealth": res.wealth, "seed": res.seed,
                                                   "n_samples": res.n_samples}))
    run.manifest()
    print(f"bench-bcrp: terminal wealth {res.wealth:.6f} -> {run.out}")
    return EXIT_OK


COMMANDS = {"backtest": cmd_backtest, "statarb": cmd_statarb, "pbo": cmd_pbo, "bench-bcrp": cmd_bench_bcrp}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="techarb", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML or JSON run configuration")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--mode", choices=["daily", "intraday"], help="trading mode (overrides the config)")
        sp.add_argument("--no-costs", action="store_true", help="disable transaction costs")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "statarb":
            sp.add_argument("--ledger", required=False, help="ledger CSV written by backtest")
            sp.add_argument("--n-sims", type=int, help="Monte Carlo paths for the critical value")
        if name == "backtest":
            sp.add_argument("--bcrp", action="store_true", help="append the BCRP benchmark path to the ledger")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg, base = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise InputError("--seed must be non-negative")
            cfg["seed"] = args.seed
        if args.out:
            cfg["out"] = args.out
        if args.mode:
            cfg["mode"] = args.mode
        if args.no_costs:
            cfg["costs"]["enabled"] = False
        if getattr(args, "n_sims", None):
            cfg["test"]["n_sims"] = args.n_sims
        out = Path(cfg["out"])
        out = out if out.is_absolute() or args.out else base / out
        out.mkdir(parents=True, exist_ok=True)
        run = Run(cfg, base, out, args.command)
        return COMMANDS[args.command](run, args)
    except (InputError, md.DataError, FileNotFoundError) as exc:
        print(f"techarb: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (sa.FitError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"techarb: computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
