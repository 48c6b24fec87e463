"""CSV/JSON writers and readers for ledgers, expert wealth, summaries and test reports."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .experts import ExpertSpec
from .market_data import DataError

LEDGER_HEADER = ["period", "timestamp", "S", "PL", "cost", "n_active_experts"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def write_ledger(path, ledger, benchmark: np.ndarray | None = None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEDGER_HEADER + (["bcrp_S"] if benchmark is not None else []))
        for i, row in enumerate(ledger.rows()):
            t, ts, S, PL, cost, n = row
            rec = [t, str(ts), repr(float(S)), repr(float(PL)), repr(float(cost)), n]
            if benchmark is not None:
                rec.append(repr(float(benchmark[i])))
            w.writerow(rec)
    return path


def read_ledger(path) -> dict[str, np.ndarray]:
    """Columns of a ledger CSV; numeric columns as float arrays."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ledger not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(LEDGER_HEADER) <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns {','.join(LEDGER_HEADER)}")
        rows = list(reader)
    out = {"timestamp": np.array([r["timestamp"] for r in rows])}
    for k in reader.fieldnames:
        if k != "timestamp":
            try:
                out[k] = np.array([float(r[k]) for r in rows])
            except ValueError as exc:
                raise DataError(f"{path}: column {k}: {exc}") from None
    return out


def write_expert_wealth(path, specs: Sequence[ExpertSpec], wealth: np.ndarray) -> Path:
    """One row per period, one column per expert key."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period"] + [s.key for s in specs])
        for t, row in enumerate(wealth):
            w.writerow([t] + [f"{v:.12g}" for v in row])
    return path


SUMMARY_HEADER = ["strategy", "n_experts", "wealth_mean", "wealth_std", "wealth_min", "wealth_max",
                  "pl_mean", "pl_std", "pl_min", "pl_max"]


def strategy_summary(specs: Sequence[ExpertSpec], wealth: np.ndarray) -> list[dict]:
    """Terminal expert wealth and per-period expert P&L statistics grouped by strategy."""
    wealth = np.asarray(wealth, dtype=float)
    inc = wealth[1:] / wealth[:-1] - 1.0 if wealth.shape[0] > 1 else np.zeros((0, wealth.shape[1]))
    rows = []
    labels = list(dict.fromkeys(s.label for s in specs))
    for label in labels:
        idx = [k for k, s in enumerate(specs) if s.label == label]
        term, pl = wealth[-1, idx], inc[:, idx].ravel()
        rows.append({
            "strategy": label, "n_experts": len(idx),
            "wealth_mean": term.mean(), "wealth_std": term.std(ddof=1) if term.size > 1 else 0.0,
            "wealth_min": term.min(), "wealth_max": term.max(),
            "pl_mean": pl.mean() if pl.size else 0.0, "pl_std": pl.std(ddof=1) if pl.size > 1 else 0.0,
            "pl_min": pl.min() if pl.size else 0.0, "pl_max": pl.max() if pl.size else 0.0,
        })
    return rows


def write_summary(path, rows: list[dict]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_HEADER)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
    return path


def write_histogram(path, sample, bins: int = 50) -> Path:
    """Histogram data (bin edges and counts) plus the raw sample in a second file."""
    path = Path(path)
    sample = np.asarray(sample, dtype=float)
    counts, edges = np.histogram(sample, bins=bins)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count"])
        for a, b, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(a)), repr(float(b)), int(c)])
    return path


def write_column(path, name: str, values) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([name])
        for v in values:
            w.writerow([repr(float(v))])
    return path
