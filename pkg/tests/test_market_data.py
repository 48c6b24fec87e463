import json
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from techarb import market_data as md

HEADER = "timestamp,ticker,open,high,low,close,volume\n"


def _write(tmp_path, body, name="px.csv"):
    p = tmp_path / name
    p.write_text(HEADER + body)
    return p


def test_load_and_align(tmp_path):
    body = "".join(f"2020-01-0{d},AAA,10,20,9,{10 + d},100\n" for d in range(1, 6))
    body += "".join(f"2020-01-0{d},BBB,5,6,4,5,50\n" for d in (1, 2, 4, 5))
    series = md.load_ohlcv(_write(tmp_path, body))
    assert sorted(series) == ["AAA", "BBB"]
    b = series["BBB"]
    assert len(b) == 5
    assert b.filled.tolist() == [False, False, True, False, False]
    assert b.close[2] == 5 and b.volume[2] == 0


def test_coverage_drop(tmp_path):
    body = "".join(f"2020-01-0{d},AAA,10,11,9,10,100\n" for d in range(1, 6))
    body += "2020-01-01,BBB,5,6,4,5,50\n2020-01-02,BBB,5,6,4,5,50\n"
    assert list(md.load_ohlcv(_write(tmp_path, body))) == ["AAA"]


@pytest.mark.parametrize("row, line", [
    ("2020-01-01,AAA,10,11,9,10\n", 2),
    ("2020-01-01,AAA,10,11,9,abc,100\n", 2),
    ("2020-01-01,AAA,10,9,11,10,100\n", 2),
    ("2020-01-01,AAA,10,11,9,10,-1\n", 2),
    ("2020-01-01,AAA,0,11,9,10,1\n", 2),
])
def test_parse_errors_report_line(tmp_path, row, line):
    with pytest.raises(md.ParseError) as exc:
        md.load_ohlcv(_write(tmp_path, row))
    assert f":{line}" in str(exc.value)


def test_bad_header_and_ordering(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("date,ticker,close\n")
    with pytest.raises(md.ParseError):
        md.load_ohlcv(p)
    body = "2020-01-02,AAA,10,11,9,10,1\n2020-01-01,AAA,10,11,9,10,1\n"
    with pytest.raises(md.OrderingError):
        md.load_ohlcv(_write(tmp_path, body))


def test_bar_validation():
    with pytest.raises(ValueError):
        md.Bar(datetime(2020, 1, 1), 10, 9, 8, 10, 1)
    md.Bar(datetime(2020, 1, 1), 10, 10, 10, 10, 0)


def test_price_relatives_example():
    assert md.price_relatives([100, 110, 99]) == pytest.approx([1.1, 0.9])
    with pytest.raises(md.InsufficientDataError):
        md.price_relatives([1.0])


@settings(max_examples=50)
@given(st.lists(st.floats(0.01, 1e4), min_size=2, max_size=60))
def test_relatives_reconstruct_prices(closes):
    x = md.price_relatives(closes)
    rebuilt = closes[0] * np.concatenate([[1.0], np.cumprod(x)])
    assert np.allclose(rebuilt, closes, rtol=1e-9)


def test_adv_rank_examples_and_ties():
    vols = {"A": [1, 1, 10], "B": [5, 5, 5], "C": [9, 9, 0], "D": [5, 5, 5]}
    assert md.adv_rank(vols, 3, 2) == ["C", "B"]
    assert md.adv_rank(vols, 1, 3) == ["A", "B", "D"]
    with pytest.raises(md.InsufficientDataError):
        md.adv_rank(vols, 4, 1)
    with pytest.raises(ValueError):
        md.adv_rank(vols, 1, 5)


def _intraday(days, bars):
    ts = np.concatenate([np.datetime64(f"2020-01-0{d + 1}T09:00") + np.arange(bars) * np.timedelta64(5, "m")
                         for d in range(days)])
    c = np.linspace(10, 11, ts.size)
    return md.BarSeries("X", md.INTRADAY, ts, c, c, c, c, np.ones(ts.size))


def test_split_days():
    parts = md.split_days(_intraday(3, md.BARS_PER_DAY))
    assert len(parts) == 3 and all(len(p) == 88 for p in parts)
    with pytest.raises(md.DataError):
        md.split_days(_intraday(2, 87))


def test_daily_from_intraday():
    s = _intraday(2, 88)
    d = md.daily_from_intraday(s)
    assert len(d) == 2
    assert d.close[0] == s.close[87] and d.volume[1] == 88


def test_risk_free(tmp_path):
    p = tmp_path / "rf.csv"
    p.write_text("date,level\n2020-01-01,100\n2020-01-03,101\n")
    rf = md.load_risk_free(p)
    assert rf.relatives() == pytest.approx([1.0, 1.01])
    al = rf.aligned(np.array(["2020-01-01", "2020-01-02", "2020-01-03"], dtype="datetime64[D]"))
    assert al.level.tolist() == [100, 100, 101]
    assert al.intraday_relatives()[2] == pytest.approx(1 + 0.01 / 88)
    with pytest.raises(md.DataError):
        rf.aligned(np.array(["2019-12-31"], dtype="datetime64[D]"))


def test_clusters(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"resources": ["A", "Z"], "financials": ["B"]}))
    u = md.load_clusters(p, ["A", "B", "C"])
    assert u.clusters["trivial"] == ["A", "B", "C"]
    assert u.clusters["resources"] == ["A"]
    assert u.mask("financials").tolist() == [False, True, False]
    y = tmp_path / "c.yaml"
    y.write_text("resources: [A]\n")
    assert md.load_clusters(y).tickers == ["A"]
    with pytest.raises(md.DataError):
        md.Universe(["A"], {"x": ["Q"]})


def test_panel_relatives():
    p = md.Panel.from_closes(np.array([[1.0, 2.0], [1.1, 1.8]]), rf_relative=[1.0, 1.001])
    x = p.relatives()
    assert x.shape == (2, 3)
    assert x[0].tolist() == [1, 1, 1]
    assert x[1] == pytest.approx([1.1, 0.9, 1.001])
    assert p.select(["A1"]).close[:, 0].tolist() == [2.0, 1.8]
