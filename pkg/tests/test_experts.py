import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from techarb import experts as ex
from techarb.market_data import Panel, Universe
from techarb.synthetic import random_panel, sector_universe


def test_enumerate_counts():
    u = Universe(["A", "B"])
    specs = ex.enumerate_experts(u)
    assert len(specs) == 130 == ex.omega(1, ex.DEFAULT_N1, ex.DEFAULT_N2, 14, 3)
    u4 = sector_universe([f"S{i}" for i in range(6)])
    assert len(ex.enumerate_experts(u4)) == 520
    small = ex.enumerate_experts(u, ["ma_crossover", "rsi"], n1_grid=[4, 30], n2_grid=[24])
    assert [s.key for s in small] == ["ma_crossover|trivial|4|24", "rsi|trivial|4|-", "rsi|trivial|30|-"]
    assert len(set(s.key for s in specs)) == len(specs)


def test_spec_validation():
    with pytest.raises(ValueError):
        ex.ExpertSpec("ma_crossover", "trivial", 24, 4)
    with pytest.raises(ValueError):
        ex.ExpertSpec("bogus", "trivial", 4)
    assert ex.ExpertSpec("rsi", "trivial", 4, 99).n2 is None


def test_output_signals_example():
    assert ex.output_signals([1, 0, -1, 0], [-1, -1, 1, 0]).tolist() == [1, -1, -1, 0]


@settings(max_examples=50)
@given(arrays(np.int8, (15, 3), elements=st.sampled_from([-1, 0, 1])))
def test_carry_signals_matches_recursion(raw):
    prev = np.zeros(3, dtype=np.int8)
    expect = []
    for row in raw:
        prev = ex.output_signals(row, prev)
        expect.append(prev)
    assert np.array_equal(ex.carry_signals(raw), np.array(expect))


def test_signals_to_controls_examples():
    assert ex.signals_to_controls([1, 1, -1], [1.0, 3.0, 2.0]) == pytest.approx([0.125, 0.375, -0.5, 0.0])
    assert ex.signals_to_controls([1, 0, 0], [2.0, 1.0, 1.0]) == pytest.approx([0.5, 0, 0, -0.5])
    assert ex.signals_to_controls([-1, -1], [0.0, 0.0]) == pytest.approx([-0.25, -0.25, 0.5])
    assert not np.any(ex.signals_to_controls([0, 0], [1.0, 1.0]))
    with pytest.raises(ValueError):
        ex.signals_to_controls([1], [1.0], mode="nope")


@settings(max_examples=60)
@given(arrays(np.int8, 5, elements=st.sampled_from([-1, 0, 1])),
       arrays(float, 5, elements=st.floats(0, 50)))
def test_signals_to_controls_matches_oracle(sig, vol):
    h = ex.signals_to_controls(sig, vol)
    assert h == pytest.approx(oracles.controls_from_signals(sig.tolist(), vol.tolist()), abs=1e-12)
    assert abs(h.sum()) < 1e-12
    assert np.abs(h[:-1]).sum() <= 1 + 1e-12


def test_trailing_vol():
    v = ex.trailing_vol(np.array([1.0, 2.0, 3.0, 5.0]), window=3)
    assert np.isnan(v[0])
    assert v[1:] == pytest.approx([np.std([1, 2], ddof=1), 1.0, np.std([2, 3, 5], ddof=1)])


def test_wealth_increment_examples():
    x = np.array([1.04, 1.0, 1.0])
    st0 = ex.ExpertState(np.array([0.5, 0.0, -0.5]), 1.0, np.zeros(2, dtype=np.int8))
    panel = Panel.from_closes(np.array([[100.0, 50.0], [104.0, 50.0]]))
    spec = ex.ExpertSpec("rsi", "trivial", 4)
    assert ex.expert_step(spec, st0, panel, Universe(panel.tickers), x).wealth == pytest.approx(1.02)
    x_rf = np.array([1.0, 1.0, 1.0001])
    got = ex.expert_step(spec, st0, panel, Universe(panel.tickers), x_rf).wealth
    assert got == pytest.approx(1 - 0.5 * 0.0001, rel=1e-14)


@pytest.mark.parametrize("rule, n1, n2", [("ma_crossover", 4, 24), ("rsi", 8, None), ("z_bcrp", 8, None),
                                          ("z_anticor", 4, None), ("sar", 4, None)])
def test_step_chain_matches_builder(rule, n1, n2):
    panel = random_panel(120, 4, seed=5)
    uni = sector_universe(panel.tickers, ("resources", "financials"))
    spec = ex.ExpertSpec(rule, "resources", n1, n2)
    H = ex.ControlBuilder(panel, uni, vol_window=30).controls(spec)
    X = panel.relatives()
    state = ex.ExpertState.initial(4)
    wealth = 1.0
    for t in range(panel.n_periods):
        state = ex.expert_step(spec, state, panel.slice(0, t + 1), uni, X[t], vol_window=30)
        if t > 0:
            wealth *= ex.wealth_increment(H[t - 1], X[t])
        assert state.controls == pytest.approx(H[t], abs=1e-12)
        assert state.wealth == pytest.approx(wealth, rel=1e-12)


def test_builder_matches_loop_oracle():
    panel = random_panel(110, 3, seed=6)
    uni = Universe(panel.tickers)
    spec = ex.ExpertSpec("ema_crossover", "trivial", 4, 24)
    H = ex.ControlBuilder(panel, uni).controls(spec)
    ref = oracles.expert_controls("ema_crossover", 4, 24, panel.close.tolist(), [0, 1, 2])
    assert H == pytest.approx(np.array(ref), abs=1e-12)


def test_cluster_masking():
    panel = random_panel(150, 6, seed=7)
    uni = sector_universe(panel.tickers)
    builder = ex.ControlBuilder(panel, uni)
    for rule in ("momentum", "z_bcrp", "z_anticor"):
        H = builder.controls(ex.ExpertSpec(rule, "industrials", 4))
        outside = ~uni.mask("industrials")
        assert not np.any(H[:, :-1][:, outside])
        assert np.any(H)
    empty = Universe(panel.tickers, {"x": []})
    assert not np.any(ex.ControlBuilder(panel, empty).controls(ex.ExpertSpec("rsi", "x", 4)))


def test_portfolio_expert_start_periods():
    panel = random_panel(60, 4, seed=8)
    b = ex.ControlBuilder(panel, Universe(panel.tickers))
    H = b.controls(ex.ExpertSpec("z_bcrp", "trivial", 8))
    assert not np.any(H[:8]) and np.any(H[8])
    H = b.controls(ex.ExpertSpec("z_anticor", "trivial", 8))
    assert not np.any(H[:16])
