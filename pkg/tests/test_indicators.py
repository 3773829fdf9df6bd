import numpy as np
import pytest
from hypothesis import given, strategies as st

from riskward.indicators import (
    IndicatorConfig, IndicatorError, adx, bollinger, cci, ema, extended_indicators, macd,
    mahalanobis_sq, rsi, sma, turbulence,
)
from riskward.marketdata import panel_from_arrays
from riskward.synthetic import gbm_closes, random_panel

import oracles

walks = st.integers(0, 2**31 - 1).map(
    lambda s: gbm_closes(80, 0.0, 0.02, seed=s)[:, 0])


def test_ema_constant_fixed_point():
    np.testing.assert_array_equal(ema(np.full(7, 3.5), 5), np.full(7, 3.5))


def test_ema_span_one_is_identity():
    x = np.array([1.0, -2.0, 5.0, 0.5])
    np.testing.assert_array_equal(ema(x, 1), x)


def test_ema_two_step():
    np.testing.assert_allclose(ema([1.0, 2.0], 3), [1.0, 1.5], rtol=0, atol=0)


@given(walks, st.integers(1, 30))
def test_ema_matches_recursion_oracle(closes, span):
    np.testing.assert_allclose(ema(closes, span), oracles.ema(list(closes), span), rtol=1e-13)


def test_ema_rejects_empty():
    with pytest.raises(IndicatorError):
        ema([], 3)


def test_macd_constant_is_zero():
    np.testing.assert_allclose(macd(np.full(40, 9.0)), 0.0, atol=1e-12)


def test_macd_increasing_becomes_positive():
    out = macd(np.arange(1.0, 61.0))
    fast, slow = oracles.ema(list(np.arange(1.0, 61.0)), 12), oracles.ema(list(np.arange(1.0, 61.0)), 26)
    assert np.all(out[1:] > 0)
    np.testing.assert_allclose(out, np.subtract(fast, slow), rtol=1e-12)


def test_macd_misconfigured_spans():
    with pytest.raises(IndicatorError):
        macd(np.arange(1.0, 40.0), fast=26, slow=26)
    with pytest.raises(IndicatorError):
        IndicatorConfig(macd_fast=26, macd_slow=26)


def test_bollinger_constant_and_k_zero():
    up, lo = bollinger(np.full(10, 4.0), 3, 2.0)
    np.testing.assert_array_equal(up[2:], 4.0)
    np.testing.assert_array_equal(lo[2:], 4.0)
    x = np.array([1.0, 3.0, 2.0, 5.0])
    up, lo = bollinger(x, 2, 0.0)
    np.testing.assert_allclose(up[1:], sma(x, 2)[1:])
    np.testing.assert_allclose(lo[1:], sma(x, 2)[1:])


def test_bollinger_small_brute_force():
    closes = [1.0, 2.0, 3.0, 4.0]
    up, lo = bollinger(closes, 2, 2.0)
    for t in range(1, 4):
        eu, el = oracles.bollinger_at(closes, t, 2, 2.0)
        assert up[t] == pytest.approx(eu, rel=1e-14)
        assert lo[t] == pytest.approx(el, rel=1e-14)
    # each window is {a, a+1}: mean a + 0.5, population std 0.5
    np.testing.assert_allclose(up[1:], [2.5, 3.5, 4.5])
    np.testing.assert_allclose(lo[1:], [0.5, 1.5, 2.5])


def test_bollinger_window_too_long():
    with pytest.raises(IndicatorError):
        bollinger([1.0, 2.0], 3)


@given(walks, st.integers(2, 25), st.floats(0.0, 4.0))
def test_bollinger_ordering(closes, window, k):
    up, lo = bollinger(closes, window, k)
    mid = sma(closes, window)
    s = slice(window - 1, None)
    assert np.all(up[s] >= mid[s] - 1e-9)
    assert np.all(mid[s] >= lo[s] - 1e-9)


def test_rsi_monotone_extremes():
    assert np.all(rsi(np.arange(1.0, 30.0), 14)[14:] == 100.0)
    assert np.all(rsi(np.arange(30.0, 1.0, -1.0), 14)[14:] == 0.0)


def test_rsi_alternating_equal_moves():
    closes = 10.0 + np.array([(i % 2) for i in range(40)], dtype=float)
    out = rsi(closes, 14)
    assert out[14] == pytest.approx(50.0, abs=1e-12)
    ref = oracles.rsi_wilder(list(closes), 14)
    np.testing.assert_allclose(out[14:], ref[14:], rtol=1e-12)


def test_rsi_insufficient_data():
    with pytest.raises(IndicatorError):
        rsi(np.arange(1.0, 14.0), 14)


@given(walks)
def test_rsi_bounded_and_matches_oracle(closes):
    out = rsi(closes, 14)
    assert np.all((out >= 0) & (out <= 100))
    ref = oracles.rsi_wilder(list(closes), 14)
    np.testing.assert_allclose(out[14:], ref[14:], rtol=1e-10, atol=1e-10)


def test_rsi_bounded_on_1000_random_walks():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        closes = 100.0 * np.cumprod(1.0 + rng.normal(0.0, 0.03, 40))
        out = rsi(closes, 14)
        assert out.min() >= 0.0 and out.max() <= 100.0


def test_constant_prices_degenerate_guards():
    c = np.full(60, 25.0)
    np.testing.assert_array_equal(cci(c, c, c, 14), 0.0)
    np.testing.assert_array_equal(adx(c, c, c, 14), 0.0)
    np.testing.assert_array_equal(sma(c, 30)[29:], 25.0)


def test_cci_brute_force():
    rng = np.random.default_rng(2)
    c = 50 + np.cumsum(rng.normal(size=30))
    h, l = c + 1.0, c - 1.0
    out = cci(h, l, c, 5)
    tp = (h + l + c) / 3
    for t in range(4, 30):
        w = tp[t - 4:t + 1]
        md = np.mean(np.abs(w - w.mean()))
        assert out[t] == pytest.approx((tp[t] - w.mean()) / (0.015 * md), rel=1e-10)


def test_adx_trend_is_strong():
    c = np.arange(1.0, 80.0)
    out = adx(c + 0.5, c - 0.5, c, 14)
    assert out[-1] > 90.0
    assert np.all((out >= 0) & (out <= 100))


def test_turbulence_zero_at_mean():
    hist = np.array([[0.01, -0.01], [-0.01, 0.01], [0.02, 0.0], [0.0, 0.02]])
    cur = hist.mean(axis=0)
    out = turbulence(np.vstack([hist, cur]), lookback=4)
    assert out[-1] == pytest.approx(0.0, abs=1e-20)


def test_turbulence_hand_built_covariance():
    rng = np.random.default_rng(5)
    hist = rng.normal(0.0, 0.01, (30, 2))
    cur = np.array([0.03, -0.02])
    out = turbulence(np.vstack([hist, cur]), lookback=30)
    mu = hist.mean(axis=0)
    cov = ((hist - mu).T @ (hist - mu) / 30).tolist()
    assert out[-1] == pytest.approx(oracles.mahalanobis_2d(cur, mu, cov), rel=1e-10)
    assert np.all(out[:31] == 0.0)


@given(st.integers(0, 10_000))
def test_turbulence_scale_invariant(seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(0.0, 0.01, (25, 3))
    a = turbulence(r, lookback=20)
    b = turbulence(2.0 * r, lookback=20)
    np.testing.assert_allclose(a, b, rtol=1e-8)
    assert np.all(a >= 0)


def test_singular_covariance_falls_back():
    # ridge cannot repair a large rank-one covariance: reported as 0
    big = np.full((2, 2), 1e10)
    assert mahalanobis_sq(np.array([1.0, -1.0]), np.zeros(2), big) == 0.0
    # a zero covariance plus the ridge is well conditioned
    assert mahalanobis_sq(np.array([1.0, 1.0]), np.zeros(2), np.zeros((2, 2))) == pytest.approx(2e8)
    # rank deficient but fixed by the ridge: perfectly collinear history
    near = np.array([[1.0, 1.0], [1.0, 1.0]]) * 1e-4
    val = mahalanobis_sq(np.array([0.01, -0.01]), np.zeros(2), near)
    assert val > 0 and np.isfinite(val)


def test_extended_indicators_shapes_and_warmup():
    panel = random_panel(320, 3, seed=4)
    cfg = IndicatorConfig()
    ind = extended_indicators(panel, cfg)
    assert ind.names == cfg.feature_names
    assert len(cfg.feature_names) == 10
    for name in ind.names:
        assert ind.values[name].shape == (len(panel.dates), 3)
    assert ind.first_valid == cfg.max_warmup
    assert ind.warmup[: ind.first_valid].all() and not ind.warmup[ind.first_valid:].any()
    t = ind.first_valid
    rsi_vals = ind.values["rsi"][t:]
    assert np.all((rsi_vals >= 0) & (rsi_vals <= 100))
    assert np.all(ind.values["boll_ub"][t:] >= ind.values["boll_lb"][t:])
    np.testing.assert_array_equal(ind.values["turbulence"][:, 0], ind.values["turbulence"][:, 2])
    block = ind.feature_block(t)
    assert block.shape == (10 * 3,)
    assert block[3] == ind.values["macd"][t, 0]


def test_extended_indicators_short_panel():
    panel = panel_from_arrays(np.linspace(10, 20, 30))
    with pytest.raises(IndicatorError):
        extended_indicators(panel)


def test_config_subset_and_long_csv():
    import io
    panel = random_panel(90, 2, seed=1)
    cfg = IndicatorConfig(names=("macd", "rsi"), turbulence_lookback=20)
    ind = extended_indicators(panel, cfg)
    assert ind.names == ("macd", "rsi")
    buf = io.StringIO()
    ind.write_long_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "date,ticker,macd,rsi,warmup"
    assert len(lines) == 1 + 2 * len(panel.dates)
