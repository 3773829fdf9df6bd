import io
import json
import math
from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riskward.env import EnvConfig, TradingEnv
from riskward.indicators import IndicatorConfig
from riskward.marketdata import panel_from_arrays
from riskward.metrics import MetricContext
from riskward.reward import RewardWeights
from riskward.synthetic import gbm_closes, random_panel
from riskward.tuner import (
    SWEEP_COLUMNS, TuneRecord, TunerError, evaluate_config, frontier_summary, pareto_frontier,
    simplex_grid, simplex_points, sweep, write_sweep_csv,
)

import oracles

NO_IND = IndicatorConfig(names=())


def record(ret, risk, k=0):
    return TuneRecord(RewardWeights(k, 0, 0, 0), {"ann_return": ret, "max_dd": risk})


@pytest.mark.parametrize("step, count", [(1.0, 4), (0.5, 10), (0.1, 286), (Fraction(1, 4), 35)])
def test_grid_counts(step, count):
    g = simplex_grid(step)
    n = round(1 / float(step))
    assert len(g) == count == comb(n + 3, 3) == oracles.simplex_count(n)


def test_grid_exact_and_lexicographic():
    g = simplex_grid(0.1)
    assert all(sum(p) == 1 for p in g.rational)
    assert list(g.rational) == sorted(g.rational)
    assert all(abs(math.fsum(p) - 1.0) <= 1e-12 for p in g.points)
    assert g.points[0] == (0.0, 0.0, 0.0, 1.0)
    assert len(set(g.rational)) == len(g)


def test_grid_corners():
    assert sorted(simplex_grid(1.0).points) == sorted(tuple(float(i == j) for i in range(4)) for j in range(4))


@pytest.mark.parametrize("step", [0.3, 0.0, 1.5, -0.5])
def test_grid_rejects_non_divisor(step):
    with pytest.raises(TunerError):
        simplex_grid(step)


def test_simplex_points_other_dims():
    assert len(simplex_points(2, 10)) == 11
    assert len(simplex_points(3, 4)) == comb(6, 2)


def test_pareto_examples():
    f = pareto_frontier([record(0.1, 0.2)])
    assert f.indices == (0,)
    f = pareto_frontier([record(0.2, 0.1), record(0.1, 0.2)])
    assert f.indices == (0,) and f.dominated == (False, True)
    with pytest.raises(TunerError):
        pareto_frontier([])


def test_pareto_keeps_ties_and_drops_nan():
    recs = [record(0.1, 0.1), record(0.1, 0.1), record(math.nan, 0.0), record(0.05, 0.2)]
    f = pareto_frontier(recs)
    assert set(f.indices) == {0, 1}
    assert f.dominated[2] and f.dominated[3]


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=50))
def test_pareto_matches_quadratic_oracle_with_ties(points):
    recs = [record(r / 10, k / 10) for r, k in points]
    f = pareto_frontier(recs)
    assert sorted(f.indices) == oracles.non_dominated([(r / 10, k / 10) for r, k in points])
    members = f.members
    for a in members:
        for b in members:
            assert not (a.metrics["ann_return"] >= b.metrics["ann_return"]
                        and a.metrics["max_dd"] <= b.metrics["max_dd"]
                        and (a.metrics["ann_return"] > b.metrics["ann_return"]
                             or a.metrics["max_dd"] < b.metrics["max_dd"]))


def test_pareto_random_fifty():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(50, 2))
    recs = [record(*p) for p in pts]
    assert sorted(pareto_frontier(recs).indices) == oracles.non_dominated([tuple(p) for p in pts])


def flat_env():
    panel = panel_from_arrays(np.full((40, 2), 25.0))
    return TradingEnv(panel, EnvConfig(transaction_cost_rate=0.0, indicators=NO_IND))


def test_buy_and_hold_on_flat_prices():
    rec = evaluate_config(RewardWeights(1, 0, 0, 0), flat_env(), policy="buy_and_hold")
    assert rec.metrics["composite_R"] == 0.0
    assert rec.metrics["max_dd"] == 0.0


def test_evaluate_config_deterministic():
    env = TradingEnv(random_panel(400, 3, seed=2), EnvConfig())
    w = RewardWeights(0.2, 0.3, 0.1, 0.4)
    a, b = evaluate_config(w, env, seed=3), evaluate_config(w, env, seed=3)
    assert a.row() == b.row()
    np.testing.assert_array_equal(a.exposures, b.exposures)


def test_failures_become_flagged_records():
    env = flat_env()
    rec = evaluate_config(RewardWeights(), env, policy="no-such-policy")
    assert rec.flags and rec.flags[0].startswith("error:")
    assert all(math.isnan(rec.metrics[k]) for k in ("ann_return", "max_dd"))
    # zero market variance: composite undefined but the record is still produced
    rec = evaluate_config(RewardWeights(0, 0, 1, 0), env, policy="buy_and_hold")
    assert math.isnan(rec.metrics["composite_R"])
    assert any(f.startswith("composite_undefined") for f in rec.flags)


def test_sweep_matches_serial_singles():
    env = TradingEnv(random_panel(400, 3, seed=7), EnvConfig())
    ws = simplex_grid(1.0).weights() + [RewardWeights(0.5, 0.5, 0, 0), RewardWeights(0.25, 0.25, 0.25, 0.25),
                                        RewardWeights(0, 0.5, 0.5, 0), RewardWeights(0.1, 0.2, 0.3, 0.4),
                                        RewardWeights(0.4, 0.3, 0.2, 0.1), RewardWeights(0, 0, 0.5, 0.5)]
    assert len(ws) == 10
    parallel = sweep(ws, env, workers=4)
    serial = [evaluate_config(w, env) for w in ws]
    assert [r.row() for r in parallel] == [r.row() for r in serial]
    assert [r.weights for r in parallel] == ws


def test_sweep_with_baseline_policy():
    env = TradingEnv(random_panel(400, 2, seed=8), EnvConfig())
    recs = sweep(simplex_grid(0.5), env, policy="random", seed=4, workers=2)
    assert len(recs) == 10
    assert all(r.policy == "random" and r.seed == 4 for r in recs)


def test_sweep_csv_and_frontier_json():
    env = TradingEnv(random_panel(400, 2, seed=8), EnvConfig())
    recs = sweep(simplex_grid(0.5), env)
    buf = io.StringIO()
    write_sweep_csv(recs, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 11
    f = pareto_frontier(recs)
    summary = frontier_summary(recs, f, seed=0)
    json.dumps(summary)
    assert summary["frontier_indices"] == list(f.indices)
    assert summary["n_configs"] == 10


def standardized(rng, n):
    z = rng.standard_normal(n)
    return (z - z.mean()) / z.std()


def risk_panel(seed=0, half=300):
    # A: higher mean, fat downside; B: low volatility, low mean.  Shocks are
    # standardized per window so the sample moments match the design.
    rng = np.random.default_rng(seed)
    a_ret = np.concatenate([0.0012 + 0.025 * standardized(rng, half) for _ in range(2)])
    b_ret = np.concatenate([0.0003 + 0.003 * standardized(rng, half) for _ in range(2)])
    closes = np.column_stack([100 * np.cumprod(np.r_[1.0, 1 + a_ret]), 50 * np.cumprod(np.r_[1.0, 1 + b_ret])])
    return panel_from_arrays(closes, closes.mean(axis=1), tickers=("A", "B"))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_risk_preference_shifts_exposure_to_low_risk_asset(seed):
    panel = risk_panel(seed)
    a, b = panel.asset_returns[:300].T
    assert a.mean() > b.mean()
    assert np.minimum(a, 0).std() > np.minimum(b, 0).std()
    env = TradingEnv(panel, EnvConfig(indicators=NO_IND, warm_up=300))
    recs = sweep(simplex_grid(0.25), env, fit_periods=300)
    f = pareto_frontier(recs)
    top_w2 = max(f.members, key=lambda r: (r.weights.w2, f.records.index(r)))
    zero_w2 = [r for r in recs if r.weights.w2 == 0]
    assert all(top_w2.exposures[1] >= r.exposures[1] - 1e-12 for r in zero_w2)
