"""
Backtesting baseline policies
=============================

Run the trading environment over the bundled sample data with a few simple
policies and compare their risk profile.
"""

from riskward.agent import baseline_policy
from riskward.env import EnvConfig, TradingEnv, run_episode
from riskward.marketdata import align, parse_ohlcv_csv
from riskward.metrics import performance_summary
from riskward.cli import SAMPLE_FILES

############################################################
# Load the sample assets and the index, then align on common dates

assets = parse_ohlcv_csv(SAMPLE_FILES[0])
index = parse_ohlcv_csv(SAMPLE_FILES[1])
panel = align(assets, next(iter(index.values())))
print(panel.n_assets, "assets,", len(panel.dates), "dates")

############################################################
# One environment serves every policy; indicators are computed once

env = TradingEnv(panel, EnvConfig(transaction_cost_rate=0.001))
print("state dimension", env.dim, "warm-up", env.warm_up)

for name in ("flat", "buy_and_hold", "random"):
    ep = run_episode(env, baseline_policy(name, seed=0))
    summary, flags = performance_summary(ep.returns, ep.market, ep.equity, ep.trade_pnls,
                                         env.config.metrics, mode="exact")
    print(f"{name:>13}: return {summary['ann_return']:+.3f}  max_dd {summary['max_dd']:.3f}  "
          f"sharpe {summary['sharpe']:+.2f}  fees {ep.total_fees:,.0f}")
