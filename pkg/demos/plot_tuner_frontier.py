"""
Sweeping reward weights
=======================

Evaluate every weight vector on a simplex grid with the deterministic
allocator and keep the risk-return frontier.
"""

from fractions import Fraction

from riskward.env import EnvConfig, TradingEnv
from riskward.indicators import IndicatorConfig
from riskward.synthetic import random_panel
from riskward.tuner import pareto_frontier, simplex_grid, sweep

panel = random_panel(600, 4, seed=5)
env = TradingEnv(panel, EnvConfig(indicators=IndicatorConfig(names=()), warm_up=300))

############################################################
# A coarse grid: step 1/4 gives 35 weight vectors

grid = simplex_grid(Fraction(1, 4))
records = sweep(grid, env, policy="allocator", fit_periods=300)
print(len(records), "configurations evaluated")

############################################################
# Non-dominated configurations, lowest drawdown first

frontier = pareto_frontier(records)
print(len(frontier.indices), "configurations on the frontier")

############################################################
# Several weight vectors can pick the same static mix, so group by outcome

seen = set()
for rec in frontier.members:
    key = (round(rec.metrics["ann_return"], 6), round(rec.metrics["max_dd"], 6))
    if key in seen:
        continue
    seen.add(key)
    w = rec.weights
    print(f"w=({w.w1:.2f},{w.w2:.2f},{w.w3:.2f},{w.w4:.2f})  "
          f"return {rec.metrics['ann_return']:+.3f}  max_dd {rec.metrics['max_dd']:.3f}")
