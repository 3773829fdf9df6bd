"""
Composite reward and its gradients
==================================

Build a short return series, split the reward into its parts and check the
analytic gradient against central differences.
"""

import numpy as np

from riskward.metrics import MetricContext
from riskward.reward import RewardWeights, composite_reward, finite_difference_check, reward_gradient

############################################################
# A portfolio that tracks the market with some extra noise

rng = np.random.default_rng(3)
market = rng.normal(0.0004, 0.01, 60)
portfolio = 0.8 * market + rng.normal(0.0002, 0.004, 60)
benchmark = market

weights = RewardWeights(0.4, 0.3, 0.2, 0.1)
ctx = MetricContext()

############################################################
# Evaluate the reward.  The breakdown keeps every component

bd = composite_reward(portfolio, benchmark, market, weights, ctx)
print("total reward     ", round(bd.total, 6))
print("return reward    ", round(bd.return_reward, 6))
print("risk penalty     ", round(bd.risk_penalty, 6))
print("benchmark bonus  ", round(bd.benchmark_bonus, 6))
print("beta raw/clamped ", bd.components.beta, bd.components.beta_clamped)

############################################################
# Gradient with respect to each period's return.  Beta is held fixed

grad = reward_gradient(portfolio, benchmark, market, weights, ctx)
print("dR/dR_t (first 5)", np.round(grad.d_returns[:5], 4))

############################################################
# Central-difference check, component by component

report = finite_difference_check(portfolio, benchmark, market, weights, ctx)
print(report.summary())
print("passed:", report.passed)
