"""
Training a PPO agent
====================

Train the linear Gaussian policy on a two-asset market where one asset
trends up and the other is flat.  A good policy learns to hold the first.
"""

import numpy as np

from riskward.agent import PPOConfig, baseline_policy, evaluate_policy, train
from riskward.env import EnvConfig, TradingEnv
from riskward.synthetic import uptrend_flat_panel

panel = uptrend_flat_panel(n_dates=314, seed=7)
env = TradingEnv(panel, EnvConfig())

############################################################
# Fewer iterations than the default keep this quick

report = train(env, config=PPOConfig(iterations=60, seed=0))
curve = np.array([rec["mean_reward"] for rec in report.records])
print("first / last mean episode reward: %.4f / %.4f" % (curve[0], curve[-1]))
print("tail slope", report.tail_slope)

############################################################
# Compare with the reference policies

print("trained      %.4f" % report.final_reward)
print("flat         %.4f" % evaluate_policy(env, baseline_policy("flat")))
print("buy and hold %.4f" % evaluate_policy(env, baseline_policy("buy_and_hold", assets=[0])))
