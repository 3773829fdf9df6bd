"""
Technical indicators and turbulence
===================================

Compute the indicator set on a synthetic panel and look at the warm-up
period and the turbulence index.
"""

import numpy as np

from riskward.indicators import IndicatorConfig, bollinger, extended_indicators, rsi, turbulence
from riskward.synthetic import random_panel

panel = random_panel(400, 3, seed=11)
closes = panel.close[:, 0]

############################################################
# Single-series indicators

upper, lower = bollinger(closes, window=20, k=2.0)
r = rsi(closes, window=14)
print("last close %.2f, band [%.2f, %.2f], RSI %.1f" % (closes[-1], lower[-1], upper[-1], r[-1]))

############################################################
# The full set used for the environment state

cfg = IndicatorConfig()
ind = extended_indicators(panel, cfg)
print("features:", ind.names)
print("first date with complete history:", ind.first_valid)

############################################################
# Turbulence spikes when cross-asset moves are unusual

rets = np.diff(panel.close, axis=0) / panel.close[:-1]
turb = turbulence(rets, lookback=252)[253:]  # zero until the lookback is filled
print("median turbulence %.2f, max %.2f" % (np.median(turb), turb.max()))
