"""Deterministic multi-asset daily trading environment.

Each step trades at the current close and then advances one day.  Actions
are per-asset values in [-1, 1] scaled by ``h_max`` shares; sells execute
before buys, buys in ascending asset order with partial fills when cash
runs short.  Only long positions are supported.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import IO, Callable, Sequence

import numpy as np

from .indicators import IndicatorConfig, IndicatorSet, extended_indicators
from .marketdata import AlignedPanel
from .metrics import MetricContext, ZeroVarianceError
from .reward import RewardWeights, composite_reward

REWARD_MODES = ("potential", "terminal")


class EnvError(ValueError):
    pass


def h_max(initial_amount: float, max_price: float) -> int:
    """Share cap per asset and step: ``floor(initial_amount / max_price)``."""
    if max_price <= 0:
        raise EnvError("max_price must be positive")
    return int(math.floor(initial_amount / max_price))


def state_dimension(stock_dim: int, indicator_count: int) -> int:
    return 1 + 2 * stock_dim + indicator_count * stock_dim


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


@dataclass(frozen=True)
class EnvConfig:
    initial_amount: float = 1e6
    transaction_cost_rate: float = 0.001
    indicators: IndicatorConfig = field(default_factory=IndicatorConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    reward_mode: str = "potential"
    annualization: str = "approx"
    metrics: MetricContext = field(default_factory=MetricContext)
    warm_up: int | None = None
    stock_dim: int | None = None

    def __post_init__(self):
        if self.initial_amount <= 0:
            raise EnvError("initial_amount must be positive")
        if not 0 <= self.transaction_cost_rate <= 0.1:
            raise EnvError("transaction_cost_rate must lie in [0, 0.1]")
        if self.reward_mode not in REWARD_MODES:
            raise EnvError(f"reward_mode must be one of {REWARD_MODES}")
        if self.annualization not in ("approx", "exact"):
            raise EnvError("annualization must be 'approx' or 'exact'")
        if self.stock_dim is not None and self.stock_dim < 1:
            raise EnvError("stock_dim must be >= 1")


@dataclass(frozen=True)
class EnvState:
    t: int
    date_index: int
    cash: float
    holdings: np.ndarray
    prices: np.ndarray
    indicators: np.ndarray

    @property
    def portfolio_value(self) -> float:
        return self.cash + float(np.dot(self.holdings, self.prices))

    def flatten(self) -> np.ndarray:
        return np.concatenate([[self.portfolio_value], self.prices,
                               self.holdings.astype(float), self.indicators])


@dataclass(frozen=True)
class StepOutcome:
    state: EnvState
    reward: float
    done: bool
    info: dict


def episode_objective(returns, benchmark, market, weights: RewardWeights,
                      ctx: MetricContext, annualization: str = "approx") -> float:
    """Composite reward of a (partial) horizon; 0 for fewer than two periods.

    A prefix whose market returns have zero variance also scores 0 rather
    than raising, so shaped rewards stay defined on every step.
    """
    if len(returns) < 2:
        return 0.0
    try:
        return composite_reward(np.asarray(returns, dtype=float), np.asarray(benchmark, dtype=float),
                                np.asarray(market, dtype=float), weights, ctx, annualization).total
    except ZeroVarianceError:
        return 0.0


def episode_reward_stream(returns, benchmark, market, weights: RewardWeights,
                          ctx: MetricContext | None = None, mode: str = "potential",
                          annualization: str = "approx") -> np.ndarray:
    """Per-step rewards whose sum equals the episode's composite reward.

    ``terminal`` pays everything on the last step; ``potential`` pays the
    increment of the objective evaluated on the growing prefix.
    """
    ctx = ctx or MetricContext()
    r = np.asarray(returns, dtype=float)
    b = np.asarray(benchmark, dtype=float)
    m = np.asarray(market, dtype=float)
    out = np.zeros(r.size)
    if r.size == 0:
        return out
    if mode == "terminal":
        out[-1] = episode_objective(r, b, m, weights, ctx, annualization)
        return out
    if mode != "potential":
        raise EnvError(f"unknown reward mode {mode!r}")
    prev = 0.0
    for k in range(1, r.size + 1):
        cur = episode_objective(r[:k], b[:k], m[:k], weights, ctx, annualization)
        out[k - 1] = cur - prev
        prev = cur
    return out


class TradingEnv:
    """Gym-style environment over an :class:`AlignedPanel`.

    ``reset`` / ``step`` follow the usual protocol; ``step`` returns a
    :class:`StepOutcome`.  Indicators are computed once per environment.
    """

    def __init__(self, panel: AlignedPanel, config: EnvConfig | None = None,
                 indicators: IndicatorSet | None = None):
        self.panel = panel
        self.config = config or EnvConfig()
        cfg = self.config
        if cfg.stock_dim is not None and cfg.stock_dim != panel.n_assets:
            raise EnvError(f"config stock_dim {cfg.stock_dim} != panel assets {panel.n_assets}")
        self.stock_dim = panel.n_assets
        names = cfg.indicators.feature_names
        if names:
            self.indicators = indicators or extended_indicators(panel, cfg.indicators)
            first_valid = self.indicators.first_valid
        else:
            self.indicators = None
            first_valid = 0
        self.warm_up = max(first_valid, cfg.warm_up or 0)
        self.indicator_count = len(names)
        self.dim = state_dimension(self.stock_dim, self.indicator_count)
        self.state: EnvState | None = None
        self.h_max = 0
        self.window: tuple[int, int] | None = None

    @property
    def default_window(self) -> tuple[int, int]:
        return self.warm_up, len(self.panel.dates) - 1

    def _indicator_block(self, i: int) -> np.ndarray:
        if self.indicators is None:
            return np.zeros(0)
        return self.indicators.feature_block(i)

    def reset(self, window: tuple[int, int] | None = None) -> EnvState:
        """Start an episode trading from date ``start`` until date ``end``."""
        start, end = window or self.default_window
        if start < self.warm_up:
            raise EnvError(f"episode start {start} is inside the warm-up period (< {self.warm_up})")
        if not 0 <= start < end <= len(self.panel.dates) - 1:
            raise EnvError(f"window {start, end} outside panel bounds")
        self.window = (start, end)
        max_price = float(self.panel.close[start:end + 1].max())
        self.h_max = h_max(self.config.initial_amount, max_price)
        self._returns: list[float] = []
        self._cost_basis = np.zeros(self.stock_dim)
        self._closed_pnls: list[float] = []
        self._potential = 0.0
        self._fill_fees: list[float] = []
        self._fill_notionals: list[float] = []
        self.state = EnvState(
            t=0,
            date_index=start,
            cash=float(self.config.initial_amount),
            holdings=np.zeros(self.stock_dim, dtype=np.int64),
            prices=self.panel.close[start].copy(),
            indicators=self._indicator_block(start),
        )
        return self.state

    def observation(self) -> np.ndarray:
        return self.state.flatten()

    def step(self, action: Sequence[float]) -> StepOutcome:
        if self.state is None:
            raise EnvError("call reset() before step()")
        s = self.state
        start, end = self.window
        if s.date_index >= end:
            raise EnvError("episode is over; call reset()")
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.size != self.stock_dim:
            raise EnvError(f"action length {a.size} != stock_dim {self.stock_dim}")
        if np.isnan(a).any():
            raise EnvError("action contains NaN")
        a = np.clip(a, -1.0, 1.0)
        desired = _round_half_away(a * self.h_max)

        rate = self.config.transaction_cost_rate
        prices = s.prices
        cash = s.cash
        holdings = s.holdings.copy()
        value_before = s.portfolio_value
        fills = np.zeros(self.stock_dim, dtype=np.int64)
        fees = np.zeros(self.stock_dim)
        notionals = np.zeros(self.stock_dim)

        for i in np.flatnonzero(desired < 0):
            n = int(min(-desired[i], holdings[i]))
            if n == 0:
                continue
            notional = n * prices[i]
            fee = notional * rate
            cash += notional - fee
            holdings[i] -= n
            fills[i] = -n
            fees[i] = fee
            notionals[i] = notional
            self._closed_pnls.append(n * (prices[i] - self._cost_basis[i]) - fee)
            if holdings[i] == 0:
                self._cost_basis[i] = 0.0

        for i in np.flatnonzero(desired > 0):
            unit = prices[i] * (1.0 + rate)
            n = int(min(desired[i], math.floor(cash / unit)))
            while n > 0 and n * prices[i] + n * prices[i] * rate > cash:
                n -= 1
            if n == 0:
                continue
            notional = n * prices[i]
            fee = notional * rate
            cash -= notional + fee
            old = holdings[i]
            self._cost_basis[i] = (old * self._cost_basis[i] + notional + fee) / (old + n)
            holdings[i] += n
            fills[i] = n
            fees[i] = fee
            notionals[i] = notional

        value_after_trades = cash + float(np.dot(holdings, prices))
        traded = fills != 0
        self._fill_fees.extend(fees[traded].tolist())
        self._fill_notionals.extend(notionals[traded].tolist())

        nxt = s.date_index + 1
        new_prices = self.panel.close[nxt].copy()
        new_state = EnvState(s.t + 1, nxt, cash, holdings, new_prices, self._indicator_block(nxt))
        value_next = new_state.portfolio_value
        r_pt = value_next / value_before - 1.0
        self._returns.append(r_pt)
        done = nxt >= end

        k = len(self._returns)
        bench = self.panel.benchmark.values[start:start + k]
        mkt = self.panel.market.values[start:start + k]
        cfg = self.config
        if cfg.reward_mode == "potential":
            phi = episode_objective(self._returns, bench, mkt, cfg.weights, cfg.metrics, cfg.annualization)
            reward = phi - self._potential
            self._potential = phi
        elif done:
            reward = episode_objective(self._returns, bench, mkt, cfg.weights, cfg.metrics, cfg.annualization)
        else:
            reward = 0.0

        self.state = new_state
        info = {
            "action": a,
            "fills": fills,
            "fees": fees,
            "fee_total": math.fsum(fees),
            "notional": notionals,
            "value_before": value_before,
            "value_after_trades": value_after_trades,
            "value": value_next,
            "R_pt": r_pt,
        }
        return StepOutcome(new_state, float(reward), done, info)

    @property
    def total_fees(self) -> float:
        """Correctly rounded sum of every fill's fee this episode."""
        return math.fsum(self._fill_fees)

    @property
    def total_notional(self) -> float:
        return math.fsum(self._fill_notionals)

    @property
    def realized_returns(self) -> np.ndarray:
        return np.array(self._returns)

    def trade_pnls(self, include_open: bool = True) -> list[float]:
        """Closed-trade PnLs, plus open positions marked at the current price."""
        pnls = list(self._closed_pnls)
        if include_open and self.state is not None:
            for i in np.flatnonzero(self.state.holdings):
                pnls.append(float(self.state.holdings[i] * (self.state.prices[i] - self._cost_basis[i])))
        return pnls


Actor = Callable[[EnvState, np.ndarray], np.ndarray]


@dataclass
class EpisodeResult:
    window: tuple[int, int]
    h_max: int
    actions: np.ndarray
    fills: np.ndarray
    fees: np.ndarray
    cash: np.ndarray
    values: np.ndarray
    returns: np.ndarray
    rewards: np.ndarray
    benchmark: np.ndarray
    market: np.ndarray
    trade_pnls: list[float]
    total_fees: float
    total_notional: float
    start_value: float

    @property
    def equity(self) -> np.ndarray:
        """Portfolio value path including the starting value."""
        return np.concatenate([[self.start_value], self.values])

    def write_log(self, dest: IO[str]) -> None:
        n = self.actions.shape[1] if self.actions.ndim == 2 else 0
        writer = csv.writer(dest, lineterminator="\n")
        writer.writerow(["t", *(f"action_{i}" for i in range(n)), *(f"fill_{i}" for i in range(n)),
                         "fees", "cash", "value", "R_pt", "reward"])
        for t in range(self.returns.size):
            writer.writerow([t, *(repr(float(x)) for x in self.actions[t]), *(int(x) for x in self.fills[t]),
                             repr(float(self.fees[t])), repr(float(self.cash[t])), repr(float(self.values[t])),
                             repr(float(self.returns[t])), repr(float(self.rewards[t]))])


def run_episode(env: TradingEnv, actor: Actor, window: tuple[int, int] | None = None) -> EpisodeResult:
    """Roll ``actor`` through one full episode."""
    state = env.reset(window)
    start_value = state.portfolio_value
    rows: dict[str, list] = {k: [] for k in ("actions", "fills", "fees", "cash", "values", "returns", "rewards")}
    done = False
    while not done:
        action = actor(state, state.flatten())
        out = env.step(action)
        rows["actions"].append(out.info["action"])
        rows["fills"].append(out.info["fills"])
        rows["fees"].append(out.info["fee_total"])
        rows["cash"].append(out.state.cash)
        rows["values"].append(out.info["value"])
        rows["returns"].append(out.info["R_pt"])
        rows["rewards"].append(out.reward)
        state, done = out.state, out.done
    start, end = env.window
    return EpisodeResult(
        window=env.window,
        h_max=env.h_max,
        actions=np.array(rows["actions"]),
        fills=np.array(rows["fills"]),
        fees=np.array(rows["fees"]),
        cash=np.array(rows["cash"]),
        values=np.array(rows["values"]),
        returns=np.array(rows["returns"]),
        rewards=np.array(rows["rewards"]),
        benchmark=np.asarray(env.panel.benchmark.values[start:end]),
        market=np.asarray(env.panel.market.values[start:end]),
        trade_pnls=env.trade_pnls(),
        total_fees=env.total_fees,
        total_notional=env.total_notional,
        start_value=start_value,
    )


def with_config(env: TradingEnv, **changes) -> TradingEnv:
    """New environment on the same panel (and indicators) with config changes."""
    return TradingEnv(env.panel, replace(env.config, **changes), env.indicators)
