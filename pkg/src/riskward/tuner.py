"""Grid search over reward weights on the probability simplex.

Each weight vector is backtested in the trading environment and scored on
the evaluation metrics; the non-dominated (return up, risk down) records
form the risk-return frontier.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import product
from typing import IO, Iterable, Sequence

import numpy as np

from .agent import PPOConfig, baseline_policy, train
from .env import EnvConfig, TradingEnv, run_episode
from .indicators import IndicatorSet
from .marketdata import AlignedPanel
from .metrics import MetricError, performance_summary
from .reward import RewardWeights, composite_reward

SWEEP_COLUMNS = ("w1", "w2", "w3", "w4", "ann_return", "max_dd", "sharpe", "sortino",
                 "beta", "win_rate", "composite_R", "flags")
METRIC_KEYS = SWEEP_COLUMNS[4:11]
POLICY_SOURCES = ("allocator", "buy_and_hold", "flat", "random", "trained")


class TunerError(ValueError):
    pass


def _grid_divisions(step) -> int:
    frac = Fraction(str(step)) if isinstance(step, float) else Fraction(step)
    if frac <= 0 or frac > 1:
        raise TunerError(f"grid step must lie in (0, 1], got {step}")
    inv = 1 / frac
    if inv.denominator != 1:
        raise TunerError(f"1/step must be an integer, got step {step}")
    return int(inv)


def simplex_points(dim: int, divisions: int) -> list[tuple[Fraction, ...]]:
    """All nonnegative ``dim``-vectors of multiples of ``1/divisions`` summing to 1, lexicographic."""
    pts = []
    for head in product(range(divisions + 1), repeat=dim - 1):
        rest = divisions - sum(head)
        if rest >= 0:
            pts.append(tuple(Fraction(k, divisions) for k in (*head, rest)))
    return pts


@dataclass(frozen=True)
class SimplexGrid:
    step: Fraction
    rational: tuple[tuple[Fraction, ...], ...]

    @property
    def points(self) -> list[tuple[float, ...]]:
        return [tuple(float(x) for x in p) for p in self.rational]

    def weights(self) -> list[RewardWeights]:
        return [RewardWeights(*p) for p in self.points]

    def __len__(self) -> int:
        return len(self.rational)


def simplex_grid(step=Fraction(1, 10)) -> SimplexGrid:
    n = _grid_divisions(step)
    return SimplexGrid(Fraction(1, n), tuple(simplex_points(4, n)))


class RewardAllocator:
    """Deterministic static allocator that prefers what the reward prefers.

    Every long-only, fully invested mix on an asset-simplex grid is scored
    with the composite reward on returns observed *before* the episode
    (the fit window); the best mix is bought on the first step and held.
    Because the reward is linear in its weights, component values per mix
    are computed once and reused for every weight vector.
    """

    def __init__(self, panel: AlignedPanel, fit_window: tuple[int, int], config: EnvConfig,
                 step=Fraction(1, 10)):
        self.config = config
        lo, hi = fit_window
        self.mixes = np.array(simplex_points(panel.n_assets, _grid_divisions(step)), dtype=float)
        rets = panel.asset_returns[lo:hi]
        self.table = np.full((len(self.mixes), 4), np.nan)
        if hi - lo >= 2:
            bench = panel.benchmark.values[lo:hi]
            mkt = panel.market.values[lo:hi]
            for k, mix in enumerate(self.mixes):
                try:
                    c = composite_reward(rets @ mix, bench, mkt, RewardWeights(1, 1, 1, 1),
                                         config.metrics, config.annualization).components
                except MetricError:
                    continue
                self.table[k] = (c.r_ann, -c.sigma_down, c.d_ret, c.t_ry)

    def allocation(self, weights: RewardWeights) -> np.ndarray:
        w = weights.as_array()
        # drop zero-weight columns so undefined components cannot poison the score
        used = w > 0
        scores = self.table[:, used] @ w[used] if used.any() else np.zeros(len(self.mixes))
        if not np.isfinite(scores).any():
            return np.full(self.mixes.shape[1], 1.0 / self.mixes.shape[1])
        return self.mixes[int(np.nanargmax(scores))]

    def actor(self, env: TradingEnv, weights: RewardWeights):
        mix = self.allocation(weights)
        rate = self.config.transaction_cost_rate
        targets = None

        def act(state, obs):
            nonlocal targets
            if state.t == 0:
                targets = np.floor(mix * state.portfolio_value / (state.prices * (1.0 + rate)))
            gap = targets - state.holdings
            if env.h_max == 0:
                return np.zeros_like(gap)
            return np.clip(np.where(gap > 0, np.minimum(gap / env.h_max, 1.0), 0.0), 0.0, 1.0)

        return act


@dataclass
class TuneRecord:
    weights: RewardWeights
    metrics: dict[str, float]
    flags: list[str] = field(default_factory=list)
    seed: int = 0
    window: tuple[int, int] | None = None
    policy: str = "allocator"
    exposures: np.ndarray | None = field(default=None, repr=False)

    def row(self) -> list:
        return [*self.weights, *(self.metrics.get(k, math.nan) for k in METRIC_KEYS), ";".join(self.flags)]


def _failed_record(weights, seed, window, policy, exc: Exception) -> TuneRecord:
    return TuneRecord(weights, {k: math.nan for k in METRIC_KEYS},
                      [f"error:{type(exc).__name__}:{exc}"], seed, window, policy)


def evaluate_config(weights: RewardWeights, env: TradingEnv, policy: str = "allocator",
                    seed: int = 0, window: tuple[int, int] | None = None,
                    ppo_config: PPOConfig | None = None, allocator: RewardAllocator | None = None,
                    fit_periods: int = 252) -> TuneRecord:
    """Backtest one weight configuration.  Failures come back as flagged records.

    ``env`` supplies panel, indicators and base config; its reward weights
    are replaced by ``weights``.
    """
    window = window or env.default_window
    try:
        if policy not in POLICY_SOURCES:
            raise TunerError(f"unknown policy source {policy!r}")
        cfg = replace(env.config, weights=weights)
        run_env = TradingEnv(env.panel, cfg, env.indicators)
        if policy == "allocator":
            if allocator is None:
                allocator = RewardAllocator(env.panel, (max(0, window[0] - fit_periods), window[0]), cfg)
            actor = allocator.actor(run_env, weights)
        elif policy == "trained":
            ppo = replace(ppo_config or PPOConfig(), seed=seed, window=window)
            actor = train(run_env, config=ppo).policy.as_actor()
        else:
            actor = baseline_policy(policy, seed)
        ep = run_episode(run_env, actor, window)

        metrics, flags = performance_summary(ep.returns, ep.market, ep.equity, ep.trade_pnls,
                                             cfg.metrics, mode="exact")
        try:
            bd = composite_reward(ep.returns, ep.benchmark, ep.market, weights, cfg.metrics, cfg.annualization)
            metrics["composite_R"] = bd.total
            flags.extend(f for f in bd.components.flags if f not in flags)
        except MetricError as exc:
            metrics["composite_R"] = math.nan
            flags.append(f"composite_undefined:{exc}")
        final = run_env.state
        exposures = final.holdings * final.prices / final.portfolio_value
        return TuneRecord(weights, metrics, flags, seed, window, policy, exposures)
    except Exception as exc:  # noqa: BLE001 - a sweep must never abort on one configuration
        return _failed_record(weights, seed, window, policy, exc)


def sweep(weights: Iterable[RewardWeights] | SimplexGrid, env: TradingEnv, policy: str = "allocator",
          seed: int = 0, window: tuple[int, int] | None = None, workers: int = 1,
          ppo_config: PPOConfig | None = None, fit_periods: int = 252) -> list[TuneRecord]:
    """Evaluate every configuration; output order follows input order regardless of ``workers``."""
    configs = weights.weights() if isinstance(weights, SimplexGrid) else list(weights)
    window = window or env.default_window
    allocator = None
    if policy == "allocator":
        allocator = RewardAllocator(env.panel, (max(0, window[0] - fit_periods), window[0]), env.config)

    def one(w: RewardWeights) -> TuneRecord:
        return evaluate_config(w, env, policy, seed, window, ppo_config, allocator)

    if workers <= 1:
        return [one(w) for w in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, configs))


@dataclass(frozen=True)
class Frontier:
    records: tuple[TuneRecord, ...]
    dominated: tuple[bool, ...]
    indices: tuple[int, ...]
    return_key: str
    risk_key: str

    @property
    def members(self) -> list[TuneRecord]:
        return [self.records[i] for i in self.indices]


def _dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """``a`` dominates ``b``: no worse on both (return up, risk down), better on one."""
    return a[0] >= b[0] and a[1] <= b[1] and (a[0] > b[0] or a[1] < b[1])


def pareto_frontier(records: Sequence[TuneRecord], return_key: str = "ann_return",
                    risk_key: str = "max_dd") -> Frontier:
    """Non-dominated records; exact ties are all kept.  Records with NaN keys never qualify."""
    if not records:
        raise TunerError("no records")
    pts = np.array([[r.metrics.get(return_key, math.nan), r.metrics.get(risk_key, math.nan)]
                    for r in records], dtype=float)
    valid = ~np.isnan(pts).any(axis=1)
    order = sorted(np.flatnonzero(valid), key=lambda i: (-pts[i, 0], pts[i, 1]))
    dominated = np.ones(len(records), dtype=bool)
    best_risk = math.inf
    # sweep by decreasing return: a point survives iff its risk beats every strictly higher-return point
    k = 0
    while k < len(order):
        j = k
        group_ret = pts[order[k], 0]
        while j < len(order) and pts[order[j], 0] == group_ret:
            j += 1
        group = order[k:j]
        group_min = min(pts[i, 1] for i in group)
        for i in group:
            if pts[i, 1] == group_min and pts[i, 1] < best_risk:
                dominated[i] = False
        best_risk = min(best_risk, group_min)
        k = j
    frontier = sorted(np.flatnonzero(~dominated), key=lambda i: (pts[i, 1], -pts[i, 0]))
    return Frontier(tuple(records), tuple(bool(x) for x in dominated), tuple(int(i) for i in frontier),
                    return_key, risk_key)


def write_sweep_csv(records: Sequence[TuneRecord], dest: IO[str]) -> None:
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in records:
        writer.writerow([repr(float(x)) for x in r.row()[:-1]] + [r.row()[-1]])


def frontier_summary(records: Sequence[TuneRecord], frontier: Frontier, **meta) -> dict:
    def clean(x: float):
        return x if math.isfinite(x) else str(x)

    return {
        **meta,
        "n_configs": len(records),
        "return_key": frontier.return_key,
        "risk_key": frontier.risk_key,
        "frontier_indices": list(frontier.indices),
        "frontier": [
            {"index": i, "weights": list(records[i].weights),
             **{k: clean(records[i].metrics[k]) for k in METRIC_KEYS}}
            for i in frontier.indices
        ],
    }


def write_frontier_json(records: Sequence[TuneRecord], frontier: Frontier, dest: IO[str], **meta) -> None:
    json.dump(frontier_summary(records, frontier, **meta), dest, indent=2, sort_keys=True)
    dest.write("\n")
