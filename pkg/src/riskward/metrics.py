"""Reward components and evaluation metrics.

Return inputs are per-period simple returns (1-D arrays or ``ReturnSeries``).
Variance-like quantities use population (1/T) normalization throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .marketdata import ReturnSeries


class MetricError(ValueError):
    """Metric undefined for the given input (degenerate or invalid)."""


class ZeroVarianceError(MetricError):
    pass


@dataclass(frozen=True)
class MetricContext:
    risk_free_rate: float = 0.0
    periods_per_year: float = 252.0
    r_max: float = 3.0
    beta_min: float = 0.3
    beta_max: float = 3.0
    clip_annualized: bool = True

    def __post_init__(self):
        if self.periods_per_year <= 0:
            raise MetricError("periods_per_year must be > 0")
        if not 0 < self.beta_min <= self.beta_max:
            raise MetricError("need 0 < beta_min <= beta_max")
        if self.r_max <= 0:
            raise MetricError("r_max must be > 0")

    @property
    def rf_per_period(self) -> float:
        return self.risk_free_rate / self.periods_per_year


@dataclass(frozen=True)
class ComponentValues:
    r_ann: float
    sigma_down: float
    d_ret: float
    t_ry: float
    beta: float
    beta_clamped: float
    mu_p: float
    mu_b: float
    flags: tuple[str, ...] = field(default=())

    def as_dict(self) -> dict:
        return {
            "r_ann": self.r_ann,
            "sigma_down": self.sigma_down,
            "d_ret": self.d_ret,
            "t_ry": self.t_ry,
            "beta": self.beta,
            "beta_clamped": self.beta_clamped,
            "mu_p": self.mu_p,
            "mu_b": self.mu_b,
            "flags": list(self.flags),
        }


def _values(returns) -> np.ndarray:
    if isinstance(returns, ReturnSeries):
        return returns.values
    arr = np.asarray(returns, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise MetricError("expected a nonempty 1-D return series")
    return arr


def annualized_return(returns, ctx: MetricContext | None = None, mode: str = "exact") -> float:
    """Annualized return, geometric (``exact``) or linearized (``approx``)."""
    ctx = ctx or MetricContext()
    r = _values(returns)
    T = r.size
    if mode == "approx":
        return ctx.periods_per_year / T * math.fsum(r)
    if mode != "exact":
        raise MetricError(f"unknown annualization mode {mode!r}")
    if np.any(r <= -1.0):
        raise MetricError("exact annualization needs every return > -1")
    log_growth = math.fsum(np.log1p(r))
    return math.expm1(log_growth * ctx.periods_per_year / T)


def downside_deviation(returns) -> float:
    r = _values(returns)
    neg = np.minimum(r, 0.0)
    return math.sqrt(math.fsum(neg * neg) / r.size)


def clamp_beta(raw: float, ctx: MetricContext) -> float:
    """Clamp into ``[beta_min, beta_max]``; nonpositive betas map to ``beta_min``."""
    return min(max(raw, ctx.beta_min), ctx.beta_max)


def beta(portfolio, market, ctx: MetricContext | None = None) -> tuple[float, float]:
    """Return ``(raw_beta, clamped_beta)``."""
    ctx = ctx or MetricContext()
    p, m = _values(portfolio), _values(market)
    if p.size != m.size:
        raise MetricError("portfolio and market lengths differ")
    if p.size < 2:
        raise MetricError("beta needs at least 2 periods")
    dm = m - m.mean()
    var = math.fsum(dm * dm) / m.size
    if var <= 0.0:
        raise ZeroVarianceError("zero market variance")
    cov = math.fsum((p - p.mean()) * dm) / m.size
    raw = cov / var
    return raw, clamp_beta(raw, ctx)


def differential_return(portfolio, benchmark, beta_clamped: float) -> float:
    """Mean outperformance over the benchmark per unit of beta."""
    if beta_clamped <= 0:
        raise MetricError("beta must be positive")
    p, b = _values(portfolio), _values(benchmark)
    if p.size != b.size:
        raise MetricError("portfolio and benchmark lengths differ")
    return math.fsum(p - b) / (beta_clamped * p.size)


def treynor(r_ann: float, ctx: MetricContext | None, beta_clamped: float) -> float:
    if beta_clamped <= 0:
        raise MetricError("beta must be positive")
    ctx = ctx or MetricContext()
    return (r_ann - ctx.risk_free_rate) / beta_clamped


def sharpe(returns, ctx: MetricContext | None = None) -> float:
    ctx = ctx or MetricContext()
    r = _values(returns)
    if r.size < 2:
        raise MetricError("Sharpe needs at least 2 periods")
    sd = float(r.std())
    if sd == 0.0:
        raise ZeroVarianceError("zero volatility")
    return (float(r.mean()) - ctx.rf_per_period) / sd * math.sqrt(ctx.periods_per_year)


def sortino(returns, ctx: MetricContext | None = None) -> float:
    """Annualized Sortino ratio.

    With zero downside deviation the ratio is reported as ``+inf`` for a
    positive excess mean, ``-inf`` for a negative one and ``0.0`` when the
    excess mean is zero.  ``performance_summary`` flags these cases.
    """
    ctx = ctx or MetricContext()
    r = _values(returns)
    excess = float(r.mean()) - ctx.rf_per_period
    dd = downside_deviation(r)
    if dd == 0.0:
        return math.copysign(math.inf, excess) if excess != 0 else 0.0
    return excess / dd * math.sqrt(ctx.periods_per_year)


def max_drawdown(equity) -> float:
    e = np.asarray(equity, dtype=float)
    if e.ndim != 1 or e.size == 0:
        raise MetricError("expected a nonempty equity curve")
    if np.any(e <= 0):
        raise MetricError("equity values must be positive")
    peak = np.maximum.accumulate(e)
    return float(np.max((peak - e) / peak))


def win_rate(trade_pnls) -> float:
    """Fraction of trades with strictly positive PnL (break-even counts as a loss)."""
    pnl = np.asarray(trade_pnls, dtype=float)
    if pnl.size == 0:
        raise MetricError("no trades")
    return float(np.count_nonzero(pnl > 0)) / pnl.size


def component_values(portfolio, benchmark, market, ctx: MetricContext | None = None,
                     mode: str = "approx", beta_override: float | None = None,
                     need_beta: bool = True) -> ComponentValues:
    """All four reward components for one horizon.

    ``beta_override`` fixes the (already clamped) beta instead of estimating
    it.  With ``need_beta=False`` a zero-variance market does not raise; the
    beta-dependent components come back as NaN and are flagged.
    """
    ctx = ctx or MetricContext()
    p, b = _values(portfolio), _values(benchmark)
    flags: list[str] = []

    r_ann = annualized_return(p, ctx, mode)
    if ctx.clip_annualized and abs(r_ann) > ctx.r_max:
        r_ann = math.copysign(ctx.r_max, r_ann)
        flags.append("r_ann_clipped")
    sigma = downside_deviation(p)

    if beta_override is not None:
        raw = clamped = float(beta_override)
    else:
        try:
            raw, clamped = beta(p, market, ctx)
        except ZeroVarianceError:
            if need_beta:
                raise
            raw = clamped = math.nan
            flags.append("zero_market_variance")
        else:
            if raw != clamped:
                flags.append("beta_clamped")
    if math.isnan(clamped):
        d_ret = t_ry = math.nan
    else:
        d_ret = differential_return(p, b, clamped)
        t_ry = treynor(r_ann, ctx, clamped)
    return ComponentValues(r_ann, sigma, d_ret, t_ry, raw, clamped,
                           float(np.mean(p)), float(np.mean(b)), tuple(flags))


def performance_summary(returns, market, equity, trade_pnls, ctx: MetricContext | None = None,
                        mode: str = "exact") -> tuple[dict[str, float], list[str]]:
    """Evaluation suite for one backtest.

    Returns ``(metrics, flags)``.  Undefined metrics become NaN (or the
    Sortino infinity sentinel) and get a flag instead of raising.
    """
    ctx = ctx or MetricContext()
    r = _values(returns)
    out: dict[str, float] = {}
    flags: list[str] = []

    out["ann_return"] = annualized_return(r, ctx, mode)
    out["max_dd"] = max_drawdown(equity)
    try:
        out["sharpe"] = sharpe(r, ctx)
    except MetricError:
        out["sharpe"] = math.nan
        flags.append("sharpe_undefined")
    out["sortino"] = sortino(r, ctx)
    if downside_deviation(r) == 0.0:
        flags.append("sortino_zero_downside")
    try:
        out["beta"] = beta(r, market, ctx)[0]
    except MetricError:
        out["beta"] = math.nan
        flags.append("beta_undefined")
    try:
        out["win_rate"] = win_rate(trade_pnls)
    except MetricError:
        out["win_rate"] = math.nan
        flags.append("no_trades")
    return out, flags
