"""Composite risk-aware reward, its decomposition and analytic gradients.

    R = w1 * R_ann - w2 * sigma_down + w3 * D_ret + w4 * T_ry

Gradients are taken with respect to the per-period portfolio returns with
beta held fixed (it is treated as a slowly varying estimate, not a function
of the current horizon).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .metrics import ComponentValues, MetricContext, _values, component_values

COMPONENTS = ("r_ann", "sigma_down", "d_ret", "t_ry")


class RewardError(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 0.25
    w2: float = 0.25
    w3: float = 0.25
    w4: float = 0.25

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise RewardError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "RewardWeights":
        if len(values) != 4:
            raise RewardError("need exactly 4 weights")
        return cls(*values)

    @classmethod
    def parse(cls, text: str) -> "RewardWeights":
        """Parse ``"w1,w2,w3,w4"``."""
        try:
            return cls.from_sequence([float(x) for x in text.split(",")])
        except ValueError as exc:
            raise RewardError(f"bad weights {text!r}: {exc}") from None

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3, self.w4])

    def __iter__(self):
        return iter((self.w1, self.w2, self.w3, self.w4))

    def normalized(self) -> "RewardWeights":
        s = math.fsum(self)
        if s == 0:
            raise RewardError("cannot normalize all-zero weights")
        return RewardWeights(*(w / s for w in self))


@dataclass(frozen=True)
class RewardBreakdown:
    components: ComponentValues
    weights: RewardWeights
    terms: tuple[float, float, float, float]
    total: float
    mode: str = "approx"

    @property
    def return_reward(self) -> float:
        return self.terms[0] + self.terms[3]

    @property
    def risk_penalty(self) -> float:
        return self.terms[1]

    @property
    def benchmark_bonus(self) -> float:
        return self.terms[2]

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "mode": self.mode,
            "weights": dict(zip(("w1", "w2", "w3", "w4"), self.weights)),
            "components": self.components.as_dict(),
            "terms": dict(zip(("annualized_return", "downside_penalty",
                               "differential_return", "treynor"), self.terms)),
            "decomposition": {
                "return_reward": self.return_reward,
                "risk_penalty": self.risk_penalty,
                "benchmark_bonus": self.benchmark_bonus,
            },
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _weighted(w: float, value: float) -> float:
    # a zero weight switches a term off even when the component is undefined
    return 0.0 if w == 0.0 else w * value


def composite_reward(portfolio, benchmark, market, weights: RewardWeights,
                     ctx: MetricContext | None = None, mode: str = "approx",
                     beta: float | None = None) -> RewardBreakdown:
    """Evaluate the composite reward over one horizon.

    ``beta`` pins the clamped beta (used for gradient checks and shaped
    rewards); otherwise it is estimated against ``market``.
    """
    ctx = ctx or MetricContext()
    need_beta = weights.w3 > 0 or weights.w4 > 0
    comp = component_values(portfolio, benchmark, market, ctx, mode,
                            beta_override=beta, need_beta=need_beta)
    terms = (
        _weighted(weights.w1, comp.r_ann),
        -_weighted(weights.w2, comp.sigma_down),
        _weighted(weights.w3, comp.d_ret),
        _weighted(weights.w4, comp.t_ry),
    )
    return RewardBreakdown(comp, weights, terms, math.fsum(terms), mode)


def decompose(breakdown: RewardBreakdown) -> tuple[float, float, float]:
    """Split into (return_reward, risk_penalty, benchmark_bonus)."""
    return breakdown.return_reward, breakdown.risk_penalty, breakdown.benchmark_bonus


def reward_bound(weights: RewardWeights, ctx: MetricContext | None = None) -> float:
    """Upper bound on |R| for guarded inputs (|R_ann| <= r_max, clamped beta)."""
    ctx = ctx or MetricContext()
    r, b = ctx.r_max, ctx.beta_min
    return (weights.w1 * r + weights.w2 * r + weights.w3 * 2 * r / b
            + weights.w4 * ctx.periods_per_year * r / b)


@dataclass(frozen=True)
class RewardGradient:
    """Partials of R with respect to each period's portfolio return.

    ``components`` holds the unweighted per-period gradient of each
    component; ``d_returns`` is their weighted combination.
    """

    d_returns: np.ndarray
    components: dict[str, np.ndarray] = field(repr=False)
    d_mu: float
    d_sigma_down: float
    d_mu_b: float
    kink_mask: np.ndarray
    beta_clamped: float


def component_gradients(returns, comp: ComponentValues, ctx: MetricContext,
                        mode: str = "approx") -> tuple[dict[str, np.ndarray], np.ndarray]:
    r = _values(returns)
    T = r.size
    kink = r == 0.0

    if "r_ann_clipped" in comp.flags:
        g_ann = np.zeros(T)
    elif mode == "approx":
        g_ann = np.full(T, ctx.periods_per_year / T)
    else:
        growth = math.exp(math.fsum(np.log1p(r)) * ctx.periods_per_year / T)
        g_ann = ctx.periods_per_year / T * growth / (1.0 + r)

    if comp.sigma_down > 0:
        g_sigma = np.where(r < 0, r / (T * comp.sigma_down), 0.0)
    else:
        g_sigma = np.zeros(T)

    beta = comp.beta_clamped
    g_dret = np.full(T, 1.0 / (beta * T))
    g_try = g_ann / beta
    return {"r_ann": g_ann, "sigma_down": g_sigma, "d_ret": g_dret, "t_ry": g_try}, kink


def reward_gradient(returns, benchmark, market, weights: RewardWeights,
                    ctx: MetricContext | None = None, mode: str = "approx",
                    beta: float | None = None) -> RewardGradient:
    ctx = ctx or MetricContext()
    comp = component_values(returns, benchmark, market, ctx, mode, beta_override=beta)
    grads, kink = component_gradients(returns, comp, ctx, mode)
    w = weights
    total = (w.w1 * grads["r_ann"] - w.w2 * grads["sigma_down"]
             + w.w3 * grads["d_ret"] + w.w4 * grads["t_ry"])
    b = comp.beta_clamped
    ann_scale = 0.0 if "r_ann_clipped" in comp.flags else ctx.periods_per_year
    return RewardGradient(
        d_returns=total,
        components=grads,
        d_mu=w.w1 * ann_scale + w.w3 / b + w.w4 * ann_scale / b,
        d_sigma_down=-w.w2,
        d_mu_b=-w.w3 / b,
        kink_mask=kink,
        beta_clamped=b,
    )


@dataclass(frozen=True)
class ComponentCheck:
    name: str
    max_rel_error: float
    worst_index: int
    skipped: bool = False
    note: str = ""


@dataclass(frozen=True)
class FDReport:
    passed: bool
    tol: float
    h: float
    checks: dict[str, ComponentCheck]
    kink_mask: np.ndarray = field(repr=False)

    @property
    def failures(self) -> list[ComponentCheck]:
        return [c for c in self.checks.values() if not c.skipped and not c.max_rel_error < self.tol]

    def summary(self) -> str:
        lines = []
        for c in self.checks.values():
            if c.skipped:
                lines.append(f"{c.name:>10}: skipped ({c.note})")
            else:
                status = "ok" if c.max_rel_error < self.tol else "FAIL"
                lines.append(f"{c.name:>10}: max rel err {c.max_rel_error:.3e} at t={c.worst_index} [{status}]")
        return "\n".join(lines)


def _rel_err(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.abs(a), np.abs(n))
    diff = np.abs(a - n)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(diff == 0, 0.0, diff / np.maximum(scale, 1e-300))


GradientFn = Callable[..., RewardGradient]


def finite_difference_check(returns, benchmark, market, weights: RewardWeights,
                            ctx: MetricContext | None = None, h: float = 1e-7,
                            mode: str = "approx", tol: float = 1e-6,
                            gradient_fn: GradientFn | None = None) -> FDReport:
    """Compare analytic gradients with central differences, per component.

    Beta is frozen at its value for the unperturbed series.  Coordinates with
    a zero return are kinks of the downside hinge and are left out.
    Components with zero weight are skipped and noted.
    """
    ctx = ctx or MetricContext()
    r = np.array(_values(returns), dtype=float)
    gradient_fn = gradient_fn or reward_gradient
    grad = gradient_fn(r, benchmark, market, weights, ctx, mode)
    beta = grad.beta_clamped
    T = r.size
    active = ~grad.kink_mask

    numeric = {name: np.zeros(T) for name in (*COMPONENTS, "total")}
    for t in np.flatnonzero(active):
        up, dn = r.copy(), r.copy()
        up[t] += h
        dn[t] -= h
        step = up[t] - dn[t]
        bu = composite_reward(up, benchmark, market, weights, ctx, mode, beta=beta)
        bd = composite_reward(dn, benchmark, market, weights, ctx, mode, beta=beta)
        for name in COMPONENTS:
            numeric[name][t] = (getattr(bu.components, name) - getattr(bd.components, name)) / step
        numeric["total"][t] = (bu.total - bd.total) / step

    analytic = dict(grad.components)
    analytic["total"] = grad.d_returns
    weight_of = dict(zip(COMPONENTS, weights))
    checks: dict[str, ComponentCheck] = {}
    for name in (*COMPONENTS, "total"):
        if name != "total" and weight_of[name] == 0:
            checks[name] = ComponentCheck(name, 0.0, -1, skipped=True, note="zero weight")
            continue
        if not active.any():
            checks[name] = ComponentCheck(name, 0.0, -1, skipped=True, note="all coordinates at kinks")
            continue
        err = np.where(active, _rel_err(analytic[name], numeric[name]), 0.0)
        worst = int(np.argmax(err))
        checks[name] = ComponentCheck(name, float(err[worst]), worst)
    passed = all(c.skipped or c.max_rel_error < tol for c in checks.values())
    return FDReport(passed, tol, h, checks, grad.kink_mask)
