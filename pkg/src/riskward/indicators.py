"""Technical indicators for the environment state.

All per-asset functions return an array as long as their input.  Leading
entries without full history ("warm-up") are set to 0; ``warmup_length``
reports how many there are so callers can mask them instead of truncating.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .marketdata import AlignedPanel

# ``(x - mu)^T S^-1 (x - mu)`` is only evaluated when cond(S) stays below this.
_MAX_COND = 1e12
TURBULENCE_RIDGE = 1e-8


class IndicatorError(ValueError):
    """Bad indicator configuration or too little data."""


@dataclass(frozen=True)
class IndicatorConfig:
    macd_fast: int = 12
    macd_slow: int = 26
    boll_window: int = 20
    boll_k: float = 2.0
    rsi_window: int = 14
    cci_window: int = 14
    dmi_window: int = 14
    sma_windows: tuple[int, ...] = (30, 60)
    turbulence_lookback: int = 252
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        windows = [self.macd_slow, self.boll_window, self.rsi_window, self.cci_window,
                   self.dmi_window, self.turbulence_lookback, *self.sma_windows]
        if self.macd_fast < 1 or any(w < 2 for w in windows):
            raise IndicatorError("indicator windows must be >= 2")
        if self.macd_fast >= self.macd_slow:
            raise IndicatorError("MACD fast span must be shorter than slow span")
        if self.boll_k < 0:
            raise IndicatorError("Bollinger multiplier must be >= 0")
        if self.names is not None:
            unknown = set(self.names) - set(self.all_names)
            if unknown:
                raise IndicatorError(f"unknown indicator(s): {sorted(unknown)}")

    @property
    def all_names(self) -> tuple[str, ...]:
        return ("volume", "macd", "boll_ub", "boll_lb", "rsi", "cci", "dmi",
                *(f"sma{w}" for w in self.sma_windows), "turbulence")

    @property
    def feature_names(self) -> tuple[str, ...]:
        """Indicators that enter the state vector, in order."""
        return self.all_names if self.names is None else tuple(self.names)

    @property
    def indicator_count(self) -> int:
        return len(self.feature_names)

    def warmup_lengths(self) -> dict[str, int]:
        out = {
            "volume": 0,
            "macd": self.macd_slow - 1,
            "boll_ub": self.boll_window - 1,
            "boll_lb": self.boll_window - 1,
            "rsi": self.rsi_window,
            "cci": self.cci_window - 1,
            "dmi": 2 * self.dmi_window - 1,
            "turbulence": self.turbulence_lookback + 1,
        }
        out.update({f"sma{w}": w - 1 for w in self.sma_windows})
        return out

    @property
    def max_warmup(self) -> int:
        lengths = self.warmup_lengths()
        return max(lengths[n] for n in self.feature_names)


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise IndicatorError("expected a nonempty 1-D sequence")
    return arr


def ema(values, span: float) -> np.ndarray:
    """Exponential moving average, alpha = 2/(span+1), seeded with the first value."""
    x = _as_array(values)
    if span < 1:
        raise IndicatorError("span must be >= 1")
    alpha = 2.0 / (span + 1.0)
    out = np.empty_like(x)
    out[0] = x[0]
    for i in range(1, x.size):
        out[i] = alpha * x[i] + (1.0 - alpha) * out[i - 1]
    return out


def sma(values, window: int) -> np.ndarray:
    x = _as_array(values)
    if window > x.size:
        raise IndicatorError(f"window {window} longer than series ({x.size})")
    out = np.zeros_like(x)
    out[window - 1:] = sliding_window_view(x, window).mean(axis=1)
    return out


def macd(closes, fast: int = 12, slow: int = 26) -> np.ndarray:
    """MACD line, EMA_fast - EMA_slow (no signal line)."""
    if fast >= slow:
        raise IndicatorError("MACD fast span must be shorter than slow span")
    x = _as_array(closes)
    return ema(x, fast) - ema(x, slow)


def bollinger(closes, window: int = 20, k: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Rolling mean +/- k population standard deviations."""
    x = _as_array(closes)
    if window > x.size:
        raise IndicatorError(f"window {window} longer than series ({x.size})")
    win = sliding_window_view(x, window)
    mid = win.mean(axis=1)
    sd = win.std(axis=1)
    upper = np.zeros_like(x)
    lower = np.zeros_like(x)
    upper[window - 1:] = mid + k * sd
    lower[window - 1:] = mid - k * sd
    return upper, lower


def _wilder(values: np.ndarray, window: int, start: int) -> np.ndarray:
    """Wilder smoothing seeded by the simple mean of ``values[start:start+window]``."""
    out = np.zeros_like(values)
    seed = start + window - 1
    if seed >= values.size:
        return out
    out[seed] = values[start:start + window].mean()
    for i in range(seed + 1, values.size):
        out[i] = (out[i - 1] * (window - 1) + values[i]) / window
    return out


def rsi(closes, window: int = 14) -> np.ndarray:
    """Wilder RSI.  Zero average loss gives 100; a flat window gives 50."""
    x = _as_array(closes)
    if x.size < window + 1:
        raise IndicatorError(f"RSI needs at least {window + 1} closes")
    delta = np.diff(x, prepend=x[0])
    gain = _wilder(np.maximum(delta, 0.0), window, 1)
    loss = _wilder(np.maximum(-delta, 0.0), window, 1)
    out = np.zeros_like(x)
    g, l = gain[window:], loss[window:]
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 100.0 - 100.0 / (1.0 + g / l)
    val = np.where(l == 0.0, np.where(g == 0.0, 50.0, 100.0), val)
    out[window:] = val
    return out


def cci(high, low, close, window: int = 14) -> np.ndarray:
    """Commodity channel index on the typical price; 0/0 maps to 0."""
    tp = (_as_array(high) + _as_array(low) + _as_array(close)) / 3.0
    if window > tp.size:
        raise IndicatorError(f"window {window} longer than series ({tp.size})")
    win = sliding_window_view(tp, window)
    mean = win.mean(axis=1)
    mad = np.abs(win - mean[:, None]).mean(axis=1)
    dev = tp[window - 1:] - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(mad > 0, dev / (0.015 * mad), 0.0)
    out = np.zeros_like(tp)
    out[window - 1:] = val
    return out


def adx(high, low, close, window: int = 14) -> np.ndarray:
    """Wilder ADX built from +DI/-DI.  Flat prices give 0."""
    h, l, c = _as_array(high), _as_array(low), _as_array(close)
    n = c.size
    if n < 2 * window:
        raise IndicatorError(f"ADX needs at least {2 * window} bars")
    up = np.zeros(n)
    down = np.zeros(n)
    tr = np.zeros(n)
    up_move = h[1:] - h[:-1]
    down_move = l[:-1] - l[1:]
    up[1:] = np.where((up_move > down_move) & (up_move > 0), up_move, 0.0)
    down[1:] = np.where((down_move > up_move) & (down_move > 0), down_move, 0.0)
    tr[1:] = np.maximum.reduce([h[1:] - l[1:], np.abs(h[1:] - c[:-1]), np.abs(l[1:] - c[:-1])])

    atr = _wilder(tr, window, 1)
    plus = _wilder(up, window, 1)
    minus = _wilder(down, window, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pdi = np.where(atr > 0, 100.0 * plus / atr, 0.0)
        mdi = np.where(atr > 0, 100.0 * minus / atr, 0.0)
        s = pdi + mdi
        dx = np.where(s > 0, 100.0 * np.abs(pdi - mdi) / s, 0.0)
    return _wilder(dx, window, window)


def mahalanobis_sq(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """``(x - mean)^T cov^-1 (x - mean)``; ridge fallback, then 0 if still singular."""
    cov = np.atleast_2d(cov)
    delta = np.atleast_1d(x - mean)
    for ridge in (0.0, TURBULENCE_RIDGE):
        m = cov + ridge * np.eye(cov.shape[0])
        if np.linalg.cond(m) < _MAX_COND:
            return float(max(0.0, delta @ np.linalg.solve(m, delta)))
    return 0.0


def turbulence(returns: np.ndarray, lookback: int = 252) -> np.ndarray:
    """Turbulence index per price date.

    ``returns`` is the ``(T, n_assets)`` return matrix of a panel; the output
    has ``T + 1`` entries aligned with the price dates.  Entry ``i`` measures
    the return vector ending on date ``i`` against the mean and (population)
    covariance of the ``lookback`` preceding return vectors.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    out = np.zeros(r.shape[0] + 1)
    for i in range(lookback + 1, r.shape[0] + 1):
        hist = r[i - 1 - lookback:i - 1]
        mu = hist.mean(axis=0)
        cov = np.cov(hist, rowvar=False, bias=True)
        out[i] = mahalanobis_sq(r[i - 1], mu, cov)
    return out


@dataclass(frozen=True)
class IndicatorSet:
    """Per-date, per-asset indicator values for one panel.

    ``values[name]`` has shape ``(n_dates, n_assets)``; ``warmup[i]`` is True
    while any state indicator still lacks history on date ``i``.
    """

    dates: tuple
    tickers: tuple[str, ...]
    names: tuple[str, ...]
    values: dict[str, np.ndarray] = field(repr=False)
    warmup: np.ndarray = field(repr=False)

    @property
    def first_valid(self) -> int:
        idx = np.flatnonzero(~self.warmup)
        return int(idx[0]) if idx.size else len(self.dates)

    def feature_block(self, t: int) -> np.ndarray:
        """State features on date ``t``: indicator-major, asset-minor."""
        return np.concatenate([self.values[n][t] for n in self.names])

    def write_long_csv(self, dest: IO[str], names: Sequence[str] | None = None) -> None:
        names = list(names or self.names)
        writer = csv.writer(dest, lineterminator="\n")
        writer.writerow(["date", "ticker", *names, "warmup"])
        for i, d in enumerate(self.dates):
            for j, tk in enumerate(self.tickers):
                writer.writerow([d.isoformat(), tk, *(repr(float(self.values[n][i, j])) for n in names),
                                 int(self.warmup[i])])


def extended_indicators(panel: AlignedPanel, config: IndicatorConfig | None = None) -> IndicatorSet:
    """Compute every configured indicator for every asset of ``panel``."""
    cfg = config or IndicatorConfig()
    n_dates = len(panel.dates)
    lengths = cfg.warmup_lengths()
    need = max(lengths[n] for n in cfg.all_names if n != "turbulence") + 1
    if n_dates < need:
        raise IndicatorError(f"panel has {n_dates} dates, indicators need at least {need}")

    cols: dict[str, list[np.ndarray]] = {n: [] for n in cfg.all_names}
    for j in range(panel.n_assets):
        h, l, c = panel.high[:, j], panel.low[:, j], panel.close[:, j]
        cols["volume"].append(panel.volume[:, j])
        cols["macd"].append(macd(c, cfg.macd_fast, cfg.macd_slow))
        ub, lb = bollinger(c, cfg.boll_window, cfg.boll_k)
        cols["boll_ub"].append(ub)
        cols["boll_lb"].append(lb)
        cols["rsi"].append(rsi(c, cfg.rsi_window))
        cols["cci"].append(cci(h, l, c, cfg.cci_window))
        cols["dmi"].append(adx(h, l, c, cfg.dmi_window))
        for w in cfg.sma_windows:
            cols[f"sma{w}"].append(sma(c, w))
    values = {n: np.column_stack(v) for n, v in cols.items() if v}
    turb = turbulence(panel.asset_returns, cfg.turbulence_lookback)
    values["turbulence"] = np.repeat(turb[:, None], panel.n_assets, axis=1)

    warm = max(lengths[n] for n in cfg.feature_names) if cfg.feature_names else 0
    warmup = np.arange(n_dates) < warm
    for arr in values.values():
        arr.setflags(write=False)
    return IndicatorSet(tuple(panel.dates), tuple(panel.tickers), cfg.feature_names, values, warmup)
