"""Seeded synthetic price panels for experiments, demos and tests."""
from __future__ import annotations

import numpy as np

from .marketdata import AlignedPanel, panel_from_arrays


def gbm_closes(n_dates: int, drift, vol, seed: int | None = 0, start_price=100.0,
               corr: np.ndarray | None = None) -> np.ndarray:
    """Geometric random-walk closes, shape ``(n_dates, n_assets)``.

    ``drift`` and ``vol`` are per-period (scalars or one value per asset).
    """
    rng = np.random.default_rng(seed)
    drift = np.atleast_1d(np.asarray(drift, dtype=float))
    vol = np.atleast_1d(np.asarray(vol, dtype=float))
    n = max(drift.size, vol.size, np.atleast_1d(start_price).size)
    drift, vol = np.broadcast_to(drift, n), np.broadcast_to(vol, n)
    shocks = rng.standard_normal((n_dates - 1, n))
    if corr is not None:
        shocks = shocks @ np.linalg.cholesky(corr).T
    rets = np.exp(drift - 0.5 * vol ** 2 + vol * shocks) - 1.0
    growth = np.vstack([np.ones(n), np.cumprod(1.0 + rets, axis=0)])
    return growth * np.broadcast_to(np.asarray(start_price, dtype=float), n)


def uptrend_flat_panel(n_dates: int = 320, drift: float = 0.002, vol: float = 0.01,
                       seed: int = 0) -> AlignedPanel:
    """Two assets: a noisy uptrend and a constant price.

    The uptrend asset doubles as benchmark and market.
    """
    up = gbm_closes(n_dates, drift, vol, seed)[:, 0]
    closes = np.column_stack([up, np.full(n_dates, 50.0)])
    return panel_from_arrays(closes, benchmark_close=up, tickers=("UP", "FLAT"))


def random_panel(n_dates: int, n_assets: int, seed: int = 0, drift=0.0003, vol=0.015) -> AlignedPanel:
    """Independent random walks with an equal-weight index as benchmark and market."""
    rng = np.random.default_rng(seed)
    start = rng.uniform(20.0, 300.0, n_assets)
    closes = gbm_closes(n_dates, drift, vol, rng.integers(2**32), start)
    return panel_from_arrays(closes)
