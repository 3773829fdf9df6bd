"""OHLCV ingestion, calendar alignment and simple-return construction.

Input files use the header ``date,open,high,low,close,volume,ticker`` with
ISO-8601 dates.  Prices are assumed to be split/dividend adjusted already.
"""
from __future__ import annotations

import csv
import datetime as dt
import gzip
import io
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence, Union

import numpy as np

CSV_HEADER = ("date", "open", "high", "low", "close", "volume", "ticker")

Source = Union[str, os.PathLike, bytes, IO[bytes]]


class MarketDataError(ValueError):
    """Raised for malformed, inconsistent or insufficient price data."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f"{':' if where else 'line '}{line}"
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True)
class Bar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    volume: float
    ticker: str

    def __post_init__(self):
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise MarketDataError("nonpositive price")
        if self.volume < 0:
            raise MarketDataError("negative volume")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise MarketDataError("high/low inconsistent with open/close")


@dataclass(frozen=True)
class PriceSeries:
    ticker: str
    bars: tuple[Bar, ...]

    def __post_init__(self):
        dates = [b.date for b in self.bars]
        if any(d1 >= d2 for d1, d2 in zip(dates, dates[1:])):
            raise MarketDataError(f"{self.ticker}: dates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.bars)

    @property
    def dates(self) -> list[dt.date]:
        return [b.date for b in self.bars]

    def _field(self, name: str) -> np.ndarray:
        return np.array([getattr(b, name) for b in self.bars], dtype=float)

    @property
    def opens(self) -> np.ndarray:
        return self._field("open")

    @property
    def highs(self) -> np.ndarray:
        return self._field("high")

    @property
    def lows(self) -> np.ndarray:
        return self._field("low")

    @property
    def closes(self) -> np.ndarray:
        return self._field("close")

    @property
    def volumes(self) -> np.ndarray:
        return self._field("volume")

    def restrict(self, dates: Iterable[dt.date]) -> "PriceSeries":
        keep = set(dates)
        return PriceSeries(self.ticker, tuple(b for b in self.bars if b.date in keep))


@dataclass(frozen=True)
class ReturnSeries:
    """Per-period simple returns.  ``values`` is stored read-only."""

    values: np.ndarray
    dates: tuple[dt.date, ...] = ()

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise MarketDataError("return series needs at least one period")
        if np.any(arr <= -1.0):
            raise MarketDataError("return <= -1 implies a nonpositive price")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def T(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.T


@dataclass(frozen=True)
class AlignedPanel:
    """Assets, benchmark and market restricted to one shared calendar.

    ``dates`` are the price dates (``len(panel) + 1`` of them); every return
    series has ``len(panel)`` periods, period ``t`` running from ``dates[t]``
    to ``dates[t + 1]``.  Price matrices have shape ``(len(dates), n_assets)``.
    """

    dates: tuple[dt.date, ...]
    tickers: tuple[str, ...]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    assets: tuple[ReturnSeries, ...]
    benchmark: ReturnSeries
    market: ReturnSeries
    benchmark_close: np.ndarray = field(repr=False, default=None)
    market_close: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return self.benchmark.T

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    @property
    def asset_returns(self) -> np.ndarray:
        """``(T, n_assets)`` matrix of asset returns."""
        return np.column_stack([a.values for a in self.assets])


def _open_source(source: Source) -> tuple[bytes, str | None]:
    path = None
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        path = os.fspath(source)
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except FileNotFoundError:
            raise MarketDataError("no such file", path=path) from None
    else:
        raw = source.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw, path


def parse_ohlcv_csv(source: Source) -> dict[str, PriceSeries]:
    """Parse an OHLCV CSV (optionally gzip-compressed) into one series per ticker.

    Rows may arrive in any order; each ticker's bars are sorted by date.
    Returned mapping is ordered by ticker symbol.
    """
    raw, path = _open_source(source)
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise MarketDataError(f"not UTF-8 text ({exc})", path=path) from None
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise MarketDataError(f"expected header {','.join(CSV_HEADER)}", line=1, path=path)

    grouped: dict[str, dict[dt.date, Bar]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise MarketDataError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", lineno, path)
        try:
            date = dt.date.fromisoformat(row[0].strip())
            o, h, l, c, v = (float(x) for x in row[1:6])
        except ValueError as exc:
            raise MarketDataError(f"malformed row ({exc})", lineno, path) from None
        ticker = row[6].strip()
        if not ticker:
            raise MarketDataError("empty ticker", lineno, path)
        if not all(np.isfinite([o, h, l, c, v])):
            raise MarketDataError("non-finite value", lineno, path)
        try:
            bar = Bar(date, o, h, l, c, v, ticker)
        except MarketDataError as exc:
            raise MarketDataError(str(exc), lineno, path) from None
        per_ticker = grouped.setdefault(ticker, {})
        if date in per_ticker:
            raise MarketDataError(f"duplicate (ticker, date) ({ticker}, {date})", lineno, path)
        per_ticker[date] = bar

    return {
        t: PriceSeries(t, tuple(bars[d] for d in sorted(bars)))
        for t, bars in sorted(grouped.items())
    }


def write_ohlcv_csv(series: Iterable[PriceSeries], dest: IO[str]) -> None:
    """Write series in the canonical schema.  Floats use ``repr`` so re-parsing is exact."""
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for s in series:
        for b in s.bars:
            writer.writerow([b.date.isoformat(), repr(b.open), repr(b.high), repr(b.low),
                             repr(b.close), repr(b.volume), b.ticker])


def to_returns(prices: PriceSeries) -> ReturnSeries:
    """Simple returns ``close[t+1] / close[t] - 1``."""
    if len(prices) < 2:
        raise MarketDataError(f"{prices.ticker}: need at least 2 bars for returns")
    closes = prices.closes
    return ReturnSeries(closes[1:] / closes[:-1] - 1.0, tuple(prices.dates[1:]))


def align(
    assets: Sequence[PriceSeries] | Mapping[str, PriceSeries],
    benchmark: PriceSeries,
    market: PriceSeries | None = None,
) -> AlignedPanel:
    """Restrict assets, benchmark and market to their common dates.

    ``market`` defaults to ``benchmark``.  No forward filling is done: a date
    missing from any input is dropped everywhere.
    """
    if isinstance(assets, Mapping):
        assets = list(assets.values())
    if not assets:
        raise MarketDataError("need at least one asset")
    if market is None:
        market = benchmark
    common = set(benchmark.dates) & set(market.dates)
    for a in assets:
        common &= set(a.dates)
    if not common:
        raise MarketDataError("date intersection is empty")
    dates = tuple(sorted(common))
    if len(dates) < 2:
        raise MarketDataError("fewer than 2 common dates after alignment")

    restricted = [a.restrict(dates) for a in assets]
    bench = benchmark.restrict(dates)
    mkt = bench if market is benchmark else market.restrict(dates)

    def stack(name: str) -> np.ndarray:
        return np.column_stack([getattr(s, name) for s in restricted])

    return AlignedPanel(
        dates=dates,
        tickers=tuple(s.ticker for s in restricted),
        open=stack("opens"),
        high=stack("highs"),
        low=stack("lows"),
        close=stack("closes"),
        volume=stack("volumes"),
        assets=tuple(to_returns(s) for s in restricted),
        benchmark=to_returns(bench),
        market=to_returns(mkt),
        benchmark_close=bench.closes,
        market_close=mkt.closes,
    )


def panel_from_arrays(
    close: np.ndarray,
    benchmark_close: np.ndarray | None = None,
    market_close: np.ndarray | None = None,
    *,
    high: np.ndarray | None = None,
    low: np.ndarray | None = None,
    volume: np.ndarray | None = None,
    tickers: Sequence[str] | None = None,
    start: dt.date = dt.date(2020, 1, 1),
) -> AlignedPanel:
    """Build a panel straight from a ``(n_dates, n_assets)`` close matrix.

    Handy for synthetic experiments.  Open equals the previous close, and
    high/low default to the bar's max/min of open and close.  Dates are
    consecutive weekdays from ``start``.  A 1-D ``close`` is one asset.  Benchmark defaults to the
    equal-weight average of the asset closes, market to the benchmark.
    """
    close = np.asarray(close, dtype=float)
    if close.ndim == 1:
        close = close[:, None]
    if close.ndim != 2 or close.shape[0] < 2:
        raise MarketDataError("need a (n_dates >= 2, n_assets) close matrix")
    n_dates, n_assets = close.shape
    if np.any(close <= 0):
        raise MarketDataError("nonpositive price")
    opens = np.vstack([close[:1], close[:-1]])
    high = np.maximum(opens, close) if high is None else np.asarray(high, dtype=float)
    low = np.minimum(opens, close) if low is None else np.asarray(low, dtype=float)
    volume = np.full_like(close, 1e6) if volume is None else np.asarray(volume, dtype=float)
    if benchmark_close is None:
        benchmark_close = close.mean(axis=1)
    benchmark_close = np.asarray(benchmark_close, dtype=float)
    market_close = benchmark_close if market_close is None else np.asarray(market_close, dtype=float)
    tickers = tuple(tickers) if tickers is not None else tuple(f"A{i}" for i in range(n_assets))

    dates = []
    d = start
    while len(dates) < n_dates:
        if d.weekday() < 5:
            dates.append(d)
        d += dt.timedelta(days=1)
    dates = tuple(dates)

    def rets(c: np.ndarray) -> ReturnSeries:
        return ReturnSeries(c[1:] / c[:-1] - 1.0, dates[1:])

    return AlignedPanel(
        dates=dates,
        tickers=tickers,
        open=opens,
        high=high,
        low=low,
        close=close,
        volume=volume,
        assets=tuple(rets(close[:, i]) for i in range(n_assets)),
        benchmark=rets(benchmark_close),
        market=rets(market_close),
        benchmark_close=benchmark_close,
        market_close=market_close,
    )
