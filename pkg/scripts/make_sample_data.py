"""Regenerate the bundled synthetic sample data under src/riskward/data/.

Five assets driven by one market factor plus idiosyncratic noise, and the
factor's own index (SYNIDX).  Deterministic for a fixed seed.
"""
import datetime as dt
import json
from pathlib import Path

import numpy as np

SEED = 20240101
N_DATES = 520
START = dt.date(2021, 1, 4)
TICKERS = ("ALPHA", "BRAVO", "CHARLIE", "DELTA", "ECHO")
INDEX = "SYNIDX"
OUT = Path(__file__).resolve().parents[1] / "src" / "riskward" / "data"


def weekdays(start, n):
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def ohlcv(rng, closes):
    opens = np.concatenate([[closes[0]], closes[:-1]]) * (1 + rng.normal(0, 0.002, closes.size))
    hi = np.maximum(opens, closes) * (1 + np.abs(rng.normal(0, 0.004, closes.size)))
    lo = np.minimum(opens, closes) * (1 - np.abs(rng.normal(0, 0.004, closes.size)))
    vol = np.round(rng.lognormal(14, 0.4, closes.size))
    r = lambda x: np.round(x, 4)
    o, h, l, c = r(opens), r(hi), r(lo), r(closes)
    return o, np.maximum.reduce([h, o, c]), np.minimum.reduce([l, o, c]), c, vol


def main():
    rng = np.random.default_rng(SEED)
    dates = weekdays(START, N_DATES)
    factor = rng.normal(0.0004, 0.01, N_DATES - 1)
    index = 4000.0 * np.concatenate([[1.0], np.cumprod(1 + factor)])
    betas = (1.4, 0.6, 1.0, 1.2, 0.8)
    drifts = (0.0006, 0.0002, 0.0003, 0.0001, 0.0004)
    idio = (0.018, 0.006, 0.01, 0.014, 0.008)
    starts = (150.0, 60.0, 240.0, 35.0, 95.0)

    rows = []
    manifest = {"seed": SEED, "files": {}}
    for tk, b, mu, s, p0 in zip(TICKERS, betas, drifts, idio, starts):
        ret = mu + b * (factor - 0.0004) + rng.normal(0, s, N_DATES - 1)
        closes = p0 * np.concatenate([[1.0], np.cumprod(1 + ret)])
        rows.append((tk, ohlcv(rng, closes)))
    index_rows = [(INDEX, ohlcv(rng, index))]

    for name, group in (("sample_assets.csv", rows), ("sample_index.csv", index_rows)):
        lines = ["date,open,high,low,close,volume,ticker"]
        entries = []
        for tk, (o, h, l, c, v) in group:
            for i, d in enumerate(dates):
                lines.append(f"{d.isoformat()},{float(o[i])!r},{float(h[i])!r},{float(l[i])!r},{float(c[i])!r},{int(v[i])},{tk}")
            entries.append({"ticker": tk, "first": dates[0].isoformat(), "last": dates[-1].isoformat(),
                            "rows": len(dates)})
        (OUT / name).write_text("\n".join(lines) + "\n")
        manifest["files"][name] = entries
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
