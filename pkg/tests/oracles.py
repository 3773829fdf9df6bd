"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports the package under test; each function restates a
definition in the most literal form available.
"""
import math
import statistics
from itertools import product


def simple_returns(closes):
    return [closes[i + 1] / closes[i] - 1.0 for i in range(len(closes) - 1)]


def annualized_exact(returns, periods=252):
    growth = 1.0
    for r in returns:
        growth *= 1.0 + r
    return growth ** (periods / len(returns)) - 1.0


def annualized_approx(returns, periods=252):
    return periods / len(returns) * sum(returns)


def downside(returns):
    total = 0.0
    for r in returns:
        if r < 0:
            total += r * r
    return math.sqrt(total / len(returns))


def beta_raw(p, m):
    n = len(p)
    mp = sum(p) / n
    mm = sum(m) / n
    cov = sum((p[i] - mp) * (m[i] - mm) for i in range(n)) / n
    var = sum((m[i] - mm) ** 2 for i in range(n)) / n
    return cov / var


def beta_clamped(p, m, lo=0.3, hi=3.0):
    return min(hi, max(lo, beta_raw(p, m)))


def differential(p, b, beta):
    return sum(p[i] - b[i] for i in range(len(p))) / (beta * len(p))


def composite(p, b, m, w, rf=0.0, r_max=3.0, mode="approx"):
    r_ann = annualized_approx(p) if mode == "approx" else annualized_exact(p)
    r_ann = max(-r_max, min(r_max, r_ann))
    beta = beta_clamped(p, m)
    parts = [w[0] * r_ann, -w[1] * downside(p), w[2] * differential(p, b, beta), w[3] * (r_ann - rf) / beta]
    return sum(parts)


def max_drawdown(equity):
    worst = 0.0
    for j in range(len(equity)):
        for i in range(j + 1):
            worst = max(worst, (equity[i] - equity[j]) / equity[i])
    return worst


def win_rate(pnls):
    wins = 0
    for x in pnls:
        if x > 0:
            wins += 1
    return wins / len(pnls)


def gae(rewards, values, gamma, lam, last_value=0.0):
    n = len(rewards)
    v = list(values) + [last_value]
    deltas = [rewards[t] + gamma * v[t + 1] - v[t] for t in range(n)]
    out = []
    for t in range(n):
        out.append(sum((gamma * lam) ** k * deltas[t + k] for k in range(n - t)))
    return out


def non_dominated(points):
    """Indices of (return, risk) pairs not dominated by any other pair."""
    keep = []
    for i, (ri, ki) in enumerate(points):
        beaten = False
        for j, (rj, kj) in enumerate(points):
            if j != i and rj >= ri and kj <= ki and (rj > ri or kj < ki):
                beaten = True
                break
        if not beaten:
            keep.append(i)
    return keep


def simplex_count(divisions, dim=4):
    return sum(1 for pt in product(range(divisions + 1), repeat=dim) if sum(pt) == divisions)


def ema(values, span):
    alpha = 2.0 / (span + 1.0)
    out = [values[0]]
    for x in values[1:]:
        out.append(alpha * x + (1 - alpha) * out[-1])
    return out


def bollinger_at(closes, t, window, k):
    chunk = closes[t - window + 1:t + 1]
    mid = statistics.fmean(chunk)
    sd = statistics.pstdev(chunk)
    return mid + k * sd, mid - k * sd


def rsi_wilder(closes, window):
    """RSI at every index from ``window`` on (earlier entries are None)."""
    diffs = [closes[i] - closes[i - 1] for i in range(1, len(closes))]
    gains = [max(d, 0.0) for d in diffs]
    losses = [max(-d, 0.0) for d in diffs]
    out = [None] * len(closes)
    g = sum(gains[:window]) / window
    lo = sum(losses[:window]) / window
    for t in range(window, len(closes)):
        if t > window:
            g = (g * (window - 1) + gains[t - 1]) / window
            lo = (lo * (window - 1) + losses[t - 1]) / window
        if lo == 0:
            out[t] = 50.0 if g == 0 else 100.0
        else:
            out[t] = 100.0 - 100.0 / (1.0 + g / lo)
    return out


def mahalanobis_2d(x, mu, cov):
    a, b = cov[0][0], cov[0][1]
    c, d = cov[1][0], cov[1][1]
    det = a * d - b * c
    inv = [[d / det, -b / det], [-c / det, a / det]]
    y = [x[0] - mu[0], x[1] - mu[1]]
    return sum(y[i] * inv[i][j] * y[j] for i in range(2) for j in range(2))
