"""Command-line entry point: ``riskward {ingest,backtest,gradcheck,tune,train}``.

Settings come from defaults, then an optional TOML file (``--config``),
then command-line flags.  Exit codes: 0 ok, 1 config, 2 data, 3 runtime,
4 gradient check failed, 5 training diverged.
"""
from __future__ import annotations

import argparse
import contextlib
import datetime as dt
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import agent as agent_mod
from .env import EnvConfig, EnvError, TradingEnv, run_episode
from .indicators import IndicatorConfig, IndicatorError
from .marketdata import MarketDataError, PriceSeries, align, parse_ohlcv_csv, write_ohlcv_csv
from .metrics import MetricContext, MetricError, performance_summary
from .reward import RewardError, RewardWeights, composite_reward, finite_difference_check, reward_gradient
from .tuner import RewardAllocator, TunerError, pareto_frontier, simplex_grid, sweep, write_frontier_json, write_sweep_csv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME, EXIT_GRADCHECK, EXIT_DIVERGED = range(6)

DATA_DIR = Path(__file__).with_name("data")
SAMPLE_FILES = (DATA_DIR / "sample_assets.csv", DATA_DIR / "sample_index.csv")
SAMPLE_BENCHMARK = "SYNIDX"


class ConfigError(ValueError):
    pass


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    data: list[str] = field(default_factory=lambda: [str(p) for p in SAMPLE_FILES])
    tickers: list[str] | None = None
    benchmark: str = SAMPLE_BENCHMARK
    market: str | None = None
    date_from: str | None = None
    date_to: str | None = None
    weights: list[float] = field(default_factory=lambda: [0.25, 0.25, 0.25, 0.25])
    reward_mode: str = "potential"
    annualization: str = "approx"
    initial_amount: float = 1e6
    transaction_cost_rate: float = 0.001
    warm_up: int | None = None
    indicators: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    step: float = 0.1
    policy: str = "allocator"
    workers: int = 1
    agent: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        if len(self.weights) != 4:
            raise ConfigError("weights need 4 values")
        if self.date_from and self.date_to and self.date_from > self.date_to:
            raise ConfigError(f"empty date range {self.date_from}..{self.date_to}")
        missing = [p for p in self.data if not Path(p).exists()]
        if missing:
            raise ConfigError(f"data file not found: {missing[0]}")

    def config_hash(self) -> str:
        body = {k: v for k, v in asdict(self).items() if k != "out"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def reward_weights(self) -> RewardWeights:
        return RewardWeights.from_sequence(self.weights)

    def metric_context(self) -> MetricContext:
        return MetricContext(**self.metrics)

    def env_config(self) -> EnvConfig:
        ind = dict(self.indicators)
        for key in ("sma_windows", "names"):
            if key in ind and ind[key] is not None:
                ind[key] = tuple(ind[key])
        return EnvConfig(
            initial_amount=self.initial_amount,
            transaction_cost_rate=self.transaction_cost_rate,
            indicators=IndicatorConfig(**ind),
            weights=self.reward_weights(),
            reward_mode=self.reward_mode,
            annualization=self.annualization,
            metrics=self.metric_context(),
            warm_up=self.warm_up,
        )

    def ppo_config(self) -> agent_mod.PPOConfig:
        return agent_mod.PPOConfig(**{**self.agent, "seed": self.seed})


# TOML layout -> RunConfig field
_TOML_KEYS = {
    ("data", "paths"): "data",
    ("data", "tickers"): "tickers",
    ("data", "benchmark"): "benchmark",
    ("data", "market"): "market",
    ("data", "from"): "date_from",
    ("data", "to"): "date_to",
    ("env", "initial_amount"): "initial_amount",
    ("env", "transaction_cost_rate"): "transaction_cost_rate",
    ("env", "reward_mode"): "reward_mode",
    ("env", "annualization"): "annualization",
    ("env", "warm_up"): "warm_up",
    ("reward", "weights"): "weights",
    ("tuner", "step"): "step",
    ("tuner", "policy"): "policy",
    ("tuner", "workers"): "workers",
    ("run", "seed"): "seed",
    ("run", "out"): "out",
}
_TOML_TABLES = {"indicators": "indicators", "metrics": "metrics", "agent": "agent"}


def _read_toml(path: str) -> dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out: dict[str, Any] = {}
    base = Path(path).parent
    for section, body in doc.items():
        if section in _TOML_TABLES:
            out[_TOML_TABLES[section]] = dict(body)
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: unexpected top-level key {section!r}")
        for key, value in body.items():
            target = _TOML_KEYS.get((section, key))
            if target is None:
                raise ConfigError(f"{path}: unknown key [{section}] {key}")
            if target == "data":
                value = [str((base / p) if not Path(p).is_absolute() else p) for p in value]
            if target in ("date_from", "date_to") and isinstance(value, dt.date):
                value = value.isoformat()
            out[target] = value
    return out


def _flag_overrides(args: argparse.Namespace) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if args.data:
        out["data"] = [p for item in args.data for p in item.split(",") if p]
    if args.tickers:
        out["tickers"] = [t for t in args.tickers.split(",") if t]
    simple = {"benchmark": "benchmark", "market": "market", "date_from": "date_from",
              "date_to": "date_to", "step": "step", "seed": "seed", "mode": "reward_mode",
              "out": "out", "policy": "policy", "workers": "workers"}
    for attr, key in simple.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    agent = {key: getattr(args, key) for key in ("iterations", "learning_rate")
             if getattr(args, key, None) is not None}
    if agent:
        out["agent"] = agent
    if args.weights:
        try:
            out["weights"] = list(RewardWeights.parse(args.weights))
        except RewardError as exc:
            raise ConfigError(str(exc)) from None
    return out


def load_run_config(args: argparse.Namespace) -> RunConfig:
    merged: dict[str, Any] = {}
    if args.config:
        merged.update(_read_toml(args.config))
    flags = _flag_overrides(args)
    if "agent" in flags:
        flags["agent"] = {**merged.get("agent", {}), **flags["agent"]}
    merged.update(flags)
    known = {f.name for f in fields(RunConfig)}
    try:
        cfg = RunConfig(**{k: v for k, v in merged.items() if k in known})
        cfg.env_config()
        cfg.ppo_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out or os.environ.get("RISKWARD_OUT") or "riskward_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


@contextlib.contextmanager
def atomic_writer(path: Path, mode: str = "w"):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, mode, newline="" if "b" not in mode else None) as fh:
        yield fh
    os.replace(tmp, path)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def write_json(path: Path, payload: dict, cfg: RunConfig) -> None:
    body = {"config_hash": cfg.config_hash(), "seed": cfg.seed, **payload}
    with atomic_writer(path) as fh:
        json.dump(_json_safe(body), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- data


def load_series(paths: Sequence[str]) -> tuple[dict[str, PriceSeries], dict]:
    """Parse and merge files.  Identical duplicate rows are dropped and counted;
    conflicting duplicates are a data error."""
    merged: dict[str, dict] = {}
    dup = 0
    for path in paths:
        for ticker, series in parse_ohlcv_csv(path).items():
            bars = merged.setdefault(ticker, {})
            for bar in series.bars:
                if bar.date in bars:
                    if bars[bar.date] != bar:
                        raise MarketDataError(f"conflicting duplicate for ({ticker}, {bar.date})", path=path)
                    dup += 1
                    continue
                bars[bar.date] = bar
    out = {t: PriceSeries(t, tuple(b[d] for d in sorted(b))) for t, b in sorted(merged.items())}
    return out, {"duplicate_rows_dropped": dup}


def _restrict(series: PriceSeries, cfg: RunConfig) -> PriceSeries:
    lo = dt.date.fromisoformat(cfg.date_from) if cfg.date_from else dt.date.min
    hi = dt.date.fromisoformat(cfg.date_to) if cfg.date_to else dt.date.max
    return PriceSeries(series.ticker, tuple(b for b in series.bars if lo <= b.date <= hi))


def build_panel(cfg: RunConfig):
    series, _ = load_series(cfg.data)
    for name in (cfg.benchmark, cfg.market):
        if name is not None and name not in series:
            raise ConfigError(f"benchmark/market symbol {name!r} not found in data")
    tickers = cfg.tickers or [t for t in series if t not in (cfg.benchmark, cfg.market)]
    missing = [t for t in tickers if t not in series]
    if missing:
        raise ConfigError(f"tickers not found in data: {missing}")
    if not tickers:
        raise ConfigError("no asset tickers selected")
    assets = [_restrict(series[t], cfg) for t in tickers]
    bench = _restrict(series[cfg.benchmark], cfg)
    market = _restrict(series[cfg.market], cfg) if cfg.market else None
    if not len(bench) or any(not len(a) for a in assets):
        raise ConfigError("date range selects no data")
    return align(assets, bench, market)


# ---------------------------------------------------------------- commands


def cmd_ingest(cfg: RunConfig, args) -> int:
    series, stats = load_series(cfg.data)
    out = output_dir(cfg)
    index_symbols = {cfg.benchmark, cfg.market} - {None}
    summary = {
        "files": cfg.data,
        "tickers": [t for t in series if t not in index_symbols],
        "index": sorted(t for t in series if t in index_symbols),
        "series": {t: {"rows": len(s), "first": s.dates[0].isoformat(), "last": s.dates[-1].isoformat()}
                   for t, s in series.items()},
        **stats,
    }
    with atomic_writer(out / "prices.csv") as fh:
        write_ohlcv_csv(series.values(), fh)
    write_json(out / "ingest_summary.json", summary, cfg)
    for t, s in summary["series"].items():
        print(f"{t:>8}  {s['rows']:>6} rows  {s['first']} .. {s['last']}")
    print(f"{len(summary['tickers'])} tickers, index {summary['index']}, "
          f"{stats['duplicate_rows_dropped']} duplicate rows dropped")
    return EXIT_OK


def _actor_for(cfg: RunConfig, args, env: TradingEnv, window):
    if getattr(args, "checkpoint", None):
        policy, _ = agent_mod.load_checkpoint(args.checkpoint)
        if policy.d != env.dim or policy.n != env.stock_dim:
            raise ConfigError("checkpoint does not match environment dimensions")
        return policy.as_actor(), "checkpoint"
    if cfg.policy == "allocator":
        alloc = RewardAllocator(env.panel, (max(0, window[0] - 252), window[0]), env.config)
        return alloc.actor(env, env.config.weights), "allocator"
    return agent_mod.baseline_policy(cfg.policy, cfg.seed), cfg.policy


def cmd_backtest(cfg: RunConfig, args) -> int:
    panel = build_panel(cfg)
    env = TradingEnv(panel, cfg.env_config())
    window = env.default_window
    actor, name = _actor_for(cfg, args, env, window)
    ep = run_episode(env, actor, window)
    ctx = env.config.metrics
    metrics, flags = performance_summary(ep.returns, ep.market, ep.equity, ep.trade_pnls, ctx)
    out = output_dir(cfg)
    with atomic_writer(out / "episode_log.csv") as fh:
        ep.write_log(fh)
    meta = {"policy": name, "window": [panel.dates[window[0]].isoformat(), panel.dates[window[1]].isoformat()],
            "h_max": ep.h_max, "tickers": list(panel.tickers), "total_fees": ep.total_fees}
    write_json(out / "metrics.json", {**meta, "metrics": metrics, "flags": flags}, cfg)
    try:
        bd = composite_reward(ep.returns, ep.benchmark, ep.market, env.config.weights, ctx,
                              env.config.annualization)
        breakdown = bd.to_dict()
    except MetricError as exc:
        breakdown = {"total": math.nan, "error": str(exc)}
    write_json(out / "reward_breakdown.json", {**meta, "reward": breakdown}, cfg)
    print(json.dumps(_json_safe({"policy": name, **metrics, "composite_R": breakdown.get("total")}),
                     sort_keys=True))
    return EXIT_OK


def _wrong_sign_downside(*a, **k):
    g = reward_gradient(*a, **k)
    comps = dict(g.components)
    comps["sigma_down"] = -comps["sigma_down"]
    w = a[3]
    total = g.d_returns + 2 * w.w2 * g.components["sigma_down"]
    return replace(g, components=comps, d_returns=total)


FAULTS = {"downside-sign": _wrong_sign_downside}


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    weights = cfg.reward_weights()
    ctx = cfg.metric_context()
    rng = np.random.default_rng(cfg.seed)
    gradient_fn = FAULTS[args.inject_fault] if args.inject_fault else None
    results = []
    failures = []
    for i in range(args.instances):
        r = rng.normal(0.0005, 0.01, args.periods)
        tiny = np.abs(r) < 1e-6
        r[tiny] = np.copysign(1e-5, r[tiny] + 1e-300)
        b = rng.normal(0.0003, 0.01, args.periods)
        m = b + rng.normal(0.0, 0.005, args.periods)
        rep = finite_difference_check(r, b, m, weights, ctx, h=args.h, mode=cfg.annualization,
                                      tol=args.tol, gradient_fn=gradient_fn)
        entry = {"instance": i, "passed": rep.passed,
                 "checks": {n: {"max_rel_error": c.max_rel_error, "worst_index": c.worst_index,
                                "skipped": c.skipped, "note": c.note} for n, c in rep.checks.items()}}
        results.append(entry)
        for c in rep.failures:
            failures.append({"instance": i, "component": c.name, "coordinate": c.worst_index,
                             "max_rel_error": c.max_rel_error})
    skipped = sorted({n for e in results for n, c in e["checks"].items() if c["skipped"]})
    payload = {"passed": not failures, "tol": args.tol, "h": args.h, "instances": args.instances,
               "periods": args.periods, "weights": cfg.weights, "skipped_components": skipped,
               "failures": failures, "results": results}
    write_json(output_dir(cfg) / "gradcheck.json", payload, cfg)
    for name in skipped:
        print(f"{name}: skipped (zero weight)")
    if failures:
        worst = max(failures, key=lambda f: f["max_rel_error"])
        comps = sorted({f["component"] for f in failures})
        print(f"FAIL: {len(failures)} component checks failed ({', '.join(comps)}); worst "
              f"{worst['component']} at coordinate {worst['coordinate']} of instance {worst['instance']} "
              f"(rel err {worst['max_rel_error']:.3e})")
        return EXIT_GRADCHECK
    print(f"PASS: {args.instances} instances, max rel error < {args.tol:g}")
    return EXIT_OK


def cmd_tune(cfg: RunConfig, args) -> int:
    panel = build_panel(cfg)
    env = TradingEnv(panel, cfg.env_config())
    grid = simplex_grid(cfg.step)
    records = sweep(grid, env, cfg.policy, cfg.seed, workers=cfg.workers,
                    ppo_config=cfg.ppo_config() if cfg.policy == "trained" else None)
    frontier = pareto_frontier(records, args.return_key, args.risk_key)
    out = output_dir(cfg)
    with atomic_writer(out / "sweep.csv") as fh:
        write_sweep_csv(records, fh)
    buf = io.StringIO()
    write_frontier_json(records, frontier, buf, config_hash=cfg.config_hash(), seed=cfg.seed,
                        policy=cfg.policy, step=cfg.step)
    with atomic_writer(out / "frontier.json") as fh:
        fh.write(buf.getvalue())
    failed = sum(1 for r in records if any(f.startswith("error:") for f in r.flags))
    print(f"{len(records)} configurations, {len(frontier.indices)} on the frontier, {failed} failed")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    panel = build_panel(cfg)
    env = TradingEnv(panel, cfg.env_config())
    ppo = cfg.ppo_config()
    policy = None
    if args.resume:
        policy, _ = agent_mod.load_checkpoint(args.resume)
    out = output_dir(cfg)
    report = agent_mod.train(env, policy, ppo)
    with atomic_writer(out / "training.jsonl") as fh:
        report.write_jsonl(fh)
    agent_mod.save_checkpoint(out / "checkpoint.txt", report.policy, cfg.seed)
    write_json(out / "training_summary.json", report.summary(), cfg)
    print(f"final episode reward {report.final_reward:.6g}, tail slope {report.tail_slope:.3g}")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "backtest": cmd_backtest, "gradcheck": cmd_gradcheck,
            "tune": cmd_tune, "train": cmd_train}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--data", action="append", help="OHLCV CSV path(s), comma separated or repeated")
    common.add_argument("--tickers", help="comma separated asset tickers")
    common.add_argument("--benchmark")
    common.add_argument("--market")
    common.add_argument("--from", dest="date_from", help="first date (ISO)")
    common.add_argument("--to", dest="date_to", help="last date (ISO)")
    common.add_argument("--weights", help="w1,w2,w3,w4")
    common.add_argument("--step", type=float, help="simplex grid step")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=("terminal", "potential"), help="reward timing")
    common.add_argument("--out", help="output directory (default $RISKWARD_OUT or ./riskward_out)")

    parser = argparse.ArgumentParser(prog="riskward", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="parse, merge and summarize price files")
    bt = sub.add_parser("backtest", parents=[common], help="run one episode and report metrics")
    bt.add_argument("--policy", choices=("allocator", "buy_and_hold", "flat", "random"))
    bt.add_argument("--checkpoint", help="trained policy checkpoint to evaluate")
    gc = sub.add_parser("gradcheck", parents=[common], help="verify reward gradients numerically")
    gc.add_argument("--instances", type=int, default=100)
    gc.add_argument("--periods", type=int, default=50)
    gc.add_argument("--h", type=float, default=1e-7)
    gc.add_argument("--tol", type=float, default=1e-6)
    gc.add_argument("--inject-fault", choices=sorted(FAULTS), help=argparse.SUPPRESS)
    tu = sub.add_parser("tune", parents=[common], help="grid search over reward weights")
    tu.add_argument("--policy", choices=("allocator", "buy_and_hold", "flat", "random", "trained"))
    tu.add_argument("--workers", type=int)
    tu.add_argument("--return-key", default="ann_return")
    tu.add_argument("--risk-key", default="max_dd")
    tr = sub.add_parser("train", parents=[common], help="train the PPO agent")
    tr.add_argument("--resume", help="checkpoint to start from")
    tr.add_argument("--iterations", type=int)
    tr.add_argument("--learning-rate", type=float)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, RewardError, IndicatorError, TunerError, agent_mod.AgentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MarketDataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except agent_mod.DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (EnvError, MetricError, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
