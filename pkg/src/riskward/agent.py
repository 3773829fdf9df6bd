"""Small-scale PPO with a linear tanh-Gaussian policy, plus baseline actors.

The policy maps a standardized state ``z`` to pre-squash means ``W z + b``
with a learned per-asset log standard deviation; actions are ``tanh`` of a
Gaussian draw.  Gradients of the clipped surrogate are computed by hand.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import IO, Callable

import numpy as np

from .env import Actor, EnvState, TradingEnv, run_episode

_LOG_2PI = math.log(2.0 * math.pi)


class AgentError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite objective or parameter vector."""


def ppo_clip_objective(ratio, advantage, epsilon: float = 0.2):
    """``min(r A, clip(r, 1 - eps, 1 + eps) A)``; works elementwise on arrays."""
    if not 0 < epsilon < 1:
        raise AgentError("epsilon must lie in (0, 1)")
    r = np.asarray(ratio, dtype=float)
    if np.any(r <= 0):
        raise AgentError("probability ratio must be positive")
    a = np.asarray(advantage, dtype=float)
    out = np.minimum(r * a, np.clip(r, 1 - epsilon, 1 + epsilon) * a)
    return float(out) if out.ndim == 0 else out


def ppo_clip_gradient(ratio, advantage, epsilon: float = 0.2):
    """Derivative of :func:`ppo_clip_objective` with respect to the ratio.

    Zero where the clipped branch is the active minimum, ``A`` elsewhere.
    """
    r = np.asarray(ratio, dtype=float)
    a = np.asarray(advantage, dtype=float)
    flat = ((a > 0) & (r > 1 + epsilon)) | ((a < 0) & (r < 1 - epsilon))
    out = np.where(flat, 0.0, a)
    return float(out) if out.ndim == 0 else out


def advantages(rewards, values, gamma: float = 0.99, lam: float = 0.95,
               last_value: float = 0.0) -> np.ndarray:
    """Generalized advantage estimates for one episode.

    ``values[t]`` estimates V(s_t); ``last_value`` is V after the final step
    (0 for a terminal state).
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.shape != v.shape:
        raise AgentError("rewards and values must have equal length")
    if not (0 <= gamma <= 1 and 0 <= lam <= 1):
        raise AgentError("gamma and lambda must lie in [0, 1]")
    v_next = np.append(v[1:], last_value)
    delta = r + gamma * v_next - v
    out = np.zeros_like(r)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        out[t] = acc
    return out


@dataclass
class ObservationScaler:
    mean: np.ndarray
    std: np.ndarray
    clip: float = 10.0

    @classmethod
    def identity(cls, d: int) -> "ObservationScaler":
        return cls(np.zeros(d), np.ones(d))

    @classmethod
    def fit(cls, observations: np.ndarray) -> "ObservationScaler":
        obs = np.asarray(observations, dtype=float)
        mean = obs.mean(axis=0)
        std = obs.std(axis=0)
        std = np.where(std > 1e-8 * (np.abs(mean) + 1.0), std, 1.0)
        return cls(mean, std)

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return np.clip((obs - self.mean) / self.std, -self.clip, self.clip)


def _log_tanh_jacobian(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2) without cancellation
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class LinearPolicy:
    """Gaussian policy with linear mean, learned log-std and tanh squashing.

    Parameters are one flat vector laid out as ``[W (n x d), b (n), log_std (n)]``.
    """

    def __init__(self, d: int, stock_dim: int, params: np.ndarray | None = None,
                 scaler: ObservationScaler | None = None, init_log_std: float = -0.5):
        self.d = d
        self.n = stock_dim
        if params is None:
            params = np.zeros(self.n_params)
            params[-stock_dim:] = init_log_std
        params = np.asarray(params, dtype=float).copy()
        if params.size != self.n_params:
            raise AgentError(f"expected {self.n_params} parameters, got {params.size}")
        self.params = params
        self.scaler = scaler or ObservationScaler.identity(d)

    @property
    def n_params(self) -> int:
        return (self.d + 1) * self.n + self.n

    def unpack(self, params: np.ndarray | None = None):
        p = self.params if params is None else params
        nd = self.n * self.d
        W = p[:nd].reshape(self.n, self.d)
        b = p[nd:nd + self.n]
        log_std = p[nd + self.n:]
        return W, b, log_std

    def mean(self, z: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        W, b, _ = self.unpack(params)
        return z @ W.T + b

    def sample(self, obs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
        """Return ``(action, pre_squash, log_prob)`` for one raw observation."""
        z = self.scaler(obs)
        mu = self.mean(z)
        std = np.exp(self.unpack()[2])
        u = mu + std * rng.standard_normal(self.n)
        return np.tanh(u), u, float(self.log_prob(z[None, :], u[None, :])[0])

    def act(self, obs: np.ndarray) -> np.ndarray:
        """Deterministic action ``tanh(mean)``; always inside [-1, 1]."""
        return np.tanh(self.mean(self.scaler(obs)))

    def log_prob(self, z: np.ndarray, u: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        """Log-density of squashed actions ``tanh(u)`` given standardized states ``z``."""
        mu = self.mean(z, params)
        log_std = self.unpack(params)[2]
        x = (u - mu) / np.exp(log_std)
        gauss = -0.5 * x * x - log_std - 0.5 * _LOG_2PI
        return np.sum(gauss - _log_tanh_jacobian(u), axis=1)

    def grad_log_prob(self, z: np.ndarray, u: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        """Per-sample gradient of :meth:`log_prob`, shape ``(batch, n_params)``."""
        mu = self.mean(z, params)
        log_std = self.unpack(params)[2]
        var = np.exp(2.0 * log_std)
        d_mu = (u - mu) / var
        d_log_std = (u - mu) ** 2 / var - 1.0
        d_W = d_mu[:, :, None] * z[:, None, :]
        return np.concatenate([d_W.reshape(len(z), -1), d_mu, d_log_std], axis=1)

    def as_actor(self) -> Actor:
        return lambda state, obs: self.act(obs)


class BuyAndHold:
    """Full buy order on the first step, nothing afterwards."""

    def __init__(self, assets=None):
        self.assets = assets

    def __call__(self, state: EnvState, obs: np.ndarray) -> np.ndarray:
        n = state.prices.size
        a = np.zeros(n)
        if state.t == 0:
            idx = range(n) if self.assets is None else self.assets
            a[list(idx)] = 1.0
        return a


def baseline_policy(kind: str, seed: int | None = None, assets=None) -> Actor:
    """Fixed actors: ``buy_and_hold``, ``random`` (seeded uniform) or ``flat``.

    ``assets`` restricts buy-and-hold to the given asset indices.
    """
    if kind == "flat":
        return lambda state, obs: np.zeros(state.prices.size)
    if kind == "buy_and_hold":
        return BuyAndHold(assets)
    if kind == "random":
        rng = np.random.default_rng(seed)
        return lambda state, obs: rng.uniform(-1.0, 1.0, state.prices.size)
    raise AgentError(f"unknown baseline policy {kind!r}")


@dataclass(frozen=True)
class PPOConfig:
    iterations: int = 200
    episodes_per_iteration: int = 8
    epochs: int = 8
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    learning_rate: float = 0.05
    lr_decay: float = 0.01
    max_grad_norm: float = 1.0
    init_log_std: float = -0.5
    value_ridge: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0
    window: tuple[int, int] | None = None

    def step_size(self, iteration: int) -> float:
        """Diminishing step size ``lr / (1 + decay * k)``."""
        return self.learning_rate / (1.0 + self.lr_decay * iteration)


@dataclass
class TrainingReport:
    seed: int
    config: dict
    records: list[dict] = field(default_factory=list)
    final_reward: float = math.nan
    tail_slope: float = math.nan
    initial_params: np.ndarray | None = field(default=None, repr=False)
    policy: LinearPolicy | None = field(default=None, repr=False)

    def write_jsonl(self, dest: IO[str]) -> None:
        for rec in self.records:
            dest.write(json.dumps({**rec, "seed": self.seed}) + "\n")

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "iterations": len(self.records),
            "final_reward": self.final_reward,
            "tail_slope": self.tail_slope,
            "config": self.config,
        }


def tail_slope(values) -> float:
    """Least-squares slope over the last quartile of a learning curve."""
    y = np.asarray(values, dtype=float)
    k = max(2, y.size // 4)
    if y.size < 2:
        return math.nan
    tail = y[-k:]
    return float(np.polyfit(np.arange(tail.size), tail, 1)[0])


def _fit_value(features: np.ndarray, targets: np.ndarray, ridge: float) -> np.ndarray:
    a = features.T @ features + ridge * np.eye(features.shape[1])
    return np.linalg.solve(a, features.T @ targets)


def _value_features(z: np.ndarray, frac: np.ndarray) -> np.ndarray:
    return np.column_stack([z, frac, np.ones(len(z))])


def fit_scaler(env: TradingEnv, window, seed: int) -> ObservationScaler:
    """Standardize states using one seeded random-policy rollout."""
    obs = []
    actor = baseline_policy("random", seed)

    def recording(state, o):
        obs.append(o)
        return actor(state, o)

    run_episode(env, recording, window)
    return ObservationScaler.fit(np.array(obs))


def evaluate_policy(env: TradingEnv, actor: Actor, window=None) -> float:
    """Composite reward earned by one deterministic episode."""
    return float(run_episode(env, actor, window).rewards.sum())


def train(env: TradingEnv, policy: LinearPolicy | None = None, config: PPOConfig | None = None,
          log: Callable[[dict], None] | None = None) -> TrainingReport:
    """Optimize the clipped surrogate with plain gradient ascent.

    Each iteration collects ``episodes_per_iteration`` stochastic episodes,
    fits a linear value baseline, computes GAE advantages and takes
    ``epochs`` full-batch ascent steps at the current (decaying) step size.
    """
    cfg = config or PPOConfig()
    rng = np.random.default_rng(cfg.seed)
    window = cfg.window or env.default_window
    if policy is None:
        policy = LinearPolicy(env.dim, env.stock_dim, scaler=fit_scaler(env, window, cfg.seed),
                              init_log_std=cfg.init_log_std)
    if policy.d != env.dim or policy.n != env.stock_dim:
        raise AgentError("policy shape does not match environment")
    report = TrainingReport(seed=cfg.seed, config=asdict(cfg), initial_params=policy.params.copy())
    n_steps = window[1] - window[0]

    for it in range(cfg.iterations):
        zs, us, logps, advs, rets, fracs, ep_rewards = [], [], [], [], [], [], []
        for _ in range(cfg.episodes_per_iteration):
            state = env.reset(window)
            ep_z, ep_u, ep_lp, ep_r = [], [], [], []
            done = False
            while not done:
                obs = state.flatten()
                action, u, lp = policy.sample(obs, rng)
                out = env.step(action)
                ep_z.append(policy.scaler(obs))
                ep_u.append(u)
                ep_lp.append(lp)
                ep_r.append(out.reward)
                state, done = out.state, out.done
            zs.append(np.array(ep_z))
            us.append(np.array(ep_u))
            logps.append(np.array(ep_lp))
            rets.append(np.array(ep_r))
            fracs.append(np.arange(len(ep_r)) / n_steps)
            ep_rewards.append(math.fsum(ep_r))

        # value baseline: discounted reward-to-go regressed on state features
        feats = [_value_features(z, f) for z, f in zip(zs, fracs)]
        targets = [advantages(r, np.zeros_like(r), cfg.gamma, 1.0) for r in rets]
        coef = _fit_value(np.vstack(feats), np.concatenate(targets), cfg.value_ridge)
        for f, r in zip(feats, rets):
            advs.append(advantages(r, f @ coef, cfg.gamma, cfg.lam))

        z = np.vstack(zs)
        u = np.vstack(us)
        old_lp = np.concatenate(logps)
        adv = np.concatenate(advs)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        lr = cfg.step_size(it)

        objective = math.nan
        for _ in range(cfg.epochs):
            ratio = np.exp(policy.log_prob(z, u) - old_lp)
            objective = float(np.mean(ppo_clip_objective(ratio, adv, cfg.clip_epsilon)))
            if not math.isfinite(objective):
                raise DivergenceError(f"objective became {objective} at iteration {it}")
            weight = ppo_clip_gradient(ratio, adv, cfg.clip_epsilon) * ratio
            grad = weight @ policy.grad_log_prob(z, u) / len(adv)
            norm = float(np.linalg.norm(grad))
            if cfg.max_grad_norm and norm > cfg.max_grad_norm:
                grad = grad * (cfg.max_grad_norm / norm)
            if cfg.weight_decay:
                nd = policy.n * policy.d
                grad[:nd] -= cfg.weight_decay * policy.params[:nd]
            policy.params = policy.params + lr * grad
            if not np.all(np.isfinite(policy.params)):
                raise DivergenceError(f"parameters became non-finite at iteration {it}")

        rec = {"iteration": it, "mean_reward": float(np.mean(ep_rewards)),
               "objective": objective, "step_size": lr}
        report.records.append(rec)
        if log is not None:
            log(rec)

    report.policy = policy
    report.final_reward = evaluate_policy(env, policy.as_actor(), window)
    report.tail_slope = tail_slope([r["mean_reward"] for r in report.records])
    return report


def save_checkpoint(path: str | os.PathLike, policy: LinearPolicy, seed: int) -> None:
    """Header line (JSON) followed by one hex-encoded float per parameter."""
    header = {"d": policy.d, "stock_dim": policy.n, "seed": seed,
              "n_params": policy.n_params,
              "obs_mean": [float(x).hex() for x in policy.scaler.mean],
              "obs_std": [float(x).hex() for x in policy.scaler.std]}
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for x in policy.params:
            fh.write(float(x).hex() + "\n")
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[LinearPolicy, dict]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        params = np.array([float.fromhex(line.strip()) for line in fh if line.strip()])
    scaler = ObservationScaler(np.array([float.fromhex(x) for x in header["obs_mean"]]),
                               np.array([float.fromhex(x) for x in header["obs_std"]]))
    policy = LinearPolicy(header["d"], header["stock_dim"], params, scaler)
    return policy, header
