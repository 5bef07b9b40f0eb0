"""Gaussian mean-return market simulator and Monte Carlo objective estimation.

The risky asset earns drift r + sigma*Y(t) where Y is an Ornstein-Uhlenbeck
state correlated (rho) with the asset's Brownian driver:

    dS/S = (r + sigma*Y) dt + sigma dB
    dY   = iota*(y_bar - Y) dt + v*(rho dB + sqrt(1-rho^2) dB~)

Wealth is tracked in discounted units; an action u is the discounted amount
held in the risky asset, so one step of the discounted wealth is exactly
x + u * (relative change of e^{-rt} S(t)).  Episodes sample both agents'
actions by inverse transform from their policy quantile functions, one
uniform draw per agent per step (the same uniforms are reused by the
perturbed-actor replay during training).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.signal import lfilter

__all__ = [
    "MarketParams",
    "AgentParams",
    "SimConfig",
    "Trajectory",
    "ObjectiveEstimate",
    "SimulationDivergedError",
    "InvalidPriceError",
    "constant_weight",
    "exponential_weight",
    "episode_generator",
    "simulate_state_and_price",
    "step_wealth",
    "simulate_game",
    "estimate_objective",
]

# Episodes are aborted once wealth leaves this range; the model itself puts
# no bound on wealth, but training needs a numerical sanity guard.
WEALTH_GUARD = 1e12

# rng.random() returns multiples of 2^-53 in [0, 1-2^-53]; only an exact 0
# must be lifted off the closed endpoint before inverse-transform sampling.
_U_MIN = 2.0 ** -53


class SimulationDivergedError(RuntimeError):
    """A simulated path produced non-finite or guard-exceeding values."""


class InvalidPriceError(ValueError):
    """A wealth step was asked to divide by a nonpositive price."""


@dataclass(frozen=True)
class MarketParams:
    """Constants of the Gaussian mean-return model."""

    r: float
    sigma: float
    iota: float
    y_bar: float
    v: float
    rho: float

    def __post_init__(self):
        # sigma = 0 is allowed here (degenerate noiseless price, useful for
        # simulator checks); equilibrium formulas divide by sigma and enforce
        # positivity themselves.
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma!r}")
        if self.iota < 0.0:
            raise ValueError(f"iota must be nonnegative, got {self.iota!r}")
        if self.v < 0.0:
            raise ValueError(f"v must be nonnegative, got {self.v!r}")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho!r}")


def constant_weight(lam0: float) -> Callable[[float], float]:
    """Constant exploration weight schedule t -> lam0."""
    if lam0 <= 0.0:
        raise ValueError(f"exploration weight must be positive, got {lam0!r}")
    return lambda t: lam0 * np.ones_like(np.asarray(t, dtype=float)) if np.ndim(t) else lam0


def exponential_weight(lam0: float, horizon: float) -> Callable[[float], float]:
    """Exponentially decaying schedule t -> lam0 * exp(lam0 * (T - t))."""
    if lam0 <= 0.0:
        raise ValueError(f"exploration weight must be positive, got {lam0!r}")
    return lambda t: lam0 * np.exp(lam0 * (horizon - np.asarray(t, dtype=float)))


@dataclass(frozen=True)
class AgentParams:
    """Preferences of one agent.

    ``gamma`` is the risk aversion, ``k`` the sensitivity to the opponent's
    terminal wealth, ``lam`` the exploration weight schedule t -> lam(t) > 0,
    and ``distortion`` the agent's regularizer shape.
    """

    gamma: float
    k: float
    lam: Callable[[float], float]
    distortion: "Distortion"  # noqa: F821 - mvgame.choquet.Distortion

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")
        # k=0 is accepted: it decouples the game into single-agent problems.
        if not 0.0 <= self.k < 1.0:
            raise ValueError(f"k must lie in [0, 1), got {self.k!r}")


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    n_steps: int
    seed: int
    x1_0: float = 1.0
    x2_0: float = 1.0
    y_0: float = 0.273

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps!r}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


@dataclass
class Trajectory:
    """One simulated episode on the grid t_0..t_N (actions have length N)."""

    times: np.ndarray
    y: np.ndarray
    s_disc: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    actions1: np.ndarray
    actions2: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "y", "s_disc", "x1", "x2", "u1", "u2"])
            n = len(self.times)
            for i in range(n):
                u1 = repr(float(self.actions1[i])) if i < n - 1 else ""
                u2 = repr(float(self.actions2[i])) if i < n - 1 else ""
                writer.writerow([
                    repr(float(self.times[i])),
                    repr(float(self.y[i])),
                    repr(float(self.s_disc[i])),
                    repr(float(self.x1[i])),
                    repr(float(self.x2[i])),
                    u1,
                    u2,
                ])


def episode_generator(seed: int, episode: int) -> np.random.Generator:
    """Counter-based per-episode generator: episode m is reproducible
    regardless of how many episodes ran before or on which worker."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, episode))))


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise SimulationDivergedError("simulation produced non-finite values")


def simulate_state_and_price(params: MarketParams, cfg: SimConfig,
                             rng: np.random.Generator):
    """Euler-Maruyama state path and log-Euler discounted price path.

    Returns arrays (y, s_disc) of length n_steps+1; s_disc(0) = 1.  The
    draw order is dB then dB~ (n_steps each), so callers can deterministically
    append further draws to the same stream.
    """
    y, s_disc = _state_and_price_batch(params, cfg, 1, rng)
    return y[0], s_disc[0]


def _state_and_price_batch(params: MarketParams, cfg: SimConfig, n_paths: int,
                           rng: np.random.Generator):
    """Vectorized paths, shape (n_paths, n_steps+1) each."""
    n = cfg.n_steps
    dt = cfg.dt
    sqdt = np.sqrt(dt)
    db = sqdt * rng.standard_normal((n_paths, n))
    db_tilde = sqdt * rng.standard_normal((n_paths, n))

    # Y_{k+1} = phi*Y_k + (iota*y_bar*dt + noise_k) is an AR(1) recursion.
    phi = 1.0 - params.iota * dt
    noise = params.v * (params.rho * db + np.sqrt(1.0 - params.rho ** 2) * db_tilde)
    forcing = params.iota * params.y_bar * dt + noise
    y = np.empty((n_paths, n + 1))
    y[:, 0] = cfg.y_0
    y[:, 1:] = lfilter([1.0], [1.0, -phi], forcing, axis=1)
    y[:, 1:] += cfg.y_0 * np.power(phi, np.arange(1, n + 1))

    # Discounted price: d(log S) = (r + sigma*Y - sigma^2/2) dt + sigma dB,
    # then e^{-rt} S(t); the r terms cancel.
    dlog = (params.sigma * y[:, :-1] - 0.5 * params.sigma ** 2) * dt + params.sigma * db
    s_disc = np.empty((n_paths, n + 1))
    s_disc[:, 0] = 1.0
    s_disc[:, 1:] = np.exp(np.cumsum(dlog, axis=1))

    _check_finite(y, s_disc)
    return y, s_disc


def step_wealth(x_prev: float, action: float, price_prev: float, price_next: float) -> float:
    """One exact discounted-wealth update: x + u * (p_next - p_prev) / p_prev."""
    if price_prev <= 0.0:
        raise InvalidPriceError(f"price must be positive, got {price_prev!r}")
    return x_prev + action * (price_next - price_prev) / price_prev


def _draw_uniforms(rng: np.random.Generator, shape) -> np.ndarray:
    return np.maximum(rng.random(shape), _U_MIN)


def simulate_game(params: MarketParams, agents, policies, cfg: SimConfig,
                  rng: np.random.Generator) -> Trajectory:
    """One full episode with both agents acting.

    ``policies`` is a pair of objects exposing ``quantile(t, y, p)``
    (vectorized over arrays); at each step each agent draws an action by
    inverse transform from one uniform and wealth advances by the exact
    discounted-price relative change.
    """
    n = cfg.n_steps
    y, s_disc = simulate_state_and_price(params, cfg, rng)
    p1 = _draw_uniforms(rng, n)
    p2 = _draw_uniforms(rng, n)

    t_grid = np.linspace(0.0, cfg.horizon, n + 1)
    u1 = np.asarray(policies[0].quantile(t_grid[:-1], y[:-1], p1), dtype=float)
    u2 = np.asarray(policies[1].quantile(t_grid[:-1], y[:-1], p2), dtype=float)

    rel = np.diff(s_disc) / s_disc[:-1]
    x1 = np.empty(n + 1)
    x2 = np.empty(n + 1)
    x1[0], x2[0] = cfg.x1_0, cfg.x2_0
    x1[1:] = cfg.x1_0 + np.cumsum(u1 * rel)
    x2[1:] = cfg.x2_0 + np.cumsum(u2 * rel)

    _check_finite(x1, x2)
    if np.max(np.abs(x1)) > WEALTH_GUARD or np.max(np.abs(x2)) > WEALTH_GUARD:
        raise SimulationDivergedError("wealth exceeded guard threshold")
    return Trajectory(times=t_grid, y=y, s_disc=s_disc, x1=x1, x2=x2,
                      actions1=u1, actions2=u2)


@dataclass
class BatchResult:
    """Terminal wealth gaps and per-step action residual moments for a batch
    of episodes (residual = action minus the policy mean at the visited state)."""

    xhat_T: tuple[np.ndarray, np.ndarray]
    resid_sum: np.ndarray      # shape (2, n_steps)
    resid_sumsq: np.ndarray    # shape (2, n_steps)
    n_episodes: int


def run_episode_batch(params: MarketParams, agents, policies, cfg: SimConfig,
                      n_episodes: int, rng: np.random.Generator) -> BatchResult:
    """Simulate ``n_episodes`` independent episodes vectorized over episodes."""
    n = cfg.n_steps
    t_grid = np.linspace(0.0, cfg.horizon, n + 1)
    y, s_disc = _state_and_price_batch(params, cfg, n_episodes, rng)
    p1 = _draw_uniforms(rng, (n_episodes, n))
    p2 = _draw_uniforms(rng, (n_episodes, n))
    rel = np.diff(s_disc, axis=1) / s_disc[:, :-1]

    x0 = (cfg.x1_0, cfg.x2_0)
    x_T = []
    resid_sum = np.zeros((2, n))
    resid_sumsq = np.zeros((2, n))
    for i, (pol, p) in enumerate(zip(policies, (p1, p2))):
        u = np.empty((n_episodes, n))
        for k in range(n):
            u[:, k] = pol.quantile(t_grid[k], y[:, k], p[:, k])
            mu_k = pol.mean(t_grid[k], y[:, k])
            res = u[:, k] - mu_k
            resid_sum[i, k] = res.sum()
            resid_sumsq[i, k] = (res * res).sum()
        x_T.append(x0[i] + np.sum(u * rel, axis=1))

    _check_finite(*x_T)
    xhat1 = x_T[0] - agents[0].k * x_T[1]
    xhat2 = x_T[1] - agents[1].k * x_T[0]
    return BatchResult(xhat_T=(xhat1, xhat2), resid_sum=resid_sum,
                       resid_sumsq=resid_sumsq, n_episodes=n_episodes)


@dataclass(frozen=True)
class ObjectiveEstimate:
    value: float
    std_error: float
    n_episodes: int
    mean_terminal: float
    var_terminal: float
    regularizer_integral: float


def _regularizer_integral(agent, policy, t_grid: np.ndarray, dt: float) -> float:
    """Discrete-time integral sum_k lam(t_k) * Phi_h(policy(t_k)) * dt.

    Phi is evaluated analytically as std(t)*||h'||_2 when the policy is a
    location-scale family over the agent's own distortion derivative, else
    by fixed-order quantile quadrature.
    """
    ts = t_grid[:-1]
    pol_dist = getattr(policy, "distortion", None)
    if pol_dist is agent.distortion and hasattr(policy, "std"):
        phis = np.asarray(policy.std(ts), dtype=float) * agent.distortion.l2_norm
    else:
        nodes, weights = np.polynomial.legendre.leggauss(256)
        p = 0.5 * (nodes + 1.0)
        w = 0.5 * weights
        hp = agent.distortion.h_prime(1.0 - p)
        phis = np.empty(len(ts))
        for k, t in enumerate(ts):
            q = np.asarray(policy.quantile(t, 0.0, p), dtype=float)
            # Phi_h is translation invariant, so evaluating the quantile at a
            # reference state y=0 is only valid for state-independent shapes;
            # subtract the mean to be explicit about that.
            q = q - float(np.sum(w * q))
            phis[k] = float(np.sum(w * q * hp))
    lam = np.asarray([float(agent.lam(t)) for t in ts])
    return float(np.sum(lam * phis) * dt)


def estimate_objective(agent_index: int, agents, policies, params: MarketParams,
                       cfg: SimConfig, n_episodes: int, rng: np.random.Generator,
                       chunk_size: int = 20000) -> ObjectiveEstimate:
    """Monte Carlo estimate of the regularized mean-variance objective

        E[int lam(s) Phi_h(Pi(s)) ds + Xhat(T)] - (gamma/2) Var[Xhat(T)]

    for the given agent, with a delta-method standard error for the
    mean-minus-scaled-variance combination.
    """
    if n_episodes < 2:
        raise ValueError("need at least 2 episodes to estimate a variance")
    agent = agents[agent_index]
    t_grid = np.linspace(0.0, cfg.horizon, cfg.n_steps + 1)
    reg = _regularizer_integral(agent, policies[agent_index], t_grid, cfg.dt)

    samples = np.empty(n_episodes)
    done = 0
    while done < n_episodes:
        m = min(chunk_size, n_episodes - done)
        batch = run_episode_batch(params, agents, policies, cfg, m, rng)
        samples[done:done + m] = batch.xhat_T[agent_index]
        done += m

    mean_T = float(samples.mean())
    centered = samples - mean_T
    var_T = float(np.sum(centered ** 2) / (n_episodes - 1))
    mu3 = float(np.mean(centered ** 3))
    mu4 = float(np.mean(centered ** 4))
    g = agent.gamma
    value = reg + mean_T - 0.5 * g * var_T
    # Var(mean - (g/2) S^2) ~ [sigma^2 + (g/2)^2 (mu4 - sigma^4) - g*mu3] / n
    var_est = (var_T + 0.25 * g * g * (mu4 - var_T ** 2) - g * mu3) / n_episodes
    return ObjectiveEstimate(
        value=value,
        std_error=float(np.sqrt(max(var_est, 0.0))),
        n_episodes=n_episodes,
        mean_terminal=mean_T,
        var_terminal=var_T,
        regularizer_integral=reg,
    )
