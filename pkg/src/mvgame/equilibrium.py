"""Closed-form time-consistent Nash equilibrium for the Gaussian mean-return model.

Each agent's auxiliary expectation and value function are quadratic in the
market state,

    g_i(t, x, y) = x + a2(t) y^2 / 2 + a1(t) y + a0(t),
    V_i(t, x, y) = x + b2(t) y^2 / 2 + b1(t) y + b0(t),

with coefficient functions solved backward from zero terminal values.  The
a-coefficients have closed forms (a0 by quadrature); the b-coefficients are
obtained by RK4 back-integration of the linear system that the extended HJB
equation induces on the quadratic ansatz.  Equilibrium action means solve a
2x2 linear system coupling the two agents through their sensitivities; the
action standard deviation lam_i(t) ||h_i'||_2 / (gamma_i sigma^2) involves
only the agent's own preferences.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from ._integrate import half_grid, rk4_backward_affine
from .choquet import Distortion, build_optimal_quantile
from .market import AgentParams, MarketParams

__all__ = [
    "CoefficientSet",
    "EquilibriumPolicy",
    "SingularMeanSystemError",
    "DEFAULT_GRID_SIZE",
    "a_coeffs_closed_form",
    "solve_a_coeffs",
    "solve_a_coeffs_ode",
    "solve_b_coeffs",
    "solve_coefficients",
    "equilibrium_std",
    "equilibrium_means",
    "mean_system_residuals",
    "equilibrium_policy",
    "value_functions",
    "black_scholes_policy",
    "generator_apply",
    "hjb_residuals",
]

DEFAULT_GRID_SIZE = 4001


class SingularMeanSystemError(ValueError):
    """k1*k2 >= 1 makes the equilibrium mean system singular."""


@dataclass
class CoefficientSet:
    """Time-indexed coefficients of one agent's (g, V) quadratic forms.

    ``a`` and ``b`` are (3, n) arrays with rows (a0, a1, a2) / (b0, b1, b2)
    on the uniform grid ``times``; off-grid queries use cubic interpolation.
    Immutable after solving.
    """

    times: np.ndarray
    a: np.ndarray
    b: np.ndarray
    _a_spline: CubicSpline = field(init=False, repr=False)
    _b_spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self._a_spline = CubicSpline(self.times, self.a, axis=1)
        self._b_spline = CubicSpline(self.times, self.b, axis=1)

    def a_at(self, t):
        """(a0, a1, a2) at t; vectorized over t."""
        return self._a_spline(t)

    def b_at(self, t):
        return self._b_spline(t)

    def a_deriv(self, t):
        """(a0', a1', a2') from the interpolant derivative (numeric, not the ODE)."""
        return self._a_spline.derivative()(t)

    def b_deriv(self, t):
        return self._b_spline.derivative()(t)

    # Row indexing works for scalar t (shape (3,)) and array t (shape (3, m)).
    def a0(self, t):
        return self._a_spline(t)[0]

    def a1(self, t):
        return self._a_spline(t)[1]

    def a2(self, t):
        return self._a_spline(t)[2]

    def b0(self, t):
        return self._b_spline(t)[0]

    def b1(self, t):
        return self._b_spline(t)[1]

    def b2(self, t):
        return self._b_spline(t)[2]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "a0", "a1", "a2", "b0", "b1", "b2"])
            for j, t in enumerate(self.times):
                writer.writerow([repr(float(t))]
                                + [repr(float(self.a[i, j])) for i in range(3)]
                                + [repr(float(self.b[i, j])) for i in range(3)])


def _mean_reversion_rate(market: MarketParams) -> float:
    """The combined decay rate iota + rho*v entering the a-coefficients."""
    return market.iota + market.rho * market.v


def a_coeffs_closed_form(agent: AgentParams, market: MarketParams, horizon: float, t):
    """Closed-form (a1, a2) at times t.

    a2 = (1 - e^{-2c(T-t)})/(gamma c) and a1 = iota*y_bar*(1 - e^{-c(T-t)})^2
    /(gamma c^2) with c = iota + rho*v; at c = 0 the limits 2(T-t)/gamma and
    iota*y_bar*(T-t)^2/gamma apply.
    """
    tau = horizon - np.asarray(t, dtype=float)
    c = _mean_reversion_rate(market)
    g = agent.gamma
    if c == 0.0:
        a2 = 2.0 * tau / g
        a1 = market.iota * market.y_bar * tau ** 2 / g
    else:
        a2 = -np.expm1(-2.0 * c * tau) / (g * c)
        a1 = market.iota * market.y_bar * np.expm1(-c * tau) ** 2 / (g * c ** 2)
    return a1, a2


def solve_a_coeffs(agent: AgentParams, market: MarketParams, horizon: float,
                   grid_size: int = DEFAULT_GRID_SIZE):
    """(a0, a1, a2) grids on [0, T]: a1, a2 in closed form, a0 by backward
    quadrature of a0' = -a1*iota*y_bar - (v^2/2)*a2 with a0(T) = 0."""
    if grid_size < 2:
        raise ValueError(f"grid_size must be >= 2, got {grid_size!r}")
    t = np.linspace(0.0, horizon, grid_size)
    a1, a2 = a_coeffs_closed_form(agent, market, horizon, t)
    th = half_grid(t)
    a1_h, a2_h = a_coeffs_closed_form(agent, market, horizon, th)
    beta = -a1_h * market.iota * market.y_bar - 0.5 * market.v ** 2 * a2_h
    a0 = rk4_backward_affine(np.zeros_like(th), beta, t[1] - t[0], 0.0)
    return a0, a1, a2


def solve_a_coeffs_ode(agent: AgentParams, market: MarketParams, horizon: float,
                       grid_size: int = DEFAULT_GRID_SIZE):
    """(a0, a1, a2) grids by RK4 back-integration of the full coefficient ODE
    system (the independent oracle for the closed forms):

        a2' = 2c a2 - 2/gamma,  a1' = c a1 - iota*y_bar*a2,
        a0' = -iota*y_bar*a1 - (v^2/2) a2,       all zero at T.
    """
    if grid_size < 2:
        raise ValueError(f"grid_size must be >= 2, got {grid_size!r}")
    t = np.linspace(0.0, horizon, grid_size)
    th = half_grid(t)
    c = _mean_reversion_rate(market)
    g = agent.gamma
    iy = market.iota * market.y_bar
    n_h = len(th)
    # State ordering (a2, a1, a0): lower-triangular coupling.
    alpha = np.zeros((n_h, 3, 3))
    alpha[:, 0, 0] = 2.0 * c
    alpha[:, 1, 0] = -iy
    alpha[:, 1, 1] = c
    alpha[:, 2, 0] = -0.5 * market.v ** 2
    alpha[:, 2, 1] = -iy
    beta = np.zeros((n_h, 3))
    beta[:, 0] = -2.0 / g
    sol = rk4_backward_affine(alpha, beta, t[1] - t[0], np.zeros(3))
    return sol[:, 2], sol[:, 1], sol[:, 0]


def equilibrium_std(agent: AgentParams, market: MarketParams) -> Callable:
    """t -> lam(t) ||h'||_2 / (gamma sigma^2), the agent's equilibrium std."""
    if market.sigma <= 0.0:
        raise ValueError("equilibrium requires a strictly positive sigma")
    scale = agent.distortion.l2_norm / (agent.gamma * market.sigma ** 2)

    def std(t):
        return np.asarray(agent.lam(t), dtype=float) * scale if np.ndim(t) \
            else float(agent.lam(t)) * scale

    return std


def solve_b_coeffs(agent_i: AgentParams, agent_j: AgentParams, market: MarketParams,
                   horizon: float, grid_size: int = DEFAULT_GRID_SIZE,
                   sigma_j_star: Callable | None = None):
    """(b0, b1, b2) grids by RK4 back-integration of the value-coefficient system.

    Substituting the quadratic ansatz into the extended HJB equation at the
    equilibrium policy and collecting powers of y gives

        b2' = 2*iota*b2 + 2*rho*v*a2 + gamma*v^2*(1-rho^2)*a2^2 - 1/gamma
        b1' = iota*b1 - iota*y_bar*b2 + rho*v*a1 + gamma*v^2*(1-rho^2)*a1*a2
        b0' = -iota*y_bar*b1 - (v^2/2)*b2 + (gamma/2)*v^2*(1-rho^2)*a1^2
              + (gamma/2)*sigma^2*k^2*sigma_j(t)^2 - lam(t)^2||h'||_2^2/(2*gamma*sigma^2)

    with zero terminal values; a1, a2 are the agent's own closed forms and
    sigma_j is the opponent's equilibrium std (overridable).
    """
    if grid_size < 2:
        raise ValueError(f"grid_size must be >= 2, got {grid_size!r}")
    if sigma_j_star is None:
        sigma_j_star = equilibrium_std(agent_j, market)
    t = np.linspace(0.0, horizon, grid_size)
    th = half_grid(t)
    a1_h, a2_h = a_coeffs_closed_form(agent_i, market, horizon, th)

    g = agent_i.gamma
    s2 = market.sigma ** 2
    v2 = market.v ** 2
    rv = market.rho * market.v
    ortho = v2 * (1.0 - market.rho ** 2)
    iy = market.iota * market.y_bar
    lam_h = np.asarray(agent_i.lam(th), dtype=float) * np.ones_like(th)
    sig_j_h = np.asarray(sigma_j_star(th), dtype=float) * np.ones_like(th)
    l2 = agent_i.distortion.l2_norm

    n_h = len(th)
    # State ordering (b2, b1, b0).
    alpha = np.zeros((n_h, 3, 3))
    alpha[:, 0, 0] = 2.0 * market.iota
    alpha[:, 1, 0] = -iy
    alpha[:, 1, 1] = market.iota
    alpha[:, 2, 0] = -0.5 * v2
    alpha[:, 2, 1] = -iy
    beta = np.empty((n_h, 3))
    beta[:, 0] = 2.0 * rv * a2_h + g * ortho * a2_h ** 2 - 1.0 / g
    beta[:, 1] = rv * a1_h + g * ortho * a1_h * a2_h
    beta[:, 2] = (0.5 * g * ortho * a1_h ** 2
                  + 0.5 * g * s2 * agent_i.k ** 2 * sig_j_h ** 2
                  - lam_h ** 2 * l2 ** 2 / (2.0 * g * s2))
    sol = rk4_backward_affine(alpha, beta, t[1] - t[0], np.zeros(3))
    return sol[:, 2], sol[:, 1], sol[:, 0]


def solve_coefficients(agents, market: MarketParams, horizon: float,
                       grid_size: int = DEFAULT_GRID_SIZE):
    """Solve both agents' coefficient sets on a shared grid."""
    t = np.linspace(0.0, horizon, grid_size)
    out = []
    for i, j in ((0, 1), (1, 0)):
        a0, a1, a2 = solve_a_coeffs(agents[i], market, horizon, grid_size)
        b0, b1, b2 = solve_b_coeffs(agents[i], agents[j], market, horizon, grid_size)
        out.append(CoefficientSet(times=t, a=np.vstack([a0, a1, a2]),
                                  b=np.vstack([b0, b1, b2])))
    return tuple(out)


def _mean_base(t, y, agent: AgentParams, market: MarketParams, coeff: CoefficientSet):
    """y/(gamma*sigma) - (rho v/sigma)(a2 y + a1): the agent's response mean
    net of the opponent coupling term."""
    a = coeff.a_at(t)
    a1, a2 = a[1], a[2]
    rv = market.rho * market.v
    y = np.asarray(y, dtype=float)
    return (y / (agent.gamma * market.sigma)
            - (rv / market.sigma) * (a2 * y + a1))


def equilibrium_means(t, y, agents, market: MarketParams, coeffs):
    """Equilibrium action means (mu1*, mu2*) at (t, y).

    Solves mu_i - k_i mu_j = base_i exactly: mu_i = (base_i + k_i base_j)
    /(1 - k1 k2).  Vectorized over t and/or y.
    """
    k1, k2 = agents[0].k, agents[1].k
    denom = 1.0 - k1 * k2
    if denom <= 0.0:
        raise SingularMeanSystemError(f"k1*k2 = {k1 * k2!r} >= 1")
    base1 = _mean_base(t, y, agents[0], market, coeffs[0])
    base2 = _mean_base(t, y, agents[1], market, coeffs[1])
    return (base1 + k1 * base2) / denom, (base2 + k2 * base1) / denom


def mean_system_residuals(t, y, agents, market: MarketParams, coeffs, mus):
    """Residuals of mu_i - k_i mu_j = base_i for a candidate mean pair."""
    mu1, mu2 = mus
    r1 = (mu1 - agents[0].k * mu2) - _mean_base(t, y, agents[0], market, coeffs[0])
    r2 = (mu2 - agents[1].k * mu1) - _mean_base(t, y, agents[1], market, coeffs[1])
    return r1, r2


@dataclass(frozen=True)
class EquilibriumPolicy:
    """Sampling policy of one agent at equilibrium: state-dependent mean,
    time-dependent std, quantile = mean + std * h'(1-p)/||h'||_2."""

    agent_index: int
    mean_fn: Callable
    std_fn: Callable
    distortion: Distortion

    def mean(self, t, y):
        return self.mean_fn(t, y)

    def std(self, t):
        return self.std_fn(t)

    def quantile(self, t, y, p):
        m = self.mean_fn(t, y)
        s = self.std_fn(t)
        return m + s * self.distortion.h_prime(1.0 - np.asarray(p, dtype=float)) \
            / self.distortion.l2_norm

    def policy_at(self, t: float, y: float):
        """Frozen one-instant exploration law (a QuantilePolicy)."""
        return build_optimal_quantile(self.distortion, float(self.mean_fn(t, y)),
                                      float(self.std_fn(t)))


def equilibrium_policy(agent_index: int, agents, market: MarketParams,
                       coeffs) -> EquilibriumPolicy:
    """Assemble agent ``agent_index``'s equilibrium sampling policy."""
    agent = agents[agent_index]

    def mean_fn(t, y):
        return equilibrium_means(t, y, agents, market, coeffs)[agent_index]

    return EquilibriumPolicy(agent_index=agent_index, mean_fn=mean_fn,
                             std_fn=equilibrium_std(agent, market),
                             distortion=agent.distortion)


def value_functions(agent_index: int, t, xhat, y, coeffs):
    """(V_i, g_i) at (t, xhat, y) from the solved coefficient set."""
    cs = coeffs[agent_index]
    y = np.asarray(y, dtype=float)
    a0, a1, a2 = cs.a_at(t)
    b0, b1, b2 = cs.b_at(t)
    v = xhat + 0.5 * b2 * y ** 2 + b1 * y + b0
    g = xhat + 0.5 * a2 * y ** 2 + a1 * y + a0
    return v, g


def black_scholes_policy(agents, a: float, b: float, r: float):
    """Equilibrium pair in the constant-parameter (Black-Scholes) market.

    Means are the constants ((a-r)/b^2)(1/gamma_i + k_i/gamma_j)/(1-k1 k2);
    stds are lam_i(t) ||h_i'||_2 / (gamma_i b^2).
    """
    if b <= 0.0:
        raise ValueError(f"volatility must be positive, got {b!r}")
    k1, k2 = agents[0].k, agents[1].k
    denom = 1.0 - k1 * k2
    if denom <= 0.0:
        raise SingularMeanSystemError(f"k1*k2 = {k1 * k2!r} >= 1")
    sharpe_sq = (a - r) / b ** 2
    gammas = (agents[0].gamma, agents[1].gamma)
    ks = (k1, k2)
    out = []
    for i, j in ((0, 1), (1, 0)):
        m = sharpe_sq * (1.0 / gammas[i] + ks[i] / gammas[j]) / denom
        agent = agents[i]
        scale = agent.distortion.l2_norm / (agent.gamma * b ** 2)

        def std_fn(t, _scale=scale, _lam=agent.lam):
            return np.asarray(_lam(t), dtype=float) * _scale if np.ndim(t) \
                else float(_lam(t)) * _scale

        out.append(EquilibriumPolicy(
            agent_index=i,
            mean_fn=lambda t, y, _m=m: _m * np.ones_like(np.asarray(y, dtype=float))
            if np.ndim(y) else _m,
            std_fn=std_fn,
            distortion=agent.distortion,
        ))
    return tuple(out)


def generator_apply(market: MarketParams, t, y, mu_i, sigma_i, mu_j, sigma_j,
                    k_i, partials):
    """Apply the controlled generator of (Xhat, Y) to a function's partials.

    ``partials`` = (p_t, p_x, p_xx, p_y, p_yy, p_xy).  The drift of Xhat is
    sigma*y*(mu_i - k_i mu_j); its quadratic variation rate is
    sigma^2 ((mu_i - k_i mu_j)^2 + sigma_i^2 + k_i^2 sigma_j^2); the
    Xhat-Y covariation rate is rho*v*sigma*(mu_i - k_i mu_j).
    """
    p_t, p_x, p_xx, p_y, p_yy, p_xy = partials
    mu_gap = mu_i - k_i * mu_j
    s = market.sigma
    quad_rate = s ** 2 * (mu_gap ** 2 + sigma_i ** 2 + k_i ** 2 * sigma_j ** 2)
    return (p_t
            + s * y * mu_gap * p_x
            + 0.5 * quad_rate * p_xx
            + market.iota * (market.y_bar - y) * p_y
            + 0.5 * market.v ** 2 * p_yy
            + market.rho * market.v * s * mu_gap * p_xy)


def hjb_residuals(agent_index: int, agents, market: MarketParams, coeffs,
                  t: float, xhat: float, y: float):
    """Numeric residuals of the extended HJB pair at the equilibrium policy.

    Returns (hjbw, hjbg) where hjbg = L g and hjbw = L V - (gamma/2) L(g^2)
    + gamma g L g + lam(t) Phi_h(pi*).  Coefficient time derivatives come
    from the interpolant (independent of the ODE right-hand sides), so the
    check exercises both the derivation and the integration.
    """
    agent = agents[agent_index]
    cs = coeffs[agent_index]
    a0, a1, a2 = cs.a_at(t)
    b0, b1, b2 = cs.b_at(t)
    da0, da1, da2 = cs.a_deriv(t)
    db0, db1, db2 = cs.b_deriv(t)

    mu1, mu2 = equilibrium_means(t, y, agents, market, coeffs)
    mu_i, mu_j = (mu1, mu2) if agent_index == 0 else (mu2, mu1)
    agent_j = agents[1 - agent_index]
    sig_i = equilibrium_std(agent, market)(t)
    sig_j = equilibrium_std(agent_j, market)(t)

    g_val = xhat + 0.5 * a2 * y ** 2 + a1 * y + a0
    g_partials = (0.5 * da2 * y ** 2 + da1 * y + da0, 1.0, 0.0, a2 * y + a1, a2, 0.0)
    v_partials = (0.5 * db2 * y ** 2 + db1 * y + db0, 1.0, 0.0, b2 * y + b1, b2, 0.0)
    g_y = a2 * y + a1
    g_sq_partials = (2.0 * g_val * g_partials[0], 2.0 * g_val, 2.0,
                     2.0 * g_val * g_y, 2.0 * (g_y ** 2 + g_val * a2), 2.0 * g_y)

    args = (market, t, y, mu_i, sig_i, mu_j, sig_j, agent.k)
    l_v = generator_apply(*args, v_partials)
    l_g = generator_apply(*args, g_partials)
    l_g_sq = generator_apply(*args, g_sq_partials)
    reg = float(agent.lam(t)) * sig_i * agent.distortion.l2_norm
    hjbw = l_v - 0.5 * agent.gamma * l_g_sq + agent.gamma * g_val * l_g + reg
    return float(hjbw), float(l_g)
