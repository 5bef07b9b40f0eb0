"""Model-free learning of the equilibrium with the actor-critic loop.

Neither agent sees the market parameters: each observes sampled (state,
price) transitions, fits value surrogates by least-squares temporal
difference, and ascends a smoothed-functional gradient of the HJB criterion
with Adam.  A single 2000-episode run wanders around the equilibrium (the
per-episode gradient is extremely noisy); averaging the learned parameters
over independent replications concentrates the curves onto the closed form.

Run:  python demos/04_actor_critic_learning.py  (about 20 seconds)
"""

import numpy as np

from mvgame import choquet, equilibrium as eqm, market, rl

T, N, M, REPS = 1.0, 250, 2000, 5
mkt = market.MarketParams(r=0.017, sigma=0.15, iota=0.27, y_bar=0.273,
                          v=0.065, rho=-0.93)
agents = (
    market.AgentParams(gamma=2.0, k=0.1, lam=market.constant_weight(0.015),
                       distortion=choquet.make_distortion_normal()),
    market.AgentParams(gamma=3.0, k=0.05, lam=market.constant_weight(0.02),
                       distortion=choquet.make_distortion_gini()),
)
coeffs = eqm.solve_coefficients(agents, mkt, T)

t_grid = np.linspace(0.0, T, 11)
y_slice = np.full_like(t_grid, mkt.y_bar)
true1, true2 = eqm.equilibrium_means(t_grid, mkt.y_bar, agents, mkt, coeffs)


def curve_error(phis):
    mu1, mu2 = rl.resolve_actor_means(phis, agents, t_grid, y_slice, T)
    return max(np.max(np.abs(mu1 - true1) / np.abs(true1)),
               np.max(np.abs(mu2 - true2) / np.abs(true2)))


# actor parameters reproducing the closed form, perturbed by up to 10% per run
phi_star = (rl.equilibrium_actor_params(agents[0], mkt).as_array(),
            rl.equilibrium_actor_params(agents[1], mkt).as_array())
finals = []
for rep in range(REPS):
    rng = np.random.default_rng(100 + rep)
    initial = tuple(p * (1.0 + rng.uniform(-0.1, 0.1, size=4)) for p in phi_star)
    cfg = rl.TrainConfig(episodes=M, n_steps=N, horizon=T, learning_rate=1e-3,
                         kappa=0.01, seed=42 + rep, critic_warmup=250)
    result = rl.train(agents, mkt, cfg, initial_actors=initial)
    final = (result.phi_history[0][-1], result.phi_history[1][-1])
    finals.append(final)
    print(f"replication {rep}: start curve error {curve_error(initial):.3f} "
          f"-> final {curve_error(final):.3f} "
          f"({result.skipped_episodes} skipped episodes)")

avg = (np.mean([f[0] for f in finals], axis=0),
       np.mean([f[1] for f in finals], axis=0))
print(f"\naveraged over {REPS} replications: curve error {curve_error(avg):.3f}")

mu1, mu2 = rl.resolve_actor_means(avg, agents, t_grid, y_slice, T)
print(f"\n{'t':>5} {'true_1':>8} {'learned_1':>10} {'true_2':>8} {'learned_2':>10}")
for j, t in enumerate(t_grid):
    print(f"{t:5.2f} {true1[j]:8.4f} {mu1[j]:10.4f} {true2[j]:8.4f} {mu2[j]:10.4f}")

# the learned exploration scale is tied to phi0: lam * phi0^2 * gamma
for i in (0, 1):
    learned_std = rl.actor_scale_coeff(avg[i], agents[i], 0.0) \
        * agents[i].distortion.l2_norm
    true_std = eqm.equilibrium_std(agents[i], mkt)(0.0)
    print(f"agent {i + 1} exploration std at t=0: learned {learned_std:.4f}, "
          f"closed form {true_std:.4f}")
