"""Command-line experiment harness.

Subcommands: ``equilibrium`` (coefficient grids and density-curve sweeps),
``iterate`` (policy-iteration error histories with certified bounds),
``train`` (actor-critic learning with learned-vs-true mean curves), and
``simulate`` (one trajectory under the equilibrium policies).  Every command
is deterministic given (config, seed) and writes CSV only; plots are left to
whatever consumes the CSVs.

Exit codes: 0 success, 2 config error, 3 certificate failure, 4 training
divergence.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import equilibrium as eqm
from . import market as mkt
from . import policy_iter as pit
from . import rl
from .config import ConfigError, ExperimentConfig, parse_config

__all__ = ["main", "cmd_equilibrium", "cmd_iterate", "cmd_train", "cmd_simulate",
           "CertificateError"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CERTIFICATE = 3
EXIT_DIVERGED = 4

DENSITY_POINTS = 401
SWEEP_VALUES = {
    "k1": (0.05, 0.1, 0.2, 0.4),
    "gamma1": (1.0, 2.0, 4.0, 8.0),
    "k2": (0.05, 0.2, 0.5, 0.8),
    "gamma2": (0.5, 1.0, 2.0, 4.0),
}
DENSITY_TIMES = (0.1, 18.0)


class CertificateError(RuntimeError):
    """A certified convergence bound or tolerance band was violated."""


def _r(x) -> str:
    return repr(float(x))


def _density_curve(policy, t: float, y: float):
    """(u grid, density) of the one-instant exploration law; the grid spans
    the support so a trapezoid integral equals one up to tail mass."""
    law = policy.policy_at(t, y)
    m, s = law.mean, law.scale
    family = law.distortion.family
    if family == "uniform":
        half = np.sqrt(3.0) * s
        u = np.linspace(m - half, m + half, DENSITY_POINTS)
        dens = np.full(DENSITY_POINTS, 1.0 / (2.0 * half))
    elif family == "normal":
        u = np.linspace(m - 8.0 * s, m + 8.0 * s, DENSITY_POINTS)
        dens = np.exp(-0.5 * ((u - m) / s) ** 2) / (s * np.sqrt(2.0 * np.pi))
    else:
        raise ValueError(f"no density for distortion family {family!r}")
    return u, dens


def cmd_equilibrium(cfg: ExperimentConfig, out_dir: str) -> int:
    """Write coefficient grids and density-curve sweeps at benchmark states."""
    os.makedirs(out_dir, exist_ok=True)
    horizon = cfg.sim.horizon
    agents = cfg.build_agents(horizon)
    coeffs = eqm.solve_coefficients(agents, cfg.market, horizon)
    for i in (0, 1):
        coeffs[i].to_csv(os.path.join(out_dir, f"coefficients_agent{i + 1}.csv"))

    y0 = cfg.market.y_bar
    times = [t for t in DENSITY_TIMES if t < horizon] or [0.1 * horizon]
    for i in (0, 1):
        path = os.path.join(out_dir, f"densities_agent{i + 1}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["param", "value", "t", "u", "density"])

            def emit(param, value, agents_mod, t):
                coeffs_mod = eqm.solve_coefficients(agents_mod, cfg.market, horizon)
                pol = eqm.equilibrium_policy(i, agents_mod, cfg.market, coeffs_mod)
                u, dens = _density_curve(pol, t, y0)
                for uu, dd in zip(u, dens):
                    writer.writerow([param, _r(value), _r(t), _r(uu), _r(dd)])

            for t in times:
                emit("base", t, agents, t)
                for value in SWEEP_VALUES["k1"]:
                    emit("k1", value, (replace(agents[0], k=value), agents[1]), t)
                for value in SWEEP_VALUES["gamma1"]:
                    emit("gamma1", value, (replace(agents[0], gamma=value), agents[1]), t)
                for value in SWEEP_VALUES["k2"]:
                    emit("k2", value, (agents[0], replace(agents[1], k=value)), t)
                for value in SWEEP_VALUES["gamma2"]:
                    emit("gamma2", value, (agents[0], replace(agents[1], gamma=value)), t)
    print(f"equilibrium: wrote coefficient and density CSVs to {out_dir}")
    return EXIT_OK


def cmd_iterate(cfg: ExperimentConfig, out_dir: str) -> int:
    """Run both convergence engines and write certified error histories."""
    os.makedirs(out_dir, exist_ok=True)
    horizon = cfg.sim.horizon
    agents = cfg.build_agents(horizon)
    coeffs = eqm.solve_coefficients(agents, cfg.market, horizon)

    failures = []
    n_mean_iters = 8
    grid = np.linspace(0.0, horizon, 201)
    mean_hist = pit.simultaneous_mean_iteration(
        agents, cfg.market, coeffs, (np.zeros(201), np.zeros(201)),
        n_mean_iters, times=grid, y_value=cfg.market.y_bar)
    rate = mean_hist.contraction_rate
    for it in mean_hist.iterates[1:]:
        if not (np.isnan(it.ratio) or it.ratio <= rate + 1e-9):
            failures.append(f"mean iteration ratio {it.ratio} > {rate} at n={it.n}")
        if it.sup_err > it.bound + 1e-9:
            failures.append(f"mean iteration error {it.sup_err} > bound {it.bound} at n={it.n}")

    for i in (0, 1):
        hist = pit.run_response_iteration(agents[i], cfg.market, horizon,
                                          n_max=25, tol=1e-6, agent_index=i)
        for it in hist.iterates:
            if it.sup_err_a2 > it.bound_a2 + 1e-9:
                failures.append(
                    f"agent {i + 1} a2 error {it.sup_err_a2} > factorial bound "
                    f"{it.bound_a2} at n={it.n}")
            if it.sup_err_a1 > it.bound_a1 + 1e-9:
                failures.append(
                    f"agent {i + 1} a1 error {it.sup_err_a1} > factorial bound "
                    f"{it.bound_a1} at n={it.n}")
        if not hist.converged:
            failures.append(f"agent {i + 1} response iteration did not reach "
                            f"tol={hist.tol} within {len(hist.iterates) - 1} iterations")
        pit.export_history_csv(
            os.path.join(out_dir, f"iteration_agent{i + 1}.csv"), hist, mean_hist)
        status = "converged" if hist.converged else "NOT converged"
        print(f"iterate: agent {i + 1} {status} in {hist.n_iterations} iterations")

    if failures:
        for msg in failures:
            print(f"certificate FAILED: {msg}", file=sys.stderr)
        raise CertificateError("; ".join(failures))
    print(f"iterate: all certificates hold; histories in {out_dir}")
    return EXIT_OK


def _train_one_replication(args):
    """Worker for one training replication (picklable module-level fn)."""
    cfg, rep = args
    horizon = cfg.train.horizon
    agents = cfg.build_agents(horizon)
    phi_star = (rl.equilibrium_actor_params(agents[0], cfg.market),
                rl.equilibrium_actor_params(agents[1], cfg.market))
    init_rng = np.random.default_rng(np.random.SeedSequence((cfg.train.seed, 77, rep)))
    initial = tuple(p.as_array() * (1.0 + init_rng.uniform(-0.1, 0.1, size=4))
                    for p in phi_star)
    train_cfg = replace(cfg.train, seed=cfg.train.seed + 1000 * (rep + 1))
    result = rl.train(agents, cfg.market, train_cfg, initial_actors=initial)
    return rep, result


def cmd_train(cfg: ExperimentConfig, out_dir: str, replications: int | None = None,
              freeze_opponent: bool = False, workers: int = 1) -> int:
    """Train over replications; write metrics and learned-vs-true curves."""
    os.makedirs(out_dir, exist_ok=True)
    reps = cfg.replications if replications is None else replications
    horizon = cfg.train.horizon
    agents = cfg.build_agents(horizon)
    coeffs = eqm.solve_coefficients(agents, cfg.market, horizon)
    t_grid = np.linspace(0.0, horizon, cfg.train.n_steps + 1)
    y_slice = cfg.market.y_bar
    true1, true2 = eqm.equilibrium_means(t_grid, y_slice, agents, cfg.market, coeffs)

    if cfg.train.episodes == 0 or reps == 0:
        _write_learned_csv(os.path.join(out_dir, "learned_vs_true.csv"),
                           t_grid, true1, true2, None, None)
        print("train: no episodes configured; wrote true curves only")
        return EXIT_OK

    if freeze_opponent:
        frozen = eqm.equilibrium_policy(1, agents, cfg.market, coeffs)
        results = []
        for rep in range(reps):
            sub_cfg = replace(cfg.train, seed=cfg.train.seed + 1000 * (rep + 1))
            phi_star = (rl.equilibrium_actor_params(agents[0], cfg.market),
                        rl.equilibrium_actor_params(agents[1], cfg.market))
            init_rng = np.random.default_rng(
                np.random.SeedSequence((cfg.train.seed, 77, rep)))
            initial = tuple(p.as_array() * (1.0 + init_rng.uniform(-0.1, 0.1, size=4))
                            for p in phi_star)
            results.append((rep, rl.train(agents, cfg.market, sub_cfg,
                                          initial_actors=initial,
                                          frozen_opponent=frozen)))
    elif workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one_replication,
                                    [(cfg, rep) for rep in range(reps)]))
    else:
        results = [_train_one_replication((cfg, rep)) for rep in range(reps)]
    results.sort(key=lambda pair: pair[0])
    runs = [r for _, r in results]

    skipped_total = sum(r.skipped_episodes for r in runs)
    episodes_total = sum(r.episodes_run for r in runs)
    if skipped_total > 0.01 * episodes_total:
        print(f"train: {skipped_total}/{episodes_total} episodes skipped",
              file=sys.stderr)
        raise rl.TrainingDivergedError("more than 1% of episodes diverged")

    # Average actor histories across replications, then evaluate the final
    # averaged parameters.
    avg_hist = [np.mean([r.phi_history[i] for r in runs], axis=0) for i in (0, 1)]
    with warnings.catch_warnings():
        # all-NaN loss columns (an agent that never trained) stay NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        avg_losses = [np.nanmean([r.critic_losses[i] for r in runs], axis=0)
                      for i in (0, 1)]
    mean_result = rl.TrainResult(
        phi_history=(avg_hist[0], avg_hist[1]),
        theta=runs[0].theta, critic_losses=(avg_losses[0], avg_losses[1]),
        adam_states=runs[0].adam_states,
        skipped_episodes=skipped_total, episodes_run=runs[0].episodes_run)
    rl.write_metrics_csv(os.path.join(out_dir, "training_metrics.csv"), mean_result)
    rl.save_checkpoint(os.path.join(out_dir, "checkpoint.txt"),
                       runs[0].episodes_run,
                       (rl.ActorParams.from_array(runs[0].phi_history[0][-1]),
                        rl.ActorParams.from_array(runs[0].phi_history[1][-1])),
                       runs[0].theta, runs[0].adam_states)

    phi_final = (avg_hist[0][-1], avg_hist[1][-1])
    if freeze_opponent:
        mu2_learned = true2
        mu1_learned = agents[0].k * true2 + rl.actor_base_mean(
            phi_final[0], t_grid, np.full_like(t_grid, y_slice), horizon)
    else:
        mu1_learned, mu2_learned = rl.resolve_actor_means(
            phi_final, agents, t_grid, np.full_like(t_grid, y_slice), horizon)
    _write_learned_csv(os.path.join(out_dir, "learned_vs_true.csv"),
                       t_grid, true1, true2, mu1_learned, mu2_learned)

    rel_err = max(float(np.max(np.abs(mu1_learned - true1) / np.abs(true1))),
                  float(np.max(np.abs(mu2_learned - true2) / np.abs(true2))))
    print(f"train: {reps} replications, max relative mean-curve error "
          f"{rel_err:.4f} (band {cfg.train_band})")
    if rel_err > cfg.train_band:
        raise CertificateError(
            f"learned mean curves deviate {rel_err:.4f} > band {cfg.train_band}")
    return EXIT_OK


def _write_learned_csv(path, t_grid, true1, true2, learned1, learned2) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mu_true_1", "mu_learned_1", "mu_true_2", "mu_learned_2"])
        for j, t in enumerate(t_grid):
            row = [_r(t), _r(true1[j]),
                   _r(learned1[j]) if learned1 is not None else "",
                   _r(true2[j]),
                   _r(learned2[j]) if learned2 is not None else ""]
            writer.writerow(row)


def cmd_simulate(cfg: ExperimentConfig, out_dir: str) -> int:
    """Simulate one trajectory under the equilibrium policies."""
    os.makedirs(out_dir, exist_ok=True)
    horizon = cfg.sim.horizon
    agents = cfg.build_agents(horizon)
    coeffs = eqm.solve_coefficients(agents, cfg.market, horizon)
    policies = (eqm.equilibrium_policy(0, agents, cfg.market, coeffs),
                eqm.equilibrium_policy(1, agents, cfg.market, coeffs))
    rng = mkt.episode_generator(cfg.sim.seed, 0)
    traj = mkt.simulate_game(cfg.market, agents, policies, cfg.sim, rng)
    traj.to_csv(os.path.join(out_dir, "trajectory.csv"))
    print(f"simulate: wrote trajectory.csv to {out_dir}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvgame",
        description="Two-agent exploratory mean-variance game experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("equilibrium", "iterate", "train", "simulate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override seeds")
        p.add_argument("--out", default=None, help="output directory override")
        if name == "train":
            p.add_argument("--freeze-opponent", action="store_true",
                           help="train agent 1 only against the fixed "
                                "closed-form opponent")
            p.add_argument("--replications", type=int, default=None)
            p.add_argument("--workers", type=int, default=1,
                           help="parallel replication workers")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage, which matches the config-error code
        return int(exc.code) if exc.code else EXIT_OK

    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, sim=replace(cfg.sim, seed=args.seed),
                          train=replace(cfg.train, seed=args.seed))
        out_dir = args.out if args.out is not None else cfg.output_dir
        if args.command == "equilibrium":
            return cmd_equilibrium(cfg, out_dir)
        if args.command == "iterate":
            return cmd_iterate(cfg, out_dir)
        if args.command == "train":
            return cmd_train(cfg, out_dir, replications=args.replications,
                             freeze_opponent=args.freeze_opponent,
                             workers=args.workers)
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir)
        raise AssertionError(f"unhandled command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificateError as exc:
        print(f"certificate failure: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except rl.TrainingDivergedError as exc:
        print(f"training divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
