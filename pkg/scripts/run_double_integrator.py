#!/usr/bin/env python3
"""Solve the minimum-fuel double integrator and print the iteration table.

Writes report.json / timings.json / per-iteration CSVs when --out is given.
"""

import argparse

import numpy as np

from fbrrt.problem import TimeGrid
from fbrrt.solver import SolverConfig, fbrrt_solve, rollout_policy


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--particles", type=int, default=256)
    parser.add_argument("--iterations", type=int, default=10)
    parser.add_argument("--mode", choices=["fbrrt", "parallel-baseline"], default="fbrrt")
    parser.add_argument("--x0", type=float, nargs=2, default=None, metavar=("POS", "VEL"))
    parser.add_argument("--out", default=None, help="output directory for reports")
    args = parser.parse_args()

    overrides = {}
    if args.x0 is not None:
        overrides["initial_state"] = tuple(args.x0)
    config = SolverConfig(
        problem="double_integrator",
        problem_overrides=overrides,
        M=args.particles,
        iterations=args.iterations,
        seed=args.seed,
        mode=args.mode,
        out_dir=args.out,
    )
    report = fbrrt_solve(config)
    for s in report.iterations:
        print(
            f"iter {s.iteration:2d}: mean cost {s.mean_cost:9.4f}  "
            f"acc-min {s.accumulated_min:9.4f}  lambda {s.lam:.4g}"
        )

    problem = config.build_problem()
    grid = TimeGrid.from_horizon(problem.horizon, config.effective_steps())
    roll = rollout_policy(
        problem, grid, report.coefficients, problem.initial_state, 1024, np.random.default_rng(123)
    )
    terminal = roll.terminal_states
    print(
        f"final policy over 1024 rollouts: cost {roll.mean_cost:.4f} +- {roll.std_cost:.4f}, "
        f"terminal position {terminal[:, 0].mean():+.3f} +- {terminal[:, 0].std():.3f}"
    )
    if args.out:
        print(f"reports written under {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
