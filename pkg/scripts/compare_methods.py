#!/usr/bin/env python3
"""Branch-sampled trees (half the particles) vs independent chains.

Runs both methods from shared random initial states and prints the median
normalized accumulated-min cost at the final shared-runtime bucket per
state, plus the win count for the tree method. Equivalent to
`fbrrt compare configs/double_integrator.cfg configs/double_integrator_baseline.cfg`
but with the paper-style particle budgets baked in.
"""

import argparse
import time

import numpy as np

from fbrrt.solver import SolverConfig, comparison_report, fbrrt_solve


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--problem", default="double_integrator")
    parser.add_argument("--states", type=int, default=10)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--iterations", type=int, default=10)
    parser.add_argument("--tree-particles", type=int, default=256)
    parser.add_argument("--chain-particles", type=int, default=512)
    parser.add_argument("--state-seed", type=int, default=2024)
    parser.add_argument("--out", default="comparison.csv")
    args = parser.parse_args()

    t_start = time.perf_counter()
    base_problem = SolverConfig(problem=args.problem).build_problem()
    states = base_problem.sample_roi(np.random.default_rng(args.state_seed), size=args.states)
    runs_tree: dict = {}
    runs_chains: dict = {}
    for s_idx, x0 in enumerate(states):
        overrides = {"initial_state": tuple(float(v) for v in x0)}
        common = dict(problem=args.problem, problem_overrides=overrides, iterations=args.iterations)
        runs_tree[s_idx] = [
            fbrrt_solve(SolverConfig(M=args.tree_particles, seed=t, mode="fbrrt", **common))
            for t in range(args.seeds)
        ]
        runs_chains[s_idx] = [
            fbrrt_solve(SolverConfig(M=args.chain_particles, seed=t, mode="parallel-baseline", **common))
            for t in range(args.seeds)
        ]
        print(f"state {s_idx} done ({time.perf_counter() - t_start:.0f}s)", flush=True)

    report = comparison_report(runs_tree, runs_chains)
    report.to_csv(args.out)
    medians = report.final_bucket_medians()
    wins = 0
    for state in sorted(medians):
        tree_m, chain_m = medians[state]["fbrrt"], medians[state]["baseline"]
        wins += tree_m <= chain_m
        print(f"state {state}: tree {tree_m:.4f}  chains {chain_m:.4f}")
    print(f"tree wins {wins}/{len(medians)}; CSV written to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
