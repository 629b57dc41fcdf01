"""Forward pass: RRT branch-sampled growth of the path tree.

Growth mixes RRT node selection (sample a target uniformly in the region of
interest, expand the nearest particle) with uniform node selection, and
mixes exploiting the current policy with uniformly drawn exploration
controls.  Each edge is an Euler-Maruyama step of the drifted SDE with a
feasible drift k = f(t, x, u), recorded on the edge so the backward pass can
compensate for the sampling measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import backward
from .basis import ValueCoefficients
from .problem import ControlProblem, TimeGrid
from .tree import BranchTree, default_metric_weights


@dataclass
class ForwardConfig:
    target_width: int  # M
    eps_rrt: float = 0.7
    eps_opt: float = 0.7
    metric_weights: Optional[np.ndarray] = None  # default 1/roi_width^2

    def __post_init__(self):
        if self.target_width < 1:
            raise ValueError("target_width must be >= 1")
        if not (0 <= self.eps_rrt <= 1 and 0 <= self.eps_opt <= 1):
            raise ValueError("mixing probabilities must lie in [0, 1]")


def euler_maruyama_step(problem: ControlProblem, dt: float, t: float, x, k, w):
    """x + k dt + sigma(t, x) w, with w ~ N(0, dt I) supplied by the caller."""
    x = np.asarray(x, dtype=float)
    return x + np.asarray(k, dtype=float) * dt + problem.diffusion(t, x) @ np.asarray(w, dtype=float)


def select_expansion_node(
    tree: BranchTree,
    i: int,
    config: ForwardConfig,
    rng: np.random.Generator,
    metric_weights: Optional[np.ndarray] = None,
) -> int:
    """RRT selection with probability eps_rrt, else uniform over the layer.

    `metric_weights` overrides the config/default weights so tight loops can
    pass a precomputed array.
    """
    layer = tree.layers[i]
    if not layer:
        raise ValueError(f"layer {i} is empty")
    if config.eps_rrt > rng.uniform():
        target = tree.problem.sample_roi(rng)
        weights = metric_weights
        if weights is None:
            weights = config.metric_weights if config.metric_weights is not None else default_metric_weights(tree.problem)
        _, node_id = tree.nearest(i, target, weights)
        return node_id
    return layer[rng.integers(len(layer))]


def select_control(
    problem: ControlProblem,
    t: float,
    x,
    alpha_next,
    coeffs_box,
    config: ForwardConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Exploit the target policy with probability eps_opt (when coefficients
    exist), otherwise draw uniformly from the exploration control set."""
    if alpha_next is not None and config.eps_opt > rng.uniform():
        lower, upper = coeffs_box
        return backward.target_policy(problem, t, x, alpha_next, lower, upper)
    cands = np.asarray(problem.random_controls)
    return cands[rng.integers(len(cands))]


def forward_expand(
    tree: BranchTree,
    coeffs: Optional[ValueCoefficients],
    config: ForwardConfig,
    rng: np.random.Generator,
) -> BranchTree:
    """Grow every layer 1..N to exactly `target_width` nodes in place.

    Outer loop adds one particle per layer per pass, inner loop walks time
    steps in order, so nodes added at layer i are immediately candidates for
    expansion into layer i+1 and in later passes over layer i.
    """
    problem, grid = tree.problem, tree.grid
    if not tree.layers[0]:
        raise ValueError("tree has no root layer")
    M = config.target_width
    box = (coeffs.lower, coeffs.upper) if coeffs is not None else None
    n = problem.state_dim
    dt = grid.dt
    sqrt_dt = np.sqrt(dt)
    weights = config.metric_weights if config.metric_weights is not None else default_metric_weights(problem)
    sigma = problem.diffusion(0.0, np.asarray(problem.initial_state, dtype=float)) if problem.constant_diffusion else None
    explore = np.asarray(problem.random_controls)
    # the exploit control is a pure function of the node while coeffs are
    # fixed, so repeated expansions of a node reuse the scored candidates
    exploit_cache: dict[int, tuple] = {}
    for _ in range(M):
        for i in range(grid.steps):
            if len(tree.layers[i + 1]) >= M:
                continue
            t = i * dt
            node_id = select_expansion_node(tree, i, config, rng, weights)
            x = tree.nodes[node_id].state
            alpha_next = coeffs.alpha(i + 1) if coeffs is not None else None
            if alpha_next is not None and config.eps_opt > rng.uniform():
                cached = exploit_cache.get(node_id)
                if cached is None:
                    choice, cands, ells, F = backward._candidate_scores(
                        problem, t, x[None, :], alpha_next, box[0], box[1]
                    )
                    cached = (cands[choice[0]], F[0, choice[0]], float(ells[0, choice[0]]))
                    exploit_cache[node_id] = cached
                u, k, ell = cached
            else:
                u = explore[rng.integers(len(explore))]
                k = problem.drift(t, x, u)
                ell = float(problem.running_cost(t, x, u))
            w = rng.normal(size=n) * sqrt_dt
            if sigma is not None:
                x_next = x + k * dt + sigma @ w
            else:
                x_next = euler_maruyama_step(problem, dt, t, x, k, w)
            tree.add_edge(node_id, u, k, x_next, cost_increment=ell * dt)
    return tree


def parallel_forward_baseline(
    problem: ControlProblem,
    grid: TimeGrid,
    M: int,
    coeffs: Optional[ValueCoefficients],
    config: ForwardConfig,
    rng: np.random.Generator,
) -> BranchTree:
    """M independent Euler-Maruyama chains from x0 (no branching).

    Control selection uses the same eps_opt exploit/explore mixing as the
    RRT expansion; the chains are stepped as a batch for speed.
    """
    tree = BranchTree(problem, grid)
    frontier = [tree.add_root() for _ in range(M)]
    X = np.tile(problem.initial_state, (M, 1))
    n = problem.state_dim
    cands = np.asarray(problem.random_controls)
    sqrt_dt = np.sqrt(grid.dt)
    for i in range(grid.steps):
        t = i * grid.dt
        U = cands[rng.integers(len(cands), size=M)]
        if coeffs is not None and config.eps_opt > 0:
            exploit = config.eps_opt > rng.uniform(size=M)
            if np.any(exploit):
                U[exploit] = backward.target_policy_batch(
                    problem, t, X[exploit], coeffs.alpha(i + 1), coeffs.lower, coeffs.upper
                )
        K = problem.drift(t, X, U)
        W = rng.normal(size=(M, n)) * sqrt_dt
        if problem.constant_diffusion:
            X_next = X + K * grid.dt + W @ problem.diffusion(t, X[0]).T
        else:
            X_next = np.array(
                [euler_maruyama_step(problem, grid.dt, t, X[j], K[j], W[j]) for j in range(M)]
            )
        costs = problem.running_cost(t, X, U) * grid.dt
        frontier = [
            tree.add_edge(frontier[j], U[j], K[j], X_next[j], cost_increment=float(costs[j]))
            for j in range(M)
        ]
        X = X_next
    return tree
