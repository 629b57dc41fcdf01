import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbrrt.backward import (
    BackwardPassError,
    backward_pass,
    bsde_target,
    default_lambda_grid,
    lambda_search,
    path_heuristic,
    softmin_weights,
    target_policy,
    target_policy_batch,
)
from fbrrt.basis import feature_count, quadratic_to_coefficients, value_grad
from fbrrt.forward import ForwardConfig, forward_expand
from fbrrt.problem import TimeGrid, make_double_integrator_l1, make_uncontrolled_heat
from fbrrt.tree import BranchTree

from conftest import scalar_problem


# ---------------------------------------------------------------------------
# target policy


def constant_alpha(n, c=1.0):
    alpha = np.zeros(feature_count(n))
    alpha[0] = c
    return alpha


def test_policy_zero_gradient_picks_cheapest_control():
    p = make_double_integrator_l1()
    u = target_policy(p, 0.0, p.initial_state, constant_alpha(2), p.roi_lower, p.roi_upper)
    assert u[0] == 0.0


def test_policy_hand_scored_bang():
    # fuel weight 0.5, dV/dvelocity = 2: candidate scores 0.5-2, 0, 0.5+2
    p = make_double_integrator_l1(fuel_weight=0.5, roi_lower=(-4.0, -3.0), roi_upper=(4.0, 3.0))
    alpha = np.zeros(feature_count(2))
    alpha[2] = 6.0  # linear velocity term; chain factor 2/width = 1/3
    x = np.array([0.0, 0.0])
    grad = value_grad(x, alpha, p.roi_lower, p.roi_upper)
    assert grad[1] == pytest.approx(2.0)
    u = target_policy(p, 0.0, x, alpha, p.roi_lower, p.roi_upper)
    assert u[0] == -1.0


def test_policy_matches_brute_force_scan():
    p = make_double_integrator_l1()
    rng = np.random.default_rng(0)
    cands = np.asarray(p.control_candidates)
    for _ in range(200):
        x = p.sample_roi(rng)
        alpha = rng.normal(size=feature_count(2))
        u = target_policy(p, 0.0, x, alpha, p.roi_lower, p.roi_upper)
        grad = value_grad(x, alpha, p.roi_lower, p.roi_upper)
        scores = np.array([p.running_cost(0.0, x, c) + p.drift(0.0, x, c) @ grad for c in cands])
        ells = np.array([p.running_cost(0.0, x, c) for c in cands])
        tied = np.isclose(scores, scores.min())
        best = np.flatnonzero(tied & np.isclose(ells, ells[tied].min()))[0]
        assert np.array_equal(u, cands[best])


def test_policy_batch_matches_scalar():
    p = make_double_integrator_l1()
    rng = np.random.default_rng(1)
    X = p.sample_roi(rng, size=32)
    alpha = rng.normal(size=feature_count(2))
    batch = target_policy_batch(p, 0.5, X, alpha, p.roi_lower, p.roi_upper)
    rows = np.array([target_policy(p, 0.5, x, alpha, p.roi_lower, p.roi_upper) for x in X])
    assert np.array_equal(batch, rows)


def test_policy_scale_invariant_without_running_cost():
    p = scalar_problem(fuel_weight=0.0)
    rng = np.random.default_rng(2)
    for _ in range(50):
        x = p.sample_roi(rng)[None]
        alpha = rng.normal(size=3)
        u1 = target_policy_batch(p, 0.0, x, alpha, p.roi_lower, p.roi_upper)
        u2 = target_policy_batch(p, 0.0, x, 7.5 * alpha, p.roi_lower, p.roi_upper)
        assert np.array_equal(u1, u2)


# ---------------------------------------------------------------------------
# regression targets


def test_bsde_target_on_policy_edge():
    p = make_double_integrator_l1()
    rng = np.random.default_rng(3)
    dt = 0.1
    for _ in range(20):
        x = p.sample_roi(rng)
        x_next = p.sample_roi(rng)
        alpha = rng.normal(size=feature_count(2))
        mu = target_policy(p, 0.3 * 10 * dt, x, alpha, p.roi_lower, p.roi_upper)
        k = p.drift(3 * dt, x, mu)
        y_hat, y_next = bsde_target(p, dt, 3, x, k, x_next, alpha, p.roi_lower, p.roi_upper)
        ell = float(p.running_cost(3 * dt, x, mu))
        assert y_hat == pytest.approx(y_next + ell * dt, abs=1e-12)


def test_bsde_target_constant_value_zero_cost():
    p = make_uncontrolled_heat()
    alpha = constant_alpha(1, c=4.0)
    y_hat, y_next = bsde_target(
        p, 0.05, 2, np.array([0.3]), np.array([1.0]), np.array([0.5]), alpha, p.roi_lower, p.roi_upper
    )
    assert y_next == pytest.approx(4.0)
    assert y_hat == pytest.approx(4.0)  # gradient 0 kills the drift correction


def test_bsde_target_correction_arithmetic():
    # sigma=2, dV/dx=0.5 so z=1; off-policy drift gap 0.4 gives
    # z * (0.4 / 2) * dt = 0.02 at dt=0.1
    p = make_uncontrolled_heat(noise=2.0)
    alpha = np.array([0.0, 1.5, 0.0])  # linear over box [-3, 3]: slope 1.5 * (2/6) = 0.5
    x_next = np.array([0.0])
    grad = value_grad(x_next, alpha, p.roi_lower, p.roi_upper)
    assert grad[0] == pytest.approx(0.5)
    y_hat, y_next = bsde_target(
        p, 0.1, 0, np.array([0.0]), np.array([-0.4]), x_next, alpha, p.roi_lower, p.roi_upper
    )
    assert y_hat - y_next == pytest.approx(0.02)


# ---------------------------------------------------------------------------
# softmin weights and heuristic


def test_softmin_constant_scores():
    assert np.allclose(softmin_weights(np.full(7, 3.2), lam=0.5), 1.0)


def test_softmin_two_point_value():
    lam = 0.8
    theta = softmin_weights(np.array([0.0, lam * np.log(2.0)]), lam)
    assert np.allclose(theta, [4 / 3, 2 / 3])


def test_softmin_sharp_limit():
    theta = softmin_weights(np.array([5.0, 1.0, 9.0, 2.0]), lam=1e-9)
    assert np.allclose(theta, [0.0, 4.0, 0.0, 0.0])


def test_softmin_rejects_bad_inputs():
    with pytest.raises(ValueError):
        softmin_weights(np.array([1.0, 2.0]), lam=0.0)
    with pytest.raises(ValueError):
        softmin_weights(np.array([1.0, np.inf]), lam=1.0)


@settings(deadline=None, max_examples=50)
@given(
    seed=st.integers(0, 2**16),
    lam=st.floats(min_value=1e-3, max_value=1e3),
    shift=st.floats(min_value=-1e3, max_value=1e3),
)
def test_softmin_invariants(seed, lam, shift):
    rng = np.random.default_rng(seed)
    rho = rng.normal(size=16) * 3.0
    theta = softmin_weights(rho, lam)
    assert abs(theta.mean() - 1.0) < 1e-10
    assert np.allclose(theta, softmin_weights(rho + shift, lam), atol=1e-10)
    order = np.argsort(rho)
    assert np.all(np.diff(theta[order]) <= 1e-15)  # lower rho, larger weight


def test_path_heuristic_is_sum():
    assert np.allclose(path_heuristic([0.0, 0.0], [1.5, 2.0]), [1.5, 2.0])
    assert np.allclose(path_heuristic([0.3, 0.1], [0.0, 0.0]), [0.3, 0.1])
    assert path_heuristic(np.array([1.2]), np.array([0.7]))[0] == pytest.approx(1.9)


# ---------------------------------------------------------------------------
# backward pass


def grown_tree(problem, steps, M, seed):
    grid = TimeGrid.from_horizon(problem.horizon, steps)
    tree = BranchTree(problem, grid)
    tree.add_root()
    forward_expand(tree, None, ForwardConfig(target_width=M, eps_rrt=1.0, eps_opt=0.0), np.random.default_rng(seed))
    return tree


def test_backward_pass_single_on_policy_chain():
    # zero cost, policy u=0: every target telescopes to g(x_N)
    p = make_uncontrolled_heat()
    grid = TimeGrid.from_horizon(p.horizon, 5)
    tree = BranchTree(p, grid)
    tree.add_root()
    rng = np.random.default_rng(4)
    node = 0
    for i in range(5):
        x = tree.nodes[node].state
        w = rng.normal(size=1) * np.sqrt(grid.dt)
        node = tree.add_edge(node, np.array([0.0]), np.zeros(1), x + p.diffusion(0, x) @ w)
    g = float(p.terminal_cost(tree.nodes[node].state))
    artifacts = backward_pass(tree, lam=1.0)
    for i in range(1, 6):
        x_i = tree.layer_states(i)[0]
        assert artifacts.coefficients.value(i, x_i) == pytest.approx(g, abs=1e-3)
    assert artifacts.initial_value == pytest.approx(g, abs=1e-3)


def test_backward_pass_weight_and_ess_diagnostics():
    p = make_double_integrator_l1()
    tree = grown_tree(p, 6, 48, seed=5)
    artifacts = backward_pass(tree, lam=2.0)
    N = 6
    assert artifacts.theta[N] is not None and artifacts.theta[1] is None
    for i in range(2, N + 1):
        assert abs(np.mean(artifacts.theta[i]) - 1.0) < 1e-10
        assert len(artifacts.theta[i]) == 48
    # terminal fit is uniform, so its effective sample size is exactly M
    assert artifacts.ess[N - 1] == pytest.approx(48.0)
    assert np.all(artifacts.ess >= 1.0)
    assert np.all(artifacts.ess <= 48.0 + 1e-9)
    for i in range(1, N + 1):
        assert len(artifacts.rho[i]) == 48
        assert np.all(np.isfinite(artifacts.rho[i]))
    assert len(artifacts.initial_value_samples) == 48


def test_backward_pass_pure_function():
    p = make_double_integrator_l1()
    tree = grown_tree(p, 5, 32, seed=6)
    a1 = backward_pass(tree, lam=1.5)
    a2 = backward_pass(tree, lam=1.5)
    assert np.array_equal(a1.coefficients.alphas, a2.coefficients.alphas)
    assert np.array_equal(a1.initial_value_samples, a2.initial_value_samples)
    for r1, r2 in zip(a1.rho[1:], a2.rho[1:]):
        assert np.array_equal(r1, r2)


def test_backward_pass_singular_fit_reports_layer():
    p = make_uncontrolled_heat()
    grid = TimeGrid.from_horizon(p.horizon, 3)
    tree = BranchTree(p, grid)
    tree.add_root()
    node = 0
    for _ in range(3):
        node = tree.add_edge(node, np.array([0.0]), np.zeros(1), tree.nodes[node].state + 0.1)
    with pytest.raises(BackwardPassError) as err:
        backward_pass(tree, lam=1.0, ridge=0.0)  # one sample cannot determine 3 coefficients
    assert err.value.layer == 3


# ---------------------------------------------------------------------------
# lambda selection


def test_default_lambda_grid_scales_with_spread():
    p = make_double_integrator_l1()
    tree = grown_tree(p, 5, 64, seed=7)
    grid_vals = default_lambda_grid(tree)
    scores = np.array([n.run_cost for n in tree.layer_nodes(5)]) + p.terminal_cost(tree.layer_states(5))
    iqr = np.percentile(scores, 75) - np.percentile(scores, 25)
    assert np.allclose(grid_vals, np.array([0.1, 0.3, 1.0, 3.0, 10.0]) * iqr)
    assert np.all(grid_vals > 0)


def test_lambda_search_singleton_grid_matches_backward_pass():
    p = make_double_integrator_l1()
    tree = grown_tree(p, 5, 32, seed=8)
    direct = backward_pass(tree, lam=2.5)
    searched = lambda_search(tree, [2.5], rollout_count=16, seed=0)
    assert searched.lam == 2.5
    assert np.array_equal(searched.coefficients.alphas, direct.coefficients.alphas)


def test_lambda_search_picks_cheaper_rollout():
    from fbrrt.solver import rollout_policy

    p = make_double_integrator_l1()
    tree = grown_tree(p, 8, 64, seed=9)
    lam_grid = [float(default_lambda_grid(tree)[1]), 1e6]
    chosen = lambda_search(tree, lam_grid, rollout_count=64, seed=11)
    costs = {}
    for lam in lam_grid:
        art = backward_pass(tree, lam)
        rep = rollout_policy(p, tree.grid, art.coefficients, p.initial_state, 64, np.random.default_rng(11))
        costs[lam] = rep.mean_cost
    assert costs[chosen.lam] == min(costs.values())


def test_lambda_search_deterministic():
    p = make_double_integrator_l1()
    tree = grown_tree(p, 6, 48, seed=10)
    grid_vals = default_lambda_grid(tree)
    a = lambda_search(tree, grid_vals, rollout_count=32, seed=21)
    b = lambda_search(tree, grid_vals, rollout_count=32, seed=21)
    assert a.lam == b.lam
    assert np.array_equal(a.coefficients.alphas, b.coefficients.alphas)


def test_lambda_search_empty_grid_rejected():
    p = make_double_integrator_l1()
    tree = grown_tree(p, 4, 16, seed=11)
    with pytest.raises(ValueError):
        lambda_search(tree, [], rollout_count=8, seed=0)
