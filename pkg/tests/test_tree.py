import numpy as np
import pytest

from fbrrt.problem import TimeGrid, make_double_integrator_l1
from fbrrt.tree import BranchTree, default_metric_weights


@pytest.fixture
def problem():
    return make_double_integrator_l1()


@pytest.fixture
def grid(problem):
    return TimeGrid.from_horizon(problem.horizon, 30)


def make_tree(problem, grid):
    tree = BranchTree(problem, grid)
    tree.add_root()
    return tree


def test_root_layer(problem, grid):
    tree = make_tree(problem, grid)
    root = tree.nodes[0]
    assert root.time_index == 0
    assert root.run_cost == 0.0
    assert np.allclose(root.state, problem.initial_state)


def test_add_edge_run_cost(problem, grid):
    tree = make_tree(problem, grid)
    u = np.array([1.0])
    child = tree.add_edge(0, u, problem.drift(0.0, tree.nodes[0].state, u), np.array([1.0, 0.5]))
    expected = float(problem.running_cost(0.0, tree.nodes[0].state, u)) * grid.dt
    assert tree.nodes[child].run_cost == pytest.approx(expected)
    assert tree.layer_size(1) == 1


def test_branching_shares_parent(problem, grid):
    tree = make_tree(problem, grid)
    u = np.array([0.0])
    k = problem.drift(0.0, tree.nodes[0].state, u)
    a = tree.add_edge(0, u, k, np.array([0.1, 0.0]))
    b = tree.add_edge(0, u, k, np.array([-0.1, 0.0]))
    assert tree.layer_size(1) == 2
    assert tree.nodes[a].parent == tree.nodes[b].parent == 0
    # L1 cost with u=0 accrues nothing
    assert tree.nodes[a].run_cost == 0.0


def test_terminal_layer_expansion_rejected(problem):
    grid = TimeGrid.from_horizon(problem.horizon, 1)
    tree = make_tree(problem, grid)
    child = tree.add_edge(0, np.array([0.0]), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        tree.add_edge(child, np.array([0.0]), np.zeros(2), np.zeros(2))


def test_nonfinite_drift_rejected(problem, grid):
    tree = make_tree(problem, grid)
    with pytest.raises(ValueError):
        tree.add_edge(0, np.array([0.0]), np.array([np.nan, 0.0]), np.zeros(2))


def chain(tree, length, u=np.array([1.0])):
    node = 0
    for i in range(length):
        x = tree.nodes[node].state
        k = tree.problem.drift(i * tree.grid.dt, x, u)
        node = tree.add_edge(node, u, k, x + k * tree.grid.dt)
    return node


def test_path_at_lengths(problem, grid):
    tree = make_tree(problem, grid)
    assert len(tree.path_at(0, 0)) == 1
    chain(tree, 3)
    path = tree.path_at(3, 0)
    assert len(path) == 4
    assert np.allclose(path[0][0], problem.initial_state)
    with pytest.raises(IndexError):
        tree.path_at(3, 1)


def test_path_replay_identity(problem, grid):
    # recorded (k, u) replayed through the euler update reproduce the states
    rng = np.random.default_rng(0)
    tree = make_tree(problem, grid)
    node = 0
    for i in range(5):
        x = tree.nodes[node].state
        u = np.asarray(problem.random_controls)[rng.integers(3)]
        k = problem.drift(i * grid.dt, x, u)
        w = rng.normal(size=2) * np.sqrt(grid.dt)
        x_next = x + k * grid.dt + problem.diffusion(i * grid.dt, x) @ w
        node = tree.add_edge(node, u, k, x_next)
    path = tree.path_at(5, 0)
    for i in range(1, len(path)):
        x_prev = path[i - 1][0]
        x, k, u = path[i]
        k_replay = problem.drift((i - 1) * grid.dt, x_prev, u)
        assert np.allclose(k, k_replay, atol=1e-12)
        # noise recoverable because sigma is invertible
        w = np.linalg.solve(problem.diffusion((i - 1) * grid.dt, x_prev), x - x_prev - k * grid.dt)
        assert np.allclose(x_prev + k * grid.dt + problem.diffusion((i - 1) * grid.dt, x_prev) @ w, x)


def test_run_cost_telescoping(problem, grid):
    rng = np.random.default_rng(1)
    tree = make_tree(problem, grid)
    for _ in range(50):
        i = rng.integers(0, grid.steps)
        layer = tree.layers[i]
        if not layer:
            continue
        parent = int(rng.choice(layer))
        u = np.asarray(problem.random_controls)[rng.integers(3)]
        x = tree.nodes[parent].state
        k = problem.drift(i * grid.dt, x, u)
        tree.add_edge(parent, u, k, x + rng.normal(size=2))
    for node in tree.nodes:
        if node.parent is None:
            assert node.run_cost == 0.0
        else:
            parent = tree.nodes[node.parent]
            inc = float(problem.running_cost(parent.time_index * grid.dt, parent.state, node.control)) * grid.dt
            assert abs(node.run_cost - (parent.run_cost + inc)) < 1e-12


def test_nearest_singleton_and_simple(problem, grid):
    tree = make_tree(problem, grid)
    w = np.ones(2)
    node, _ = tree.nearest(0, np.array([5.0, 5.0]), w)
    assert np.allclose(node.state, problem.initial_state)
    tree.add_edge(0, np.array([0.0]), np.zeros(2), np.array([0.0, 0.0]))
    tree.add_edge(0, np.array([0.0]), np.zeros(2), np.array([1.0, 0.0]))
    node, _ = tree.nearest(1, np.array([0.4, 0.0]), w)
    assert np.allclose(node.state, [0.0, 0.0])


def test_nearest_matches_brute_force(problem, grid):
    rng = np.random.default_rng(2)
    tree = make_tree(problem, grid)
    states = rng.uniform(-3, 3, size=(100, 2))
    for s in states:
        tree.add_edge(0, np.array([0.0]), np.zeros(2), s)
    weights = default_metric_weights(problem)
    for _ in range(100):
        q = rng.uniform(-3, 3, size=2)
        _, got = tree.nearest(1, q, weights)
        dists = [(np.sum(weights * (tree.nodes[j].state - q) ** 2), j) for j in tree.layers[1]]
        want = min(dists)[1]
        assert got == want


def test_nearest_empty_layer_raises(problem, grid):
    tree = make_tree(problem, grid)
    with pytest.raises(ValueError):
        tree.nearest(1, np.zeros(2), np.ones(2))


def grow_random(problem, grid, M, seed=3):
    from fbrrt.forward import ForwardConfig, forward_expand

    tree = BranchTree(problem, grid)
    tree.add_root()
    forward_expand(tree, None, ForwardConfig(M, eps_rrt=0.5, eps_opt=0.0), np.random.default_rng(seed))
    return tree


def run_cost_scores(tree):
    return [None] + [
        np.array([tree.nodes[j].run_cost for j in tree.layers[i]]) for i in range(1, tree.grid.steps + 1)
    ]


def test_prune_keep_all_is_identity(problem):
    grid = TimeGrid.from_horizon(problem.horizon, 5)
    tree = grow_random(problem, grid, 16)
    pruned = tree.prune(run_cost_scores(tree), keep_fraction=1.0)
    assert pruned.layer_sizes == tree.layer_sizes
    for a, b in zip(tree.nodes, pruned.nodes):
        assert np.allclose(a.state, b.state)
        assert a.run_cost == b.run_cost


def test_prune_keeps_lowest_scores_with_ancestry():
    problem = make_double_integrator_l1()
    grid = TimeGrid.from_horizon(problem.horizon, 2)
    tree = BranchTree(problem, grid)
    tree.add_root()
    # two chains: controls (1,1) and (0,0); run costs favor the zero chain
    u1, u0 = np.array([1.0]), np.array([0.0])
    a = tree.add_edge(0, u1, problem.drift(0, tree.nodes[0].state, u1), np.array([1.0, 1.0]))
    b = tree.add_edge(0, u0, problem.drift(0, tree.nodes[0].state, u0), np.array([2.0, 0.0]))
    a2 = tree.add_edge(a, u1, problem.drift(0, tree.nodes[a].state, u1), np.array([1.0, 2.0]))
    b2 = tree.add_edge(b, u0, problem.drift(0, tree.nodes[b].state, u0), np.array([2.0, 0.0]))
    scores = run_cost_scores(tree)
    pruned = tree.prune(scores, keep_fraction=0.5)
    # the cheap chain survives in full
    assert pruned.layer_sizes == [1, 1, 1]
    assert all(pruned.nodes[pruned.layers[i][0]].run_cost == 0.0 for i in range(3))


def test_prune_preserves_parent_invariant(problem):
    grid = TimeGrid.from_horizon(problem.horizon, 6)
    tree = grow_random(problem, grid, 32, seed=4)
    pruned = tree.prune(run_cost_scores(tree), keep_fraction=0.25)
    for i in range(1, grid.steps + 1):
        assert pruned.layer_size(i) >= int(np.ceil(0.25 * 32))
        for j in pruned.layers[i]:
            node = pruned.nodes[j]
            assert node.parent is not None
            assert pruned.nodes[node.parent].time_index == i - 1
    # every node traces to a root
    for node in pruned.nodes:
        cur = node
        while cur.parent is not None:
            cur = pruned.nodes[cur.parent]
        assert cur.time_index == 0


def test_prune_missing_scores_rejected(problem):
    grid = TimeGrid.from_horizon(problem.horizon, 3)
    tree = grow_random(problem, grid, 8, seed=5)
    scores = run_cost_scores(tree)
    scores[2] = scores[2][:-1]
    with pytest.raises(ValueError):
        tree.prune(scores, keep_fraction=0.5)
    with pytest.raises(ValueError):
        tree.prune(run_cost_scores(tree), keep_fraction=0.0)


def test_dump_csv(tmp_path, problem):
    grid = TimeGrid.from_horizon(problem.horizon, 3)
    tree = grow_random(problem, grid, 4, seed=6)
    out = tmp_path / "tree.csv"
    tree.dump_csv(out, scores=run_cost_scores(tree))
    lines = out.read_text().strip().splitlines()
    assert lines[0].split(",") == [
        "id", "time_index", "parent_id", "x0", "x1", "k0", "k1", "u0", "run_cost", "rho",
    ]
    assert len(lines) == len(tree.nodes) + 1
