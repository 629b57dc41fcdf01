"""Branch-sampled path tree: per-timestep particle layers with parent edges.

Each node carries the drift sample and control used on its incoming edge and
the running cost accumulated along its unique root path, so every node at
layer i represents one sampled path of the discrete path measure at t_i with
mass 1/M_i.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problem import ControlProblem, TimeGrid


@dataclass
class TreeNode:
    id: int
    time_index: int
    state: np.ndarray  # (n,)
    parent: Optional[int]  # node id; None for roots
    control: Optional[np.ndarray]  # (m,) control on the incoming edge
    drift: Optional[np.ndarray]  # (n,) drift sample on the incoming edge
    run_cost: float


class BranchTree:
    """Layered tree over a time grid; single-writer during growth."""

    def __init__(self, problem: ControlProblem, grid: TimeGrid):
        self.problem = problem
        self.grid = grid
        self.nodes: list[TreeNode] = []
        self.layers: list[list[int]] = [[] for _ in range(grid.steps + 1)]
        # per-layer state matrix, grown by doubling so nearest() never rebuilds
        self._state_buf: list[Optional[np.ndarray]] = [None] * (grid.steps + 1)
        self._state_len: list[int] = [0] * (grid.steps + 1)

    def _push_state(self, i: int, state: np.ndarray):
        buf = self._state_buf[i]
        if buf is None:
            buf = np.empty((4, state.shape[0]))
            self._state_buf[i] = buf
        elif self._state_len[i] == buf.shape[0]:
            buf = np.concatenate([buf, np.empty_like(buf)])
            self._state_buf[i] = buf
        buf[self._state_len[i]] = state
        self._state_len[i] += 1

    def add_root(self, x0=None) -> int:
        x0 = np.asarray(self.problem.initial_state if x0 is None else x0, dtype=float)
        node = TreeNode(id=len(self.nodes), time_index=0, state=x0, parent=None, control=None, drift=None, run_cost=0.0)
        self.nodes.append(node)
        self.layers[0].append(node.id)
        self._push_state(0, x0)
        return node.id

    def add_edge(self, parent_id: int, control, drift, child_state, cost_increment: float | None = None) -> int:
        """Append a child under `parent_id`; returns the child id.

        `cost_increment` is l(t_i, x_parent, u) * dt; computed from the
        problem when not supplied (callers stepping whole batches pass it in
        precomputed).
        """
        parent = self.nodes[parent_id]
        i = parent.time_index
        if i >= self.grid.steps:
            raise ValueError("cannot expand a node at the terminal layer")
        drift = np.asarray(drift, dtype=float)
        if not np.all(np.isfinite(drift)):
            raise ValueError("drift must be finite")
        control = np.asarray(control, dtype=float)
        if cost_increment is None:
            cost_increment = float(self.problem.running_cost(i * self.grid.dt, parent.state, control)) * self.grid.dt
        node = TreeNode(
            id=len(self.nodes),
            time_index=i + 1,
            state=np.asarray(child_state, dtype=float),
            parent=parent_id,
            control=control,
            drift=drift,
            run_cost=parent.run_cost + cost_increment,
        )
        self.nodes.append(node)
        self.layers[i + 1].append(node.id)
        self._push_state(i + 1, node.state)
        return node.id

    def layer_size(self, i: int) -> int:
        return len(self.layers[i])

    @property
    def layer_sizes(self) -> list[int]:
        return [len(layer) for layer in self.layers]

    def layer_states(self, i: int) -> np.ndarray:
        """(M_i, n) states of layer i (view into the shared buffer)."""
        if self._state_buf[i] is None or self._state_len[i] != len(self.layers[i]):
            # trees assembled node-by-node (prune) fill the buffer lazily
            self._state_buf[i] = np.array([self.nodes[j].state for j in self.layers[i]])
            self._state_len[i] = len(self.layers[i])
            return self._state_buf[i]
        return self._state_buf[i][: self._state_len[i]]

    def layer_nodes(self, i: int) -> list[TreeNode]:
        return [self.nodes[j] for j in self.layers[i]]

    def path_at(self, i: int, j: int) -> list[tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]]:
        """Root-to-node (state, drift, control) triples for the j-th node of layer i.

        drift/control entries describe the edge *into* each state (None at
        the root).
        """
        if not 0 <= i <= self.grid.steps:
            raise IndexError(f"layer {i} out of range")
        if not 0 <= j < len(self.layers[i]):
            raise IndexError(f"node {j} out of range for layer {i}")
        node = self.nodes[self.layers[i][j]]
        path = []
        while node is not None:
            path.append((node.state, node.drift, node.control))
            node = self.nodes[node.parent] if node.parent is not None else None
        path.reverse()
        return path

    def nearest(self, i: int, query, metric_weights) -> tuple[TreeNode, int]:
        """Node of layer i minimizing the weighted squared Euclidean distance.

        Brute-force scan; ties resolve to the lowest node id (layer lists are
        in insertion = id order).
        """
        if not self.layers[i]:
            raise ValueError(f"layer {i} is empty")
        states = self.layer_states(i)
        diff = states - np.asarray(query, dtype=float)
        dists = (diff * diff) @ np.asarray(metric_weights, dtype=float)
        j = int(np.argmin(dists))
        return self.nodes[self.layers[i][j]], self.layers[i][j]

    def prune(self, scores: list[Optional[np.ndarray]], keep_fraction: float) -> "BranchTree":
        """Keep the lowest-scored ceil(keep_fraction * M_i) nodes per layer,
        closed under ancestry, and rebuild a compact tree.

        `scores` is indexed by layer; entries for layers 1..N must align with
        the layer node order. Running costs, controls, and drifts carry over.
        """
        if not 0 < keep_fraction <= 1:
            raise ValueError("keep_fraction must be in (0, 1]")
        keep = set(self.layers[0])
        for i in range(1, self.grid.steps + 1):
            layer = self.layers[i]
            if not layer:
                continue
            if i >= len(scores) or scores[i] is None or len(scores[i]) != len(layer):
                raise ValueError(f"missing or misaligned scores for layer {i}")
            n_keep = int(np.ceil(keep_fraction * len(layer)))
            order = np.argsort(np.asarray(scores[i]), kind="stable")[:n_keep]
            keep.update(layer[j] for j in order)
        # ancestry closure keeps every kept node's full root path
        for node_id in list(keep):
            node = self.nodes[node_id]
            while node.parent is not None and node.parent not in keep:
                keep.add(node.parent)
                node = self.nodes[node.parent]
        out = BranchTree(self.problem, self.grid)
        remap: dict[int, int] = {}
        for old_id in sorted(keep):
            node = self.nodes[old_id]
            new = TreeNode(
                id=len(out.nodes),
                time_index=node.time_index,
                state=node.state,
                parent=remap[node.parent] if node.parent is not None else None,
                control=node.control,
                drift=node.drift,
                run_cost=node.run_cost,
            )
            remap[old_id] = new.id
            out.nodes.append(new)
            out.layers[node.time_index].append(new.id)
        return out

    def dump_csv(self, path, scores: list[Optional[np.ndarray]] | None = None):
        """Write (id, time_index, parent_id, x..., k..., u..., run_cost, rho) rows."""
        n, m = self.problem.state_dim, self.problem.control_dim
        rho_by_id: dict[int, float] = {}
        if scores is not None:
            for i, layer in enumerate(self.layers):
                if i < len(scores) and scores[i] is not None:
                    for node_id, rho in zip(layer, scores[i]):
                        rho_by_id[node_id] = float(rho)
        header = (
            ["id", "time_index", "parent_id"]
            + [f"x{k}" for k in range(n)]
            + [f"k{k}" for k in range(n)]
            + [f"u{k}" for k in range(m)]
            + ["run_cost", "rho"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for node in self.nodes:
                drift = node.drift if node.drift is not None else [float("nan")] * n
                control = node.control if node.control is not None else [float("nan")] * m
                writer.writerow(
                    [node.id, node.time_index, node.parent if node.parent is not None else ""]
                    + [f"{v:.12g}" for v in node.state]
                    + [f"{v:.12g}" for v in drift]
                    + [f"{v:.12g}" for v in control]
                    + [f"{node.run_cost:.12g}", f"{rho_by_id.get(node.id, float('nan')):.12g}"]
                )


def default_metric_weights(problem: ControlProblem) -> np.ndarray:
    """1 / roi-width^2 per dimension, so mixed-unit states compare fairly."""
    return 1.0 / problem.roi_widths**2
