"""Stochastic optimal control problem definitions and benchmark instances.

A problem bundles controlled drift ``f(t, x, u)``, square invertible
diffusion ``sigma(t, x)``, running cost ``l(t, x, u) >= 0``, terminal cost
``g(x) >= 0``, finite control candidate sets, a region-of-interest box used
for exploration sampling and basis scaling, and the horizon.

Vectorization convention: ``drift`` and ``running_cost`` broadcast over
leading axes, i.e. they accept ``x`` of shape ``(..., n)`` and ``u`` of shape
``(..., m)`` (or a bare ``(m,)`` candidate) and return ``(..., n)`` /
``(...,)``.  ``diffusion`` / ``diffusion_inverse`` take a single state and
return ``(n, n)``; problems with state-independent noise set
``constant_diffusion=True`` so batched code can evaluate them once per step.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into `steps` intervals of length `dt`."""

    dt: float
    steps: int

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    @classmethod
    def from_horizon(cls, horizon: float, steps: int) -> "TimeGrid":
        grid = cls(dt=horizon / steps, steps=steps)
        assert abs(grid.steps * grid.dt - horizon) < 1e-12
        return grid

    @property
    def horizon(self) -> float:
        return self.dt * self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass(frozen=True)
class ControlProblem:
    name: str
    state_dim: int
    control_dim: int
    horizon: float
    drift: Callable  # (t, x, u) -> (..., n)
    diffusion: Callable  # (t, x) -> (n, n)
    diffusion_inverse: Callable  # (t, x) -> (n, n)
    running_cost: Callable  # (t, x, u) -> (...,)
    terminal_cost: Callable  # (x) -> (...,)
    control_candidates: np.ndarray  # (C, m)
    random_controls: np.ndarray  # (K, m)
    roi_lower: np.ndarray  # (n,)
    roi_upper: np.ndarray  # (n,)
    initial_state: np.ndarray  # (n,)
    constant_diffusion: bool = True

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ValueError("state_dim and control_dim must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        lo, hi = np.asarray(self.roi_lower), np.asarray(self.roi_upper)
        if lo.shape != (self.state_dim,) or hi.shape != (self.state_dim,):
            raise ValueError("roi bounds must have shape (state_dim,)")
        if not np.all(lo < hi):
            raise ValueError("roi lower bounds must be strictly below upper bounds")
        for cands in (self.control_candidates, self.random_controls):
            if np.asarray(cands).ndim != 2 or np.asarray(cands).shape[1] != self.control_dim:
                raise ValueError("control sets must have shape (count, control_dim)")
        if np.asarray(self.initial_state).shape != (self.state_dim,):
            raise ValueError("initial_state must have shape (state_dim,)")

    @property
    def roi_widths(self) -> np.ndarray:
        return np.asarray(self.roi_upper) - np.asarray(self.roi_lower)

    def sample_roi(self, rng: np.random.Generator, size=None) -> np.ndarray:
        return rng.uniform(self.roi_lower, self.roi_upper, size=None if size is None else (size, self.state_dim))


def validate_problem(problem: ControlProblem, rng: np.random.Generator, samples: int = 1000, tol: float = 1e-10):
    """Spot-check problem invariants on random (t, x, u) draws from roi x [0,T].

    Raises AssertionError on violation; used by the test suite and the
    `oracle` CLI subcommand.
    """
    ts = rng.uniform(0.0, problem.horizon, size=samples)
    xs = problem.sample_roi(rng, size=samples)
    cand_idx = rng.integers(0, len(problem.control_candidates), size=samples)
    us = np.asarray(problem.control_candidates)[cand_idx]
    eye = np.eye(problem.state_dim)
    for t, x, u in zip(ts, xs, us):
        assert problem.running_cost(t, x, u) >= 0.0
        sig = problem.diffusion(t, x)
        sig_inv = problem.diffusion_inverse(t, x)
        assert np.max(np.abs(sig_inv @ sig - eye)) < tol
    assert np.all(problem.terminal_cost(xs) >= 0.0)


def _constant_diffusion_pair(sigma_mat: np.ndarray):
    sigma_mat = np.asarray(sigma_mat, dtype=float)
    sigma_inv = np.linalg.inv(sigma_mat)
    return (lambda t, x: sigma_mat), (lambda t, x: sigma_inv)


def _bang_controls() -> np.ndarray:
    return np.array([[-1.0], [0.0], [1.0]])


def make_double_integrator_l1(
    fuel_weight: float = 0.5,
    noise: float = 0.5,
    terminal_weight=(4.0, 1.0),
    horizon: float = 3.0,
    initial_state=(2.0, 0.0),
    roi_lower=(-4.0, -3.0),
    roi_upper=(4.0, 3.0),
) -> ControlProblem:
    """Minimum-fuel double integrator: states (position, velocity), |u| cost.

    Noise enters the velocity channel; the position channel gets a tiny
    diagonal regularizer (1e-3 * noise) so the diffusion stays invertible.
    """
    a, s = float(fuel_weight), float(noise)
    q = np.asarray(terminal_weight, dtype=float)
    if a <= 0 or s <= 0 or np.any(q <= 0):
        raise ValueError("fuel_weight, noise, and terminal_weight must be positive")

    def drift(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        vel = np.broadcast_to(x[..., 1], np.broadcast_shapes(x[..., 1].shape, u[..., 0].shape))
        acc = np.broadcast_to(u[..., 0], vel.shape)
        return np.stack([vel, acc], axis=-1)

    def running_cost(t, x, u):
        u = np.asarray(u, dtype=float)
        return a * np.abs(u[..., 0])

    def terminal_cost(x):
        x = np.asarray(x, dtype=float)
        return q[0] * x[..., 0] ** 2 + q[1] * x[..., 1] ** 2

    diffusion, diffusion_inverse = _constant_diffusion_pair(np.diag([1e-3 * s, s]))
    return ControlProblem(
        name="double_integrator_l1",
        state_dim=2,
        control_dim=1,
        horizon=float(horizon),
        drift=drift,
        diffusion=diffusion,
        diffusion_inverse=diffusion_inverse,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        control_candidates=_bang_controls(),
        random_controls=_bang_controls(),
        roi_lower=np.asarray(roi_lower, dtype=float),
        roi_upper=np.asarray(roi_upper, dtype=float),
        initial_state=np.asarray(initial_state, dtype=float),
    )


def make_pendulum_l1(
    fuel_weight: float = 0.1,
    noise: float = 0.8,
    gravity_ratio: float = 9.81,
    damping: float = 0.1,
    terminal_weight=(4.0, 1.0),
    horizon: float = 3.0,
    initial_state=(np.pi, 0.0),
    roi_lower=(-2.0 * np.pi, -8.0),
    roi_upper=(2.0 * np.pi, 8.0),
) -> ControlProblem:
    """Minimum-fuel pendulum swing-up: states (angle, rate), upright at 0.

    angle'' = gravity_ratio * sin(angle) - damping * rate + u, so angle = 0
    is the unstable upright equilibrium and angle = pi hangs down.
    """
    a, s = float(fuel_weight), float(noise)
    q = np.asarray(terminal_weight, dtype=float)
    if a <= 0 or s <= 0 or np.any(q <= 0):
        raise ValueError("fuel_weight, noise, and terminal_weight must be positive")
    grav, damp = float(gravity_ratio), float(damping)

    def drift(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        rate = x[..., 1]
        acc = grav * np.sin(x[..., 0]) - damp * rate + u[..., 0]
        rate, acc = np.broadcast_arrays(rate, acc)
        return np.stack([rate, acc], axis=-1)

    def running_cost(t, x, u):
        u = np.asarray(u, dtype=float)
        return a * np.abs(u[..., 0])

    def terminal_cost(x):
        x = np.asarray(x, dtype=float)
        return q[0] * x[..., 0] ** 2 + q[1] * x[..., 1] ** 2

    diffusion, diffusion_inverse = _constant_diffusion_pair(np.diag([1e-3 * s, s]))
    return ControlProblem(
        name="pendulum_l1",
        state_dim=2,
        control_dim=1,
        horizon=float(horizon),
        drift=drift,
        diffusion=diffusion,
        diffusion_inverse=diffusion_inverse,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        control_candidates=_bang_controls(),
        random_controls=_bang_controls(),
        roi_lower=np.asarray(roi_lower, dtype=float),
        roi_upper=np.asarray(roi_upper, dtype=float),
        initial_state=np.asarray(initial_state, dtype=float),
    )


def control_grid(lower, upper, points: int) -> np.ndarray:
    """Cartesian grid of control candidates over a box, `points` per axis."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    axes = [np.linspace(lo, hi, points) for lo, hi in zip(lower, upper)]
    return np.array(list(itertools.product(*axes)))


def make_lq_problem(
    A,
    B,
    Qr,
    R,
    Qf,
    noise,
    horizon: float = 1.0,
    initial_state=None,
    roi_lower=None,
    roi_upper=None,
    control_lower=-1.0,
    control_upper=1.0,
    grid_points: int = 21,
) -> ControlProblem:
    """Linear-quadratic oracle problem: f = Ax + Bu, quadratic costs.

    Controls are a finite grid over a box, so the argmin policy approximates
    the continuous LQR minimizer. `noise` is a scalar (-> noise * I) or an
    n x n matrix.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Qr = np.asarray(Qr, dtype=float)
    R = np.asarray(R, dtype=float)
    Qf = np.asarray(Qf, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    m = B.shape[1]
    if B.shape != (n, m):
        raise ValueError(f"B must be ({n}, m)")
    if Qr.shape != (n, n) or Qf.shape != (n, n):
        raise ValueError("Qr and Qf must be n x n")
    if R.shape != (m, m):
        raise ValueError("R must be m x m")
    if np.any(np.linalg.eigvalsh(R) <= 0):
        raise ValueError("R must be positive definite")
    sigma_mat = noise * np.eye(n) if np.isscalar(noise) else np.asarray(noise, dtype=float)

    def drift(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return x @ A.T + u @ B.T

    def running_cost(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.einsum("...i,ij,...j->...", x, Qr, x) + np.einsum("...i,ij,...j->...", u, R, u)

    def terminal_cost(x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, Qf, x)

    candidates = control_grid(
        np.broadcast_to(control_lower, (m,)), np.broadcast_to(control_upper, (m,)), grid_points
    )
    diffusion, diffusion_inverse = _constant_diffusion_pair(sigma_mat)
    if initial_state is None:
        initial_state = np.zeros(n)
    if roi_lower is None:
        roi_lower = -2.0 * np.ones(n)
    if roi_upper is None:
        roi_upper = 2.0 * np.ones(n)
    return ControlProblem(
        name="lq",
        state_dim=n,
        control_dim=m,
        horizon=float(horizon),
        drift=drift,
        diffusion=diffusion,
        diffusion_inverse=diffusion_inverse,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        control_candidates=candidates,
        random_controls=candidates,
        roi_lower=np.asarray(roi_lower, dtype=float),
        roi_upper=np.asarray(roi_upper, dtype=float),
        initial_state=np.asarray(initial_state, dtype=float),
    )


def make_uncontrolled_heat(
    noise: float = 1.0,
    terminal_quadratic=1.0,
    horizon: float = 1.0,
    initial_state=(0.0,),
    roi_lower=(-3.0,),
    roi_upper=(3.0,),
) -> ControlProblem:
    """1D diagnostic problem dX = u dt + noise dW, zero running cost, g = q x^2.

    The candidate set for the policy is {0}, so the on-policy value is the
    uncontrolled heat-semigroup expectation E[g(X_T) | X_t = x]; bang
    controls appear only in the exploration set, as sampling drifts the
    backward pass must compensate for.
    """
    s = float(noise)
    q = float(terminal_quadratic)
    if s <= 0 or q <= 0:
        raise ValueError("noise and terminal_quadratic must be positive")

    def drift(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.broadcast_to(u[..., 0], np.broadcast_shapes(x[..., 0].shape, u[..., 0].shape))
        return out[..., None] + 0.0 * x

    def running_cost(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.zeros(np.broadcast_shapes(x[..., 0].shape, u[..., 0].shape))

    def terminal_cost(x):
        x = np.asarray(x, dtype=float)
        return q * x[..., 0] ** 2

    diffusion, diffusion_inverse = _constant_diffusion_pair(np.array([[s]]))
    return ControlProblem(
        name="uncontrolled_heat",
        state_dim=1,
        control_dim=1,
        horizon=float(horizon),
        drift=drift,
        diffusion=diffusion,
        diffusion_inverse=diffusion_inverse,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        control_candidates=np.array([[0.0]]),
        random_controls=_bang_controls(),
        roi_lower=np.asarray(roi_lower, dtype=float),
        roi_upper=np.asarray(roi_upper, dtype=float),
        initial_state=np.asarray(initial_state, dtype=float),
    )
