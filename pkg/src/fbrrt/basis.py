"""Multivariate Chebyshev features up to total degree 2 and weighted ridge LS.

Feature ordering for an n-dimensional input, after the affine map z of x
from `domain_box` onto [-1, 1]^n:

    [ 1,
      T1(z_0), ..., T1(z_{n-1}),
      T2(z_0), ..., T2(z_{n-1}),
      T1(z_j) * T1(z_k)  for j < k in lexicographic order ]

with T1(z) = z and T2(z) = 2 z^2 - 1, so the feature count is
p = 1 + n + n(n+1)/2.  Inputs outside the box extrapolate (no clipping);
the affine map keeps gradients valid everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularRegressionError(RuntimeError):
    """Weighted normal system is numerically singular and ridge is zero."""


def feature_count(n: int) -> int:
    return 1 + n + n * (n + 1) // 2


def _cross_pairs(n: int) -> list[tuple[int, int]]:
    return [(j, k) for j in range(n) for k in range(j + 1, n)]


def _scale(x, lower, upper):
    x = np.asarray(x, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    return (2.0 * x - (upper + lower)) / (upper - lower)


def features(x, lower, upper) -> np.ndarray:
    """Feature map; accepts x of shape (n,) or (B, n), returns (p,) or (B, p)."""
    z = _scale(x, lower, upper)
    squeeze = z.ndim == 1
    z = np.atleast_2d(z)
    B, n = z.shape
    cols = [np.ones(B), *(z[:, k] for k in range(n)), *(2.0 * z[:, k] ** 2 - 1.0 for k in range(n))]
    cols.extend(z[:, j] * z[:, k] for j, k in _cross_pairs(n))
    out = np.stack(cols, axis=1)
    return out[0] if squeeze else out


def feature_grad(x, lower, upper) -> np.ndarray:
    """Exact gradient of the feature map at a single x; shape (p, n)."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    z = _scale(x, lower, upper)
    n = z.shape[0]
    scale = 2.0 / (upper - lower)  # dz/dx per dimension
    p = feature_count(n)
    grad = np.zeros((p, n))
    for k in range(n):
        grad[1 + k, k] = scale[k]
        grad[1 + n + k, k] = 4.0 * z[k] * scale[k]
    for c, (j, k) in enumerate(_cross_pairs(n)):
        grad[1 + 2 * n + c, j] = z[k] * scale[j]
        grad[1 + 2 * n + c, k] = z[j] * scale[k]
    return grad


def value_eval(x, alpha, lower, upper):
    """V(x) = features(x) @ alpha; batched when x is (B, n)."""
    alpha = np.asarray(alpha, dtype=float)
    phi = features(x, lower, upper)
    if phi.shape[-1] != alpha.shape[0]:
        raise ValueError(f"coefficient dimension {alpha.shape[0]} != feature dimension {phi.shape[-1]}")
    return phi @ alpha


def value_grad(x, alpha, lower, upper) -> np.ndarray:
    """Gradient of V at x; accepts (n,) or (B, n), returns matching shape."""
    alpha = np.asarray(alpha, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    z = _scale(x, lower, upper)
    squeeze = z.ndim == 1
    z = np.atleast_2d(z)
    B, n = z.shape
    if alpha.shape[0] != feature_count(n):
        raise ValueError(f"coefficient dimension {alpha.shape[0]} != feature dimension {feature_count(n)}")
    scale = 2.0 / (upper - lower)
    grad = np.zeros((B, n))
    for k in range(n):
        grad[:, k] = (alpha[1 + k] + alpha[1 + n + k] * 4.0 * z[:, k]) * scale[k]
    for c, (j, k) in enumerate(_cross_pairs(n)):
        a = alpha[1 + 2 * n + c]
        grad[:, j] += a * z[:, k] * scale[j]
        grad[:, k] += a * z[:, j] * scale[k]
    return grad[0] if squeeze else grad


def weighted_least_squares(phi: np.ndarray, targets: np.ndarray, weights: np.ndarray, ridge: float) -> np.ndarray:
    """Minimize sum_j w_j (y_j - phi_j @ a)^2 + ridge * |a|^2 via SVD lstsq.

    Raises SingularRegressionError when ridge == 0 and the weighted design
    is rank deficient.
    """
    phi = np.asarray(phi, dtype=float)
    targets = np.asarray(targets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if phi.shape[0] != targets.shape[0] or phi.shape[0] != weights.shape[0]:
        raise ValueError("row counts of features, targets, and weights must agree")
    if np.any(weights < 0) or not np.any(weights > 0):
        raise ValueError("weights must be nonnegative with at least one positive")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    p = phi.shape[1]
    sw = np.sqrt(weights)
    A = phi * sw[:, None]
    b = targets * sw
    if ridge > 0:
        A = np.vstack([A, np.sqrt(ridge) * np.eye(p)])
        b = np.concatenate([b, np.zeros(p)])
    alpha, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if ridge == 0 and rank < p:
        raise SingularRegressionError(f"weighted design has rank {rank} < {p} and ridge is zero")
    return alpha


@dataclass
class ValueCoefficients:
    """Per-timestep basis weights alpha_1..alpha_N plus the scaling box.

    `alphas` has shape (N, p); row i-1 holds alpha_i, the coefficients of
    the value approximation at time index i (1-based; there is no alpha_0
    because the initial layer carries no state diversity to regress on).
    """

    alphas: np.ndarray  # (N, p)
    lower: np.ndarray  # (n,)
    upper: np.ndarray  # (n,)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = self.lower.shape[0]
        if self.alphas.ndim != 2 or self.alphas.shape[1] != feature_count(n):
            raise ValueError("alphas must have shape (N, p) with p matching the box dimension")
        if not np.all(np.isfinite(self.alphas)):
            raise ValueError("coefficients must be finite")

    @property
    def steps(self) -> int:
        return self.alphas.shape[0]

    def alpha(self, i: int) -> np.ndarray:
        if not 1 <= i <= self.steps:
            raise IndexError(f"time index {i} outside 1..{self.steps}")
        return self.alphas[i - 1]

    def value(self, i: int, x):
        return value_eval(x, self.alpha(i), self.lower, self.upper)

    def grad(self, i: int, x):
        return value_grad(x, self.alpha(i), self.lower, self.upper)

    def to_dict(self) -> dict:
        n = self.lower.shape[0]
        return {
            "n": n,
            "p": feature_count(n),
            "steps": self.steps,
            "box": {"lower": self.lower.tolist(), "upper": self.upper.tolist()},
            "alphas": self.alphas.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ValueCoefficients":
        return cls(
            alphas=np.asarray(data["alphas"], dtype=float),
            lower=np.asarray(data["box"]["lower"], dtype=float),
            upper=np.asarray(data["box"]["upper"], dtype=float),
        )


def quadratic_to_coefficients(P, b, c, lower, upper) -> np.ndarray:
    """Exact basis coefficients of q(x) = x'Px + b'x + c on the given box.

    Degree-2 Chebyshev features span all quadratics, so the conversion is
    closed form through the affine box map x = S z + t.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = lower.shape[0]
    P = np.asarray(P, dtype=float).reshape(n, n)
    P = 0.5 * (P + P.T)
    b = np.asarray(b, dtype=float).reshape(n)
    S = np.diag((upper - lower) / 2.0)
    t = (upper + lower) / 2.0
    Pz = S @ P @ S
    bz = S @ (2.0 * P @ t + b)
    cz = float(t @ P @ t + b @ t + c)
    alpha = np.zeros(feature_count(n))
    alpha[0] = cz + np.sum(np.diag(Pz)) / 2.0  # z_k^2 = (T2 + 1) / 2
    alpha[1 : 1 + n] = bz
    alpha[1 + n : 1 + 2 * n] = np.diag(Pz) / 2.0
    for idx, (j, k) in enumerate(_cross_pairs(n)):
        alpha[1 + 2 * n + idx] = 2.0 * Pz[j, k]
    return alpha
