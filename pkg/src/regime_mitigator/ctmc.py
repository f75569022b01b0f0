"""Continuous-time embedding: generators, closed-form policy values, theory curve.

The discrete kernel A is embedded first-order as Q = (A - I)/dt; both the
simulator and the closed-form solution consume the same approximate Q, so
their agreement certifies internal consistency of the continuous-time
pipeline (the exact matrix-logarithm embedding is deliberately not used).
"""

from __future__ import annotations

import math

import numpy as np

from .model import DiscountSpec, ModelBundle

__all__ = [
    "embed_generator",
    "policy_generator",
    "continuous_rates",
    "solve_ct_bellman",
    "matrix_exponential",
    "expected_return_curve",
]

# Scaling-and-squaring: halve until the 1-norm is below this before applying
# the degree-6 diagonal rational approximant.
_SQUARING_THRESHOLD = 0.5
_PADE_DEGREE = 6


def embed_generator(a_mat: np.ndarray, dt: float) -> np.ndarray:
    """First-order generator (A - I)/dt; rows sum to zero.

    Accepts one kernel or a stack of them (leading axes broadcast).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    a_mat = np.asarray(a_mat, dtype=float)
    return (a_mat - np.eye(a_mat.shape[-1])) / dt


def policy_generator(model: ModelBundle, policy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Policy-specific rate matrix and reward-rate vector (Q_pi, c_pi)."""
    policy = np.asarray(policy, dtype=int)
    idx = np.arange(model.K)
    gens = embed_generator(model.per_action, model.discount.dt)
    q_pi = gens[policy, idx, :]
    c_pi = model.reward[policy, idx] / model.discount.dt
    return q_pi, c_pi


def continuous_rates(discount: DiscountSpec, reward: np.ndarray) -> tuple[float, np.ndarray]:
    """Continuous discount rate -ln(gamma)/dt and reward rates R/dt."""
    if discount.gamma <= 0.0:
        raise ValueError("continuous discount rate requires gamma in (0, 1)")
    return discount.rho_ct, np.asarray(reward, dtype=float) / discount.dt


def solve_ct_bellman(q_pi: np.ndarray, c_pi: np.ndarray, rho_ct: float) -> np.ndarray:
    """Solve (rho*I - Q_pi) V = c_pi; unique for rho > 0 since Q_pi has zero row sums."""
    if rho_ct <= 0.0:
        raise ValueError("rho_ct must be positive for a unique bounded solution")
    q_pi = np.asarray(q_pi, dtype=float)
    return np.linalg.solve(rho_ct * np.eye(q_pi.shape[0]) - q_pi, np.asarray(c_pi, dtype=float))


def _pade_core(a: np.ndarray) -> np.ndarray:
    """Degree-6 diagonal rational approximant to exp(a) for small ||a||."""
    k = a.shape[0]
    # c[j+1] = c[j] * (degree - j) / ((2*degree - j) * (j + 1))
    c = 1.0
    even = c * np.eye(k)   # sum over even powers
    odd = np.zeros_like(a)  # sum over odd powers
    power = np.eye(k)
    for j in range(_PADE_DEGREE):
        c *= (_PADE_DEGREE - j) / ((2 * _PADE_DEGREE - j) * (j + 1))
        power = power @ a
        if j % 2 == 0:
            odd += c * power
        else:
            even += c * power
    # exp(a) ~ (even - odd)^{-1} (even + odd)
    return np.linalg.solve(even - odd, even + odd)


def matrix_exponential(m: np.ndarray) -> np.ndarray:
    """exp(m) by scaling-and-squaring around a fixed degree-6 rational core."""
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix exponential requires finite entries")
    norm = np.abs(m).sum(axis=0).max() if m.size else 0.0
    squarings = max(0, math.ceil(math.log2(norm / _SQUARING_THRESHOLD))) if norm > _SQUARING_THRESHOLD else 0
    out = _pade_core(m / (2.0 ** squarings))
    for _ in range(squarings):
        out = out @ out
    return out


def expected_return_curve(b0: np.ndarray, q_pi: np.ndarray, rho_ct: float, v_ct: np.ndarray, grid) -> np.ndarray:
    """Theoretical expected cumulative discounted reward at each grid time.

    J(t) = b0.V - b0.exp[(Q_pi - rho*I) t].V; J(0) = 0 and J(t) -> b0.V.
    """
    b0 = np.asarray(b0, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if grid.size and (np.any(np.diff(grid) < 0.0) or grid.min() < 0.0):
        raise ValueError("time grid must be ascending and nonnegative")
    gen = np.asarray(q_pi, dtype=float) - rho_ct * np.eye(len(v_ct))
    total = b0 @ v_ct
    return np.array([total - b0 @ matrix_exponential(gen * t) @ v_ct for t in grid])
