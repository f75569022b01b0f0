"""Value iteration for the fully observable decision process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelBundle

__all__ = ["ValueIterationResult", "value_iteration", "q_values", "evaluate_policy"]


@dataclass(frozen=True)
class ValueIterationResult:
    values: np.ndarray        # optimal discounted value per state
    policy: np.ndarray        # greedy action index per state
    iterations: int
    converged: bool


def q_values(model: ModelBundle, v: np.ndarray) -> np.ndarray:
    """Action-value matrix Q[a, s] = R[a, s] + gamma * sum_s' T[a][s, s'] v[s']."""
    return model.reward + model.discount.gamma * np.einsum("ast,t->as", model.per_action, v)


def value_iteration(model: ModelBundle, tol: float = 1e-10, max_iter: int = 100_000) -> ValueIterationResult:
    """Iterate the Bellman optimality operator from V = 0 to sup-norm tolerance.

    Ties in the greedy policy break to the lowest action index.  Hitting
    ``max_iter`` without meeting the tolerance is reported via the
    ``converged`` flag rather than raised.
    """
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    v = np.zeros(model.K)
    converged = False
    iterations = max_iter
    for n in range(1, max_iter + 1):
        q = q_values(model, v)
        v_next = q.max(axis=0)
        delta = np.abs(v_next - v).max()
        v = v_next
        if delta < tol:
            converged = True
            iterations = n
            break
    policy = q_values(model, v).argmax(axis=0)
    return ValueIterationResult(values=v, policy=policy, iterations=iterations, converged=converged)


def evaluate_policy(model: ModelBundle, policy: np.ndarray) -> np.ndarray:
    """Exact discounted value of a stationary policy via (I - gamma*A_pi) V = R_pi."""
    idx = np.arange(model.K)
    a_pi = model.per_action[policy, idx, :]
    r_pi = model.reward[policy, idx]
    return np.linalg.solve(np.eye(model.K) - model.discount.gamma * a_pi, r_pi)
