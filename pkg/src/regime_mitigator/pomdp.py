"""Belief filtering, point-based value iteration, and the alpha-vector policy."""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ctmc import embed_generator, matrix_exponential
from .model import HEALTHY, ModelBundle
from .rng import stream

__all__ = [
    "BELIEF_UNDERFLOW",
    "AlphaVectorSet",
    "BeliefFilter",
    "PbviResult",
    "uniform_belief",
    "corner_belief",
    "belief_step",
    "generate_belief_points",
    "pbvi_backup",
    "pbvi_solve",
    "alpha_policy",
    "value_of_information",
    "save_alpha_set",
    "load_alpha_set",
]

# Below this normalizer the observation is effectively impossible under the
# current belief; the filter resets to the uniform distribution.
BELIEF_UNDERFLOW = 1e-300


def uniform_belief(K: int) -> np.ndarray:
    return np.full(K, 1.0 / K)


def corner_belief(K: int, s: int) -> np.ndarray:
    b = np.zeros(K)
    b[s] = 1.0
    return b


class BeliefFilter:
    """Bayesian filter over regimes with precomputed per-action generators.

    The prediction step propagates the belief over the sojourn with
    exp(Q^(a) tau); the correction step reweights by the observation
    likelihood column and renormalizes.
    """

    def __init__(self, model: ModelBundle):
        self.observation = model.observation
        self.generators = embed_generator(model.per_action, model.discount.dt)
        self.K = model.K

    def step(self, b: np.ndarray, a: int, tau: float, z: int) -> np.ndarray:
        if tau < 0.0:
            raise ValueError("sojourn time must be nonnegative")
        pred = b @ matrix_exponential(self.generators[a] * tau) if tau > 0.0 else b
        post = self.observation[:, z] * pred
        eta = post.sum()
        if eta < BELIEF_UNDERFLOW:
            return uniform_belief(self.K)
        return post / eta


def belief_step(b: np.ndarray, a: int, tau: float, z: int, model: ModelBundle) -> np.ndarray:
    """One predict/correct update of the belief after action a, sojourn tau, label z."""
    return BeliefFilter(model).step(np.asarray(b, dtype=float), a, tau, z)


def generate_belief_points(K: int, n_random: int, seed: int) -> np.ndarray:
    """Structured simplex coverage plus Dirichlet(1,...,1) samples.

    Corners, edge midpoints, face centroids, and the simplex centroid cover
    the boundary; the random points fill the interior.  Exact duplicates
    (e.g. midpoint == centroid for K = 2) are dropped, keeping first occurrence.
    """
    if K < 2:
        raise ValueError("need at least two regimes")
    points: list[np.ndarray] = [corner_belief(K, s) for s in range(K)]
    for size in (2, 3):
        for support in itertools.combinations(range(K), size):
            b = np.zeros(K)
            b[list(support)] = 1.0 / size
            points.append(b)
    points.append(uniform_belief(K))
    if n_random:
        points.extend(stream(seed).dirichlet(np.ones(K), size=n_random))
    seen = {}
    for b in points:
        seen.setdefault(b.tobytes(), b)
    return np.array(list(seen.values()))


@dataclass(frozen=True)
class AlphaVectorSet:
    """Piecewise-linear convex value function: vectors (n, K) with action tags (n,)."""

    vectors: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        if self.vectors.ndim != 2 or len(self.vectors) == 0:
            raise ValueError("alpha-vector set must be a nonempty (n, K) array")
        if len(self.actions) != len(self.vectors):
            raise ValueError("one action tag per vector required")

    def __len__(self) -> int:
        return len(self.vectors)

    def values_at(self, beliefs: np.ndarray) -> np.ndarray:
        """Upper-envelope value at each belief (rows of ``beliefs``)."""
        return (np.atleast_2d(beliefs) @ self.vectors.T).max(axis=1)


def alpha_policy(gamma_set: AlphaVectorSet, b: np.ndarray) -> tuple[int, float]:
    """Action tag and value of the alpha-vector maximizing the inner product with b."""
    scores = gamma_set.vectors @ np.asarray(b, dtype=float)
    i = int(scores.argmax())  # ties break to the lowest vector index
    return int(gamma_set.actions[i]), float(scores[i])


def _dedupe(vectors: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    seen = {}
    for vec, act in zip(vectors, actions):
        seen.setdefault((vec.tobytes(), int(act)), (vec, int(act)))
    kept = list(seen.values())
    return np.array([v for v, _ in kept]), np.array([a for _, a in kept], dtype=int)


def _prune_dominated(vectors: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop vectors weakly dominated entrywise by another; never changes the envelope."""
    n = len(vectors)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        if not keep[i]:
            continue
        dominated = np.all(vectors <= vectors[i], axis=1) & (np.arange(n) != i) & keep
        # strict somewhere, so exact duplicates (already deduped) are unaffected
        dominated &= np.any(vectors < vectors[i], axis=1)
        keep[dominated] = False
    return vectors[keep], actions[keep]


def pbvi_backup(beliefs: np.ndarray, gamma_set: AlphaVectorSet, model: ModelBundle) -> AlphaVectorSet:
    """One point-based Bellman backup over the sampled belief set.

    For each belief, build the best one-step alpha-vector per action using
    the current set's observation-conditional maximizers, keep the action
    whose vector scores highest at that belief, then dedupe.
    """
    b_mat = np.atleast_2d(np.asarray(beliefs, dtype=float))
    n_b = len(b_mat)
    gamma = model.discount.gamma
    obs = model.observation
    g_vecs = gamma_set.vectors
    best_val = np.full(n_b, -np.inf)
    best_vec = np.zeros((n_b, model.K))
    best_act = np.zeros(n_b, dtype=int)
    for a in range(model.M):
        trans = model.per_action[a]
        pred = b_mat @ trans                                # (n_b, K) next-state weights
        future = np.zeros((n_b, model.K))
        for z in range(model.K):
            weighted = pred * obs[:, z]                     # (n_b, K)
            pick = (weighted @ g_vecs.T).argmax(axis=1)     # best alpha per belief for (a, z)
            future += obs[:, z] * g_vecs[pick]
        alpha_a = model.reward[a] + gamma * future @ trans.T
        vals = (alpha_a * b_mat).sum(axis=1)
        better = vals > best_val                            # strict: ties keep lowest action
        best_val[better] = vals[better]
        best_vec[better] = alpha_a[better]
        best_act[better] = a
    return AlphaVectorSet(*_dedupe(best_vec, best_act))


@dataclass(frozen=True)
class PbviResult:
    alpha_set: AlphaVectorSet
    iterations: int
    residuals: np.ndarray          # max per-sweep value change on the belief grid
    policy_stable: bool            # stopped by policy stability (else budget exhausted)


def pbvi_solve(
    model: ModelBundle,
    beliefs: np.ndarray,
    warm_start: np.ndarray,
    budget: int = 500,
    stability_window: int = 25,
    prune: bool = True,
) -> PbviResult:
    """Point-based value iteration warm-started from the MDP value function.

    The initial set carries one copy of the MDP values per action so that
    every action tag is available from sweep 0.  Iteration stops when the
    greedy action map on the belief grid is unchanged for
    ``stability_window`` consecutive sweeps, or at the budget; the residual
    trace is diagnostic only (the point-based operator is non-contracting).
    """
    if budget < 1 or stability_window < 1:
        raise ValueError("budget and stability_window must be at least 1")
    b_mat = np.atleast_2d(np.asarray(beliefs, dtype=float))
    warm = np.asarray(warm_start, dtype=float)
    current = AlphaVectorSet(np.tile(warm, (model.M, 1)), np.arange(model.M))
    prev_vals = current.values_at(b_mat)
    prev_map = _greedy_map(current, b_mat)
    residuals: list[float] = []
    stable_run = 0
    iterations = 0
    policy_stable = False
    for _ in range(budget):
        current = pbvi_backup(b_mat, current, model)
        if prune:
            current = AlphaVectorSet(*_prune_dominated(current.vectors, current.actions))
        iterations += 1
        vals = current.values_at(b_mat)
        residuals.append(float(np.abs(vals - prev_vals).max()))
        new_map = _greedy_map(current, b_mat)
        stable_run = stable_run + 1 if np.array_equal(new_map, prev_map) else 0
        prev_vals, prev_map = vals, new_map
        if stable_run >= stability_window:
            policy_stable = True
            break
    return PbviResult(current, iterations, np.array(residuals), policy_stable)


def _greedy_map(gamma_set: AlphaVectorSet, b_mat: np.ndarray) -> np.ndarray:
    scores = b_mat @ gamma_set.vectors.T
    return gamma_set.actions[scores.argmax(axis=1)]


def value_of_information(v_mdp: np.ndarray, gamma_set: AlphaVectorSet, b0: np.ndarray) -> float:
    """Perfect-information value minus the alpha-policy value at b0, unclamped.

    A small negative result indicates point-based approximation slack and is
    surfaced as a warning rather than clipped away.
    """
    b0 = np.asarray(b0, dtype=float)
    voi = float(b0 @ np.asarray(v_mdp, dtype=float) - alpha_policy(gamma_set, b0)[1])
    if voi < 0.0:
        warnings.warn(f"negative value of information ({voi:.3e}): point-based approximation slack", stacklevel=2)
    return voi


def save_alpha_set(path, gamma_set: AlphaVectorSet, model: ModelBundle, metadata: dict | None = None) -> None:
    """Serialize the alpha-vector set with the model hash and solver metadata."""
    payload = {
        "model_hash": model.hash(),
        "vectors": gamma_set.vectors.tolist(),
        "actions": gamma_set.actions.tolist(),
        "metadata": metadata or {},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_alpha_set(path, model: ModelBundle | None = None) -> AlphaVectorSet:
    raw = json.loads(Path(path).read_text())
    if model is not None and raw.get("model_hash") != model.hash():
        raise ValueError("alpha-vector set was solved for a different model")
    return AlphaVectorSet(np.asarray(raw["vectors"], dtype=float), np.asarray(raw["actions"], dtype=int))
