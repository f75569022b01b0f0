"""Model-free learners and heuristic controllers' decision logic.

Tabular Q-learning discretizes the belief simplex onto a uniform grid;
REINFORCE works on a fixed nonlinear feature map of the belief.  The
MCDA/TOPSIS and k-step heuristics react to raw observation labels with
dwell hysteresis, mirroring operator-style intervention rules.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import HEALTHY, ModelBundle
from .rng import stream

__all__ = [
    "ENTROPY_EPS",
    "DWELL_SECONDS",
    "MCDA_WEIGHTS",
    "MCDA_SMOOTHING",
    "BeliefGrid",
    "QTable",
    "SoftmaxPolicyParams",
    "McdaState",
    "KStepState",
    "enumerate_belief_grid",
    "nearest_grid_point",
    "reinforce_features",
    "softmax_probabilities",
    "topsis_rank",
    "mcda_step",
    "kstep_step",
    "qlearning_train",
    "reinforce_train",
    "save_qtable",
    "load_qtable",
    "save_softmax_params",
    "load_softmax_params",
]

ENTROPY_EPS = 1e-12          # inside ln(b + eps) of the entropy feature
DWELL_SECONDS = 0.5          # minimum time between heuristic action switches
MCDA_SMOOTHING = 0.3         # EMA weight on the newest one-hot observation
MCDA_WEIGHTS = (0.35, 0.25, 0.15, 0.10, 0.15)
MCDA_IDLE_POSTERIOR = 0.75   # healthy-posterior gate for overriding to the inert action
MCDA_IDLE_KPI = 0.25         # KPI-proxy gate (1 - healthy posterior) for the same override


@dataclass(frozen=True)
class BeliefGrid:
    """Uniform simplex grid: all compositions of 1/spacing, lexicographic order."""

    spacing: float
    points: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def enumerate_belief_grid(K: int, delta: float) -> BeliefGrid:
    """All beliefs with entries in {0, delta, ..., 1} summing to 1.

    The count is the binomial C(K - 1 + 1/delta, K - 1); 1/delta must be
    integral.
    """
    steps = 1.0 / delta
    n = round(steps)
    if abs(steps - n) > 1e-9:
        raise ValueError(f"1/delta must be integral, got 1/{delta} = {steps}")
    points = []
    for cut in itertools.combinations(range(n + K - 1), K - 1):
        bounds = (-1,) + cut + (n + K - 1,)
        points.append([bounds[i + 1] - bounds[i] - 1 for i in range(K)])
    points = np.array(points, dtype=float) * delta
    return BeliefGrid(spacing=delta, points=points)


def nearest_grid_point(b: np.ndarray, grid: BeliefGrid) -> int:
    """Index of the l1-nearest grid point; ties break to the lowest index."""
    return int(np.abs(grid.points - np.asarray(b, dtype=float)).sum(axis=1).argmin())


def reinforce_features(b: np.ndarray) -> np.ndarray:
    """Belief features: raw entries, pairwise products (i < j), and entropy."""
    b = np.asarray(b, dtype=float)
    K = b.shape[0]
    pairs = [b[i] * b[j] for i in range(K) for j in range(i + 1, K)]
    entropy = -np.sum(b * np.log(b + ENTROPY_EPS))
    return np.concatenate([b, pairs, [entropy]])


def softmax_probabilities(theta: np.ndarray, features: np.ndarray) -> np.ndarray:
    logits = theta @ features
    logits = logits - logits.max()
    e = np.exp(logits)
    return e / e.sum()


@dataclass
class QTable:
    """Tabular action values on a belief grid, plus per-cell visit counts."""

    grid: BeliefGrid
    q: np.ndarray
    visits: np.ndarray

    @classmethod
    def zeros(cls, grid: BeliefGrid, n_actions: int) -> "QTable":
        return cls(grid, np.zeros((len(grid), n_actions)), np.zeros((len(grid), n_actions), dtype=int))

    def greedy(self, cell: int) -> int:
        return int(self.q[cell].argmax())


@dataclass
class SoftmaxPolicyParams:
    """Linear-softmax policy weights: one row of feature coefficients per action."""

    theta: np.ndarray

    def greedy(self, features: np.ndarray) -> int:
        return int((self.theta @ features).argmax())


@dataclass
class McdaState:
    """Mutable MCDA controller state: smoothed posterior plus dwell bookkeeping."""

    posterior: np.ndarray
    last_action: int
    last_switch: float = -math.inf


@dataclass
class KStepState:
    """Mutable k-step controller state: current label streak plus dwell bookkeeping."""

    k: int
    streak_label: int = -1
    count: int = 0
    last_action: int = 0
    last_switch: float = -math.inf

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")


def topsis_rank(decision: np.ndarray, weights: np.ndarray, benefit_flags) -> tuple[np.ndarray, np.ndarray]:
    """Rank alternatives by closeness to the ideal solution.

    Columns are vector-normalized (all-zero columns are left at zero), then
    weighted; the ideal takes the column max for benefit criteria and min for
    cost criteria, the anti-ideal the opposite.  Returns (order, closeness)
    with the order sorted by descending closeness, ties to the lowest index.
    """
    decision = np.asarray(decision, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be nonnegative and sum to 1")
    norms = np.sqrt((decision**2).sum(axis=0))
    normalized = np.divide(decision, norms, out=np.zeros_like(decision), where=norms > 0.0)
    weighted = normalized * weights
    benefit = np.asarray(benefit_flags, dtype=bool)
    ideal = np.where(benefit, weighted.max(axis=0), weighted.min(axis=0))
    anti = np.where(benefit, weighted.min(axis=0), weighted.max(axis=0))
    d_plus = np.sqrt(((weighted - ideal) ** 2).sum(axis=1))
    d_minus = np.sqrt(((weighted - anti) ** 2).sum(axis=1))
    denom = d_plus + d_minus
    closeness = np.divide(d_minus, denom, out=np.full(len(decision), 0.5), where=denom > 0.0)
    order = np.lexsort((np.arange(len(closeness)), -closeness))
    return order, closeness


def _repair_targets(model: ModelBundle) -> np.ndarray:
    """Designated target regime per action (argmax repair probability row)."""
    return model.repair.argmax(axis=1)


def _drift_regime(model: ModelBundle) -> int:
    labels = model.regimes.labels
    return labels.index("Drift") if "Drift" in labels else model.K - 1


def mcda_criteria(posterior: np.ndarray, model: ModelBundle) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Decision matrix for the repair actions under the smoothed posterior.

    Five criteria: expected positive reward (KPI gain), posterior mass on the
    action's target regime (module gain), drift-specific gain, a stability
    score penalizing aggressive repair spread, and the misfire cost in the
    healthy regime (cost criterion).
    """
    repair_actions = [a for a in range(model.M) if a != model.actions.no_action]
    targets = _repair_targets(model)
    drift = _drift_regime(model)
    drift_action = model.actions.canonical_repair.get(drift, -1)
    rows = []
    for a in repair_actions:
        kpi = float(posterior @ np.maximum(model.reward[a], 0.0))
        module = float(posterior[targets[a]])
        drift_gain = float(posterior[drift]) if a == drift_action else 0.0
        stability = 1.0 - float(model.repair[a].max() - model.repair[a].min())
        cost = -float(min(model.reward[a, HEALTHY], 0.0))
        rows.append([kpi, module, drift_gain, stability, cost])
    benefit = np.array([True, True, True, True, False])
    return repair_actions, np.array(rows), benefit


def mcda_step(state: McdaState, z: int, t: float, model: ModelBundle) -> int:
    """One MCDA decision: EMA update, TOPSIS ranking, idle gate, dwell hysteresis."""
    onehot = np.zeros(model.K)
    onehot[z] = 1.0
    state.posterior = MCDA_SMOOTHING * onehot + (1.0 - MCDA_SMOOTHING) * state.posterior
    repair_actions, decision, benefit = mcda_criteria(state.posterior, model)
    order, _ = topsis_rank(decision, np.asarray(MCDA_WEIGHTS), benefit)
    candidate = repair_actions[order[0]]
    kpi_proxy = 1.0 - state.posterior[HEALTHY]
    if state.posterior[HEALTHY] > MCDA_IDLE_POSTERIOR and kpi_proxy < MCDA_IDLE_KPI:
        candidate = model.actions.no_action
    if candidate != state.last_action and t - state.last_switch < DWELL_SECONDS:
        candidate = state.last_action
    if candidate != state.last_action:
        state.last_action = candidate
        state.last_switch = t
    return candidate


def kstep_step(state: KStepState, z: int, t: float, no_action: int, canonical_repair: dict[int, int]) -> int:
    """One k-step decision: consecutive-label streak rule plus dwell hysteresis.

    A healthy observation (or a label change) resets the streak; the
    canonical repair fires only once the same non-healthy label has been
    reported k consecutive events.
    """
    if z == HEALTHY:
        state.streak_label, state.count = -1, 0
    elif z == state.streak_label:
        state.count += 1
    else:
        state.streak_label, state.count = z, 1
    candidate = no_action
    if state.count >= state.k and state.streak_label in canonical_repair:
        candidate = canonical_repair[state.streak_label]
    if candidate != state.last_action and t - state.last_switch < DWELL_SECONDS:
        candidate = state.last_action
    if candidate != state.last_action:
        state.last_action = candidate
        state.last_switch = t
    return candidate


def _epsilon_schedule(eps_start: float, eps_end: float, episode: int, episodes: int) -> float:
    # exponential decay reaching ~eps_end by the end of the budget
    return eps_end + (eps_start - eps_end) * math.exp(-5.0 * episode / episodes)


def qlearning_train(
    model: ModelBundle,
    grid: BeliefGrid,
    lr: float = 0.1,
    eps_start: float = 1.0,
    eps_end: float = 0.05,
    episodes: int = 5000,
    horizon: float = 15.0,
    seed: int = 0,
) -> QTable:
    """Tabular Q-learning against the event-driven belief environment.

    Beliefs are filtered exactly and snapped to the grid; each transition
    event grants the discrete reward of the action held during the sojourn
    and triggers one temporal-difference update.  Exploration is
    epsilon-greedy with an exponential decay across the episode budget.
    """
    if eps_end > eps_start:
        raise ValueError("eps_end must not exceed eps_start")
    from .controllers import QLearningTrainingController  # cycle: controllers import baselines
    from .sim import simulate_trajectory

    table = QTable.zeros(grid, model.M)
    controller = QLearningTrainingController(model, table, lr)
    for episode in range(episodes):
        controller.epsilon = _epsilon_schedule(eps_start, eps_end, episode, episodes)
        controller.exploration_rng = stream(seed, 1, episode)
        simulate_trajectory(model, controller, horizon, (seed, 0, episode))
    return table


def reinforce_train(
    model: ModelBundle,
    lr: float = 0.001,
    episodes: int = 10_000,
    baseline_decay: float = 0.99,
    horizon: float = 15.0,
    seed: int = 0,
) -> SoftmaxPolicyParams:
    """Monte Carlo policy gradient on the linear-softmax belief policy.

    Per-event discounted returns with a running-mean baseline; theta starts
    at zero (uniform policy) and updates once per episode.
    """
    from .controllers import ReinforceTrainingController
    from .sim import simulate_trajectory

    params = SoftmaxPolicyParams(np.zeros((model.M, len(reinforce_features(np.full(model.K, 1.0 / model.K))))))
    controller = ReinforceTrainingController(model, params)
    gamma = model.discount.gamma
    baseline = 0.0
    for episode in range(episodes):
        controller.exploration_rng = stream(seed, 1, episode)
        simulate_trajectory(model, controller, horizon, (seed, 0, episode))
        feats, acts, rewards = controller.episode_buffer()
        if not rewards:
            continue
        returns = np.empty(len(rewards))
        g = 0.0
        for i in range(len(rewards) - 1, -1, -1):
            g = rewards[i] + gamma * g
            returns[i] = g
        if lr > 0.0:
            for phi, a, g_t in zip(feats, acts, returns):
                probs = softmax_probabilities(params.theta, phi)
                grad = -np.outer(probs, phi)
                grad[a] += phi
                params.theta += lr * (g_t - baseline) * grad
        baseline = baseline_decay * baseline + (1.0 - baseline_decay) * returns[0]
    return params


def save_qtable(path, table: QTable, model: ModelBundle, config: dict | None = None) -> None:
    payload = {
        "model_hash": model.hash(),
        "spacing": table.grid.spacing,
        "q": table.q.tolist(),
        "visits": table.visits.tolist(),
        "config": config or {},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_qtable(path, model: ModelBundle) -> QTable:
    raw = json.loads(Path(path).read_text())
    if raw.get("model_hash") != model.hash():
        raise ValueError("Q-table was trained on a different model")
    grid = enumerate_belief_grid(model.K, float(raw["spacing"]))
    return QTable(grid, np.asarray(raw["q"], dtype=float), np.asarray(raw["visits"], dtype=int))


def save_softmax_params(path, params: SoftmaxPolicyParams, model: ModelBundle, config: dict | None = None) -> None:
    payload = {
        "model_hash": model.hash(),
        "theta": params.theta.tolist(),
        "features": "raw + pairwise products + entropy",
        "config": config or {},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_softmax_params(path, model: ModelBundle) -> SoftmaxPolicyParams:
    raw = json.loads(Path(path).read_text())
    if raw.get("model_hash") != model.hash():
        raise ValueError("policy parameters were trained on a different model")
    return SoftmaxPolicyParams(np.asarray(raw["theta"], dtype=float))
