"""Concrete policy controllers for the event-driven simulator.

State-feedback controllers read the true regime (the perfect-information
bound); belief controllers maintain an exact Bayesian filter and never see
the true state; heuristic controllers react to raw labels.  Training
controllers additionally carry learning state and an exploration stream.
"""

from __future__ import annotations

import numpy as np

from .baselines import (
    KStepState,
    McdaState,
    QTable,
    SoftmaxPolicyParams,
    kstep_step,
    mcda_step,
    nearest_grid_point,
    reinforce_features,
    softmax_probabilities,
)
from .model import HEALTHY, ModelBundle
from .pomdp import AlphaVectorSet, BeliefFilter, alpha_policy, corner_belief
from .sim import Controller

__all__ = [
    "NoActionController",
    "StatePolicyController",
    "BeliefTrackingController",
    "AlphaPolicyController",
    "QTableController",
    "SoftmaxPolicyController",
    "McdaController",
    "KStepController",
    "QLearningTrainingController",
    "ReinforceTrainingController",
]


class NoActionController(Controller):
    """Never intervenes."""

    def __init__(self, model: ModelBundle):
        self.no_action = model.actions.no_action

    def decide(self, t, z, true_state):
        return self.no_action


class StatePolicyController(Controller):
    """Stationary state-feedback policy with perfect regime knowledge."""

    def __init__(self, policy: np.ndarray):
        self.policy = np.asarray(policy, dtype=int)

    def decide(self, t, z, true_state):
        return int(self.policy[true_state])


class BeliefTrackingController(Controller):
    """Base for controllers acting on an exactly filtered belief.

    The belief starts at the healthy corner (the simulator starts every
    trajectory healthy) and is propagated over each sojourn under the action
    that was actually in force, then corrected by the emitted label.
    """

    def __init__(self, model: ModelBundle, b0: np.ndarray | None = None):
        self.filter = BeliefFilter(model)
        self.no_action = model.actions.no_action
        self.b0 = corner_belief(model.K, HEALTHY) if b0 is None else np.asarray(b0, dtype=float)
        self.b = self.b0.copy()
        self.last_action = self.no_action

    def reset(self):
        self.b = self.b0.copy()
        self.last_action = self.no_action

    def observe(self, z, tau):
        self.b = self.filter.step(self.b, self.last_action, tau, z)

    def belief(self):
        return self.b


class AlphaPolicyController(BeliefTrackingController):
    """Greedy alpha-vector policy (the solved partially observable model)."""

    def __init__(self, model: ModelBundle, alpha_set: AlphaVectorSet, b0=None):
        super().__init__(model, b0)
        self.alpha_set = alpha_set

    def decide(self, t, z, true_state):
        self.last_action, _ = alpha_policy(self.alpha_set, self.b)
        return self.last_action


class QTableController(BeliefTrackingController):
    """Greedy evaluation of a trained Q-table on the belief grid."""

    def __init__(self, model: ModelBundle, table: QTable, b0=None):
        super().__init__(model, b0)
        self.table = table

    def decide(self, t, z, true_state):
        self.last_action = self.table.greedy(nearest_grid_point(self.b, self.table.grid))
        return self.last_action


class SoftmaxPolicyController(BeliefTrackingController):
    """Greedy evaluation of trained softmax policy weights."""

    def __init__(self, model: ModelBundle, params: SoftmaxPolicyParams, b0=None):
        super().__init__(model, b0)
        self.params = params

    def decide(self, t, z, true_state):
        self.last_action = self.params.greedy(reinforce_features(self.b))
        return self.last_action


class McdaController(Controller):
    """TOPSIS ranking over smoothed hard classifications with dwell hysteresis."""

    def __init__(self, model: ModelBundle):
        self.model = model
        self.state = self._fresh_state()

    def _fresh_state(self) -> McdaState:
        return McdaState(posterior=corner_belief(self.model.K, HEALTHY), last_action=self.model.actions.no_action)

    def reset(self):
        self.state = self._fresh_state()

    def decide(self, t, z, true_state):
        return mcda_step(self.state, z, t, self.model)


class KStepController(Controller):
    """Repair after k consecutive identical non-healthy labels, with dwell."""

    def __init__(self, model: ModelBundle, k: int):
        self.k = k
        self.no_action = model.actions.no_action
        self.canonical = dict(model.actions.canonical_repair)
        self.state = KStepState(k=k, last_action=self.no_action)

    def reset(self):
        self.state = KStepState(k=self.k, last_action=self.no_action)

    def decide(self, t, z, true_state):
        return kstep_step(self.state, z, t, self.no_action, self.canonical)


class QLearningTrainingController(BeliefTrackingController):
    """Epsilon-greedy actor that applies one TD update per transition event.

    The reward for the action held over a sojourn is the discrete reward at
    the regime that was actually occupied, granted when the transition fires.
    """

    def __init__(self, model: ModelBundle, table: QTable, lr: float):
        super().__init__(model)
        self.model = model
        self.table = table
        self.lr = lr
        self.epsilon = 0.0
        self.exploration_rng: np.random.Generator | None = None
        self.pending: tuple[int, int, int] | None = None  # (cell, action, true state)

    def reset(self):
        super().reset()
        self.pending = None

    def decide(self, t, z, true_state):
        cell = nearest_grid_point(self.b, self.table.grid)
        if self.pending is not None:
            prev_cell, prev_action, prev_state = self.pending
            reward = self.model.reward[prev_action, prev_state]
            target = reward + self.model.discount.gamma * self.table.q[cell].max()
            self.table.q[prev_cell, prev_action] += self.lr * (target - self.table.q[prev_cell, prev_action])
        if self.exploration_rng is not None and self.exploration_rng.random() < self.epsilon:
            action = int(self.exploration_rng.integers(self.model.M))
        else:
            action = self.table.greedy(cell)
        self.table.visits[cell, action] += 1
        self.pending = (cell, action, true_state)
        self.last_action = action
        return action


class ReinforceTrainingController(BeliefTrackingController):
    """Softmax sampler that buffers (features, action, reward) per episode."""

    def __init__(self, model: ModelBundle, params: SoftmaxPolicyParams):
        super().__init__(model)
        self.model = model
        self.params = params
        self.exploration_rng: np.random.Generator | None = None
        self.pending: tuple[np.ndarray, int, int] | None = None
        self._feats: list[np.ndarray] = []
        self._acts: list[int] = []
        self._rewards: list[float] = []

    def reset(self):
        super().reset()
        self.pending = None
        self._feats, self._acts, self._rewards = [], [], []

    def decide(self, t, z, true_state):
        phi = reinforce_features(self.b)
        if self.pending is not None:
            prev_phi, prev_action, prev_state = self.pending
            self._feats.append(prev_phi)
            self._acts.append(prev_action)
            self._rewards.append(float(self.model.reward[prev_action, prev_state]))
        probs = softmax_probabilities(self.params.theta, phi)
        action = int(self.exploration_rng.choice(self.model.M, p=probs))
        self.pending = (phi, action, true_state)
        self.last_action = action
        return action

    def episode_buffer(self) -> tuple[list[np.ndarray], list[int], list[float]]:
        return self._feats, self._acts, self._rewards
