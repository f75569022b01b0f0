"""Decision-model bundle: regimes, actions, transition / observation / reward structure.

The bundle is loaded from a single JSON document (see ``models/case_study.json``)
and validated on ingest.  All types are immutable after construction; the
operations here are pure functions, so bundles can be shared freely across
threads and reused by every solver and simulator in the package.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import stream

__all__ = [
    "HEALTHY",
    "ROW_SUM_TOL_INGEST",
    "ROW_SUM_TOL_INTERNAL",
    "ModelError",
    "RegimeSet",
    "ActionSet",
    "DiscountSpec",
    "ModelBundle",
    "validate_stochastic",
    "build_action_transition",
    "build_observation_matrix",
    "scale_repair",
    "perturb_reward",
    "build_bundle",
    "load_model",
]

# Index of the designated healthy regime.  Repair actions redirect transition
# mass to this row, so it is fixed by convention rather than configurable.
HEALTHY = 0

# Hand-entered published matrices carry ~4 decimals; internally constructed
# matrices are exact up to rounding, hence the tighter tolerance.
ROW_SUM_TOL_INGEST = 1e-9
ROW_SUM_TOL_INTERNAL = 1e-12


class ModelError(ValueError):
    """Model file or matrix violates the schema invariants."""


@dataclass(frozen=True)
class RegimeSet:
    """Ordered regime labels; index 0 is the healthy regime."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ModelError("need at least two regimes")
        if len(set(self.labels)) != len(self.labels):
            raise ModelError("regime labels must be unique")

    @property
    def K(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ModelError(f"unknown regime label {label!r}") from None


@dataclass(frozen=True)
class ActionSet:
    """Ordered action labels, the inert action, and the canonical repair map.

    ``canonical_repair`` maps a fault-regime index to the action that is the
    designated fix for that regime; the healthy regime is never mapped.
    """

    labels: tuple[str, ...]
    no_action: int
    canonical_repair: dict[int, int]

    def __post_init__(self):
        if not self.labels:
            raise ModelError("need at least one action")
        if not 0 <= self.no_action < len(self.labels):
            raise ModelError("no_action index out of range")
        for regime, action in self.canonical_repair.items():
            if regime == HEALTHY:
                raise ModelError("canonical_repair must not map the healthy regime")
            if not 0 <= action < len(self.labels):
                raise ModelError("canonical_repair action index out of range")

    @property
    def M(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ModelError(f"unknown action label {label!r}") from None


@dataclass(frozen=True)
class DiscountSpec:
    """Discrete discount factor and sampling interval.

    The continuous discount rate is always recomputed from gamma and dt,
    never stored, so the two representations cannot drift apart.
    """

    gamma: float
    dt: float

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ModelError(f"gamma must be in [0, 1), got {self.gamma}")
        if not self.dt > 0.0:
            raise ModelError(f"dt must be positive, got {self.dt}")

    @property
    def rho_ct(self) -> float:
        """Continuous discount rate -ln(gamma)/dt (1/seconds); needs gamma > 0."""
        if self.gamma == 0.0:
            raise ModelError("continuous discount rate undefined for gamma = 0")
        return -math.log(self.gamma) / self.dt


def validate_stochastic(m, tol: float = ROW_SUM_TOL_INGEST, what: str = "matrix") -> np.ndarray:
    """Check that ``m`` is square, entrywise in [0, 1], and row-stochastic."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ModelError(f"{what} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ModelError(f"{what} has non-finite entries")
    if m.min() < 0.0 or m.max() > 1.0:
        raise ModelError(f"{what} entries must lie in [0, 1]")
    err = np.abs(m.sum(axis=1) - 1.0).max()
    if err > tol:
        raise ModelError(f"{what} rows must sum to 1 (worst deviation {err:.3e} > {tol:.0e})")
    return m


def build_action_transition(baseline: np.ndarray, repair: np.ndarray, a: int) -> np.ndarray:
    """Action-conditioned transition matrix.

    Row s of the result mixes the baseline row with a point mass on the
    healthy regime: (1 - rho[a,s]) * baseline[s] + rho[a,s] * e_healthy.
    """
    baseline = np.asarray(baseline, dtype=float)
    rho_a = np.asarray(repair, dtype=float)[a]
    if rho_a.shape[0] != baseline.shape[0]:
        raise ModelError("repair probabilities inconsistent with baseline dimension")
    out = (1.0 - rho_a)[:, None] * baseline
    out[:, HEALTHY] += rho_a
    return out


def build_observation_matrix(diagonal, dominant_confusions=()) -> np.ndarray:
    """Observation matrix from per-regime accuracies plus named confusion masses.

    The diagonal holds classification accuracies.  Each listed confusion
    (true, observed, mass) pins one off-diagonal entry.  Whatever row mass
    remains is spread uniformly over the unpinned off-diagonal entries, a
    maximum-entropy completion of the published values.
    """
    diagonal = np.asarray(diagonal, dtype=float)
    K = diagonal.shape[0]
    if diagonal.min() < 0.0 or diagonal.max() > 1.0:
        raise ModelError("observation diagonal entries must lie in [0, 1]")
    out = np.zeros((K, K))
    pinned = np.eye(K, dtype=bool)
    np.fill_diagonal(out, diagonal)
    for true_s, obs_z, mass in dominant_confusions:
        if mass < 0.0:
            raise ModelError("confusion mass must be nonnegative")
        if true_s == obs_z:
            raise ModelError("confusion entries must be off-diagonal")
        out[true_s, obs_z] = mass
        pinned[true_s, obs_z] = True
    for s in range(K):
        residual = 1.0 - out[s].sum()
        if residual < -ROW_SUM_TOL_INGEST:
            raise ModelError(f"observation row {s} mass exceeds 1 by {-residual:.3e}")
        free = ~pinned[s]
        n_free = int(free.sum())
        if n_free:
            out[s, free] = max(residual, 0.0) / n_free
        elif residual > ROW_SUM_TOL_INGEST:
            raise ModelError(f"observation row {s} under-filled with no free entries")
    return validate_stochastic(out, ROW_SUM_TOL_INTERNAL, "observation matrix")


def scale_repair(repair: np.ndarray, lam: float) -> np.ndarray:
    """Scale every repair probability by a common factor in [0, 1]."""
    if not 0.0 <= lam <= 1.0:
        raise ModelError(f"repair scale must lie in [0, 1], got {lam}")
    return np.asarray(repair, dtype=float) * lam


def perturb_reward(reward: np.ndarray, mode: str, param: float, seed: int = 0) -> np.ndarray:
    """Perturbed copy of the reward matrix.

    Modes: ``uniform_scale`` multiplies everything by param, ``penalty_scale``
    multiplies only negative entries by param, ``gaussian`` adds i.i.d.
    N(0, param^2) noise drawn from the seeded stream (bit-reproducible).
    """
    reward = np.asarray(reward, dtype=float)
    if mode == "uniform_scale":
        return param * reward
    if mode == "penalty_scale":
        return np.where(reward < 0.0, param * reward, reward)
    if mode == "gaussian":
        if param < 0.0:
            raise ModelError("gaussian perturbation needs sigma >= 0")
        noise = stream(seed).normal(0.0, param, size=reward.shape) if param > 0.0 else 0.0
        return reward + noise
    raise ModelError(f"unknown perturbation mode {mode!r}")


@dataclass(frozen=True)
class ModelBundle:
    """Complete decision-model specification.

    ``per_action[a]`` caches the action-conditioned transition matrix;
    ``per_action[no_action]`` equals the baseline.  Construct via
    :func:`build_bundle` or :func:`load_model`, which enforce the invariants.
    """

    regimes: RegimeSet
    actions: ActionSet
    baseline: np.ndarray
    repair: np.ndarray
    reward: np.ndarray
    observation: np.ndarray
    discount: DiscountSpec
    per_action: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return self.regimes.K

    @property
    def M(self) -> int:
        return self.actions.M

    def hash(self) -> str:
        """Stable content hash used to tie solver artifacts to their model."""
        payload = json.dumps(
            {
                "regimes": list(self.regimes.labels),
                "actions": list(self.actions.labels),
                "no_action": self.actions.no_action,
                "canonical_repair": sorted(self.actions.canonical_repair.items()),
                "baseline": self.baseline.tolist(),
                "repair": self.repair.tolist(),
                "reward": self.reward.tolist(),
                "observation": self.observation.tolist(),
                "gamma": self.discount.gamma,
                "dt": self.discount.dt,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def replace(self, **kwargs) -> "ModelBundle":
        """Rebuilt bundle with some components swapped (used by sweeps)."""
        parts = {
            "regimes": self.regimes,
            "actions": self.actions,
            "baseline": self.baseline,
            "repair": self.repair,
            "reward": self.reward,
            "observation": self.observation,
            "discount": self.discount,
        }
        parts.update(kwargs)
        return build_bundle(**parts)


def build_bundle(regimes, actions, baseline, repair, reward, observation, discount) -> ModelBundle:
    """Validate all components, build per-action matrices, and freeze the bundle."""
    K, M = regimes.K, actions.M
    baseline = validate_stochastic(baseline, ROW_SUM_TOL_INGEST, "baseline matrix")
    observation = validate_stochastic(observation, ROW_SUM_TOL_INGEST, "observation matrix")
    repair = np.asarray(repair, dtype=float)
    reward = np.asarray(reward, dtype=float)
    if baseline.shape != (K, K) or observation.shape != (K, K):
        raise ModelError("baseline/observation dimensions inconsistent with regime count")
    if repair.shape != (M, K) or reward.shape != (M, K):
        raise ModelError("repair/reward dimensions inconsistent with action and regime counts")
    if repair.min() < 0.0 or repair.max() > 1.0:
        raise ModelError("repair probabilities must lie in [0, 1]")
    if np.any(repair[actions.no_action] != 0.0):
        raise ModelError("the inert action must have zero repair probability everywhere")
    if not np.all(np.isfinite(reward)):
        raise ModelError("reward entries must be finite")

    per_action = np.stack([build_action_transition(baseline, repair, a) for a in range(M)])
    for a in range(M):
        validate_stochastic(per_action[a], ROW_SUM_TOL_INTERNAL, f"transition matrix for action {a}")
    if np.abs(per_action[actions.no_action] - baseline).max() > ROW_SUM_TOL_INTERNAL:
        raise ModelError("inert-action transition matrix must equal the baseline")

    for arr in (baseline, repair, reward, observation, per_action):
        arr.setflags(write=False)
    return ModelBundle(regimes, actions, baseline, repair, reward, observation, discount, per_action)


def _laplace_smooth(matrix: np.ndarray, epsilon: float) -> np.ndarray:
    """Add epsilon to every entry and renormalize rows (precludes absorbing states)."""
    m = np.asarray(matrix, dtype=float) + epsilon
    return m / m.sum(axis=1, keepdims=True)


def load_model(path) -> ModelBundle:
    """Load and validate a model bundle from its JSON document.

    Optional Laplace smoothing (``smooth``/``epsilon`` fields) is applied to
    the baseline before validation; the shipped case-study matrix is already
    smoothed, so it sets ``smooth`` to false.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file {path} is not valid JSON: {exc}") from exc

    try:
        regimes = RegimeSet(tuple(raw["regimes"]))
        action_labels = tuple(raw["actions"])
        no_action = action_labels.index(raw["no_action"])
        canonical = {
            regimes.index(reg): action_labels.index(act)
            for reg, act in raw.get("canonical_repair", {}).items()
        }
        actions = ActionSet(action_labels, no_action, canonical)
        baseline = np.asarray(raw["baseline"], dtype=float)
        if raw.get("smooth", False):
            baseline = _laplace_smooth(baseline, float(raw.get("epsilon", 1e-3)))
        repair = np.asarray(raw["repair"], dtype=float)
        reward = np.asarray(raw["reward"], dtype=float)
        confusions = [
            (regimes.index(c["true"]), regimes.index(c["observed"]), float(c["mass"]))
            for c in raw.get("confusions", [])
        ]
        observation = build_observation_matrix(np.asarray(raw["observation_diagonal"], dtype=float), confusions)
        discount = DiscountSpec(float(raw["gamma"]), float(raw["dt"]))
    except KeyError as exc:
        raise ModelError(f"model file {path} is missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"model file {path} is malformed: {exc}") from exc

    return build_bundle(regimes, actions, baseline, repair, reward, observation, discount)
