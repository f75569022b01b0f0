"""Exact event-driven simulation of the controlled chain and trajectory metrics.

The Gillespie loop produces exact sample paths of the continuous-time chain
under any controller: at every transition event the new state emits one
noisy label, the controller is notified and asked for the action that will
be in force until the next event.  Discounted returns are accumulated with
the closed-form per-segment integral, so no time discretization error enters
the accounting.
"""

from __future__ import annotations

import copy
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ctmc import embed_generator
from .model import HEALTHY, ModelBundle
from .rng import stream

__all__ = [
    "Controller",
    "HoldingTimeSampler",
    "Trajectory",
    "TrajectoryMetrics",
    "simulate_trajectory",
    "simulate_many",
    "discounted_return",
    "occupancy_stats",
    "trajectory_metrics",
]


class Controller:
    """Behavioral contract for policy controllers driving the simulator.

    ``observe`` is called once per event with the emitted label and the
    sojourn since the previous event (0.0 for the initial draw); ``decide``
    must then return the action held until the next event.  Controllers must
    be deterministic given their internal state and inputs at evaluation
    time; stochastic exploration is reserved for RL training controllers.
    Mutable controllers are cloned per trajectory, never shared.
    """

    def reset(self) -> None:
        pass

    def observe(self, z: int, tau: float) -> None:
        pass

    def decide(self, t: float, z: int, true_state: int) -> int:
        raise NotImplementedError

    def belief(self):
        """Current belief for trajectory logging; None for state-feedback policies."""
        return None

    def clone(self) -> "Controller":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class HoldingTimeSampler:
    """Sojourn-time sampler: exponential by default, or an empirical table.

    The table maps (state, action) to an array of positive durations sampled
    uniformly, the hook for replacing exponential holding times with
    empirically measured ones.  Only the exponential kind is used by the
    shipped experiments.
    """

    kind: str = "exponential"
    table: dict | None = None

    def __post_init__(self):
        if self.kind not in ("exponential", "table"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.kind == "table":
            if not self.table:
                raise ValueError("table sampler needs a nonempty duration table")
            for key, durations in self.table.items():
                arr = np.asarray(durations, dtype=float)
                if arr.size == 0 or not np.all(np.isfinite(arr)) or arr.min() <= 0.0:
                    raise ValueError(f"durations for {key} must be positive and finite")

    def sample(self, rng: np.random.Generator, state: int, action: int, total_rate: float) -> float:
        if self.kind == "exponential":
            return rng.exponential(1.0 / total_rate)
        return float(rng.choice(np.asarray(self.table[(state, action)], dtype=float)))


EXPONENTIAL = HoldingTimeSampler()


@dataclass(frozen=True)
class Trajectory:
    """Ordered event log; arrays share one row per event.

    ``actions[i]`` is in force on [times[i], times[i+1]) and the final
    segment closes at the horizon.  ``beliefs`` is None for state-feedback
    controllers.
    """

    times: np.ndarray
    states: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    beliefs: np.ndarray | None
    horizon: float
    seed: tuple

    def __post_init__(self):
        if len(self.times) == 0 or self.times[0] != 0.0:
            raise ValueError("trajectory must start with an event at t = 0")
        if np.any(np.diff(self.times) <= 0.0) or self.times[-1] > self.horizon:
            raise ValueError("event times must strictly increase within the horizon")

    def __len__(self) -> int:
        return len(self.times)

    def segment_durations(self) -> np.ndarray:
        return np.diff(np.append(self.times, self.horizon))

    def state_at(self, t: float) -> int:
        return int(self.states[np.searchsorted(self.times, t, side="right") - 1])

    def to_csv(self, path) -> None:
        K = self.beliefs.shape[1] if self.beliefs is not None else 0
        header = "t,true_state,observation,action" + "".join(f",belief_{k}" for k in range(K))
        lines = [header]
        for i in range(len(self)):
            row = f"{self.times[i]!r},{self.states[i]},{self.observations[i]},{self.actions[i]}"
            if K:
                row += "".join(f",{self.beliefs[i, k]!r}" for k in range(K))
            lines.append(row)
        Path(path).write_text("\n".join(lines) + "\n")


def simulate_trajectory(
    model: ModelBundle,
    controller: Controller,
    horizon: float,
    seed,
    sampler: HoldingTimeSampler = EXPONENTIAL,
) -> Trajectory:
    """Exact sample path of the controlled chain from the healthy state.

    ``seed`` is an integer or tuple key; identical keys give bit-identical
    trajectories regardless of worker count.  A state with zero exit rate
    under the current action is absorbing: the loop terminates and the state
    holds to the horizon.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    rng = stream(*seed) if isinstance(seed, tuple) else stream(seed)
    generators = embed_generator(model.per_action, model.discount.dt)
    rates = np.clip(generators, 0.0, None)  # off-diagonal rates; diagonals clamp to 0
    for a in range(model.M):
        np.fill_diagonal(rates[a], 0.0)
    obs_cdf = model.observation.cumsum(axis=1)

    times, states, observations, actions, beliefs = [], [], [], [], []

    def record(t, s, z, a):
        times.append(t)
        states.append(s)
        observations.append(z)
        actions.append(a)
        beliefs.append(controller.belief())

    controller.reset()
    t, s = 0.0, HEALTHY
    z = int(np.searchsorted(obs_cdf[s], rng.random(), side="right"))
    controller.observe(z, 0.0)
    a = controller.decide(t, z, s)
    record(t, s, z, a)

    while True:
        lam = rates[a, s]
        total = lam.sum()
        if total <= 0.0:
            break  # absorbing under this action: hold to horizon
        tau = sampler.sample(rng, s, a, total)
        if t + tau > horizon:
            break
        t += tau
        s = int(np.searchsorted(lam.cumsum() / total, rng.random(), side="right"))
        z = int(np.searchsorted(obs_cdf[s], rng.random(), side="right"))
        controller.observe(z, tau)
        a = controller.decide(t, z, s)
        record(t, s, z, a)

    belief_arr = None if beliefs[0] is None else np.array([np.asarray(b, dtype=float) for b in beliefs])
    return Trajectory(
        times=np.array(times),
        states=np.array(states, dtype=int),
        observations=np.array(observations, dtype=int),
        actions=np.array(actions, dtype=int),
        beliefs=belief_arr,
        horizon=float(horizon),
        seed=seed if isinstance(seed, tuple) else (seed,),
    )


def simulate_many(
    model: ModelBundle,
    controller: Controller,
    n_traj: int,
    horizon: float,
    base_seed,
    sampler: HoldingTimeSampler = EXPONENTIAL,
    threads: int = 1,
) -> list[Trajectory]:
    """Independent trajectories with per-index derived streams.

    Trajectory i draws from the stream keyed by (base_seed, i) and runs on a
    cloned controller, so results are an ordered, scheduler-independent batch.
    """
    base = base_seed if isinstance(base_seed, tuple) else (base_seed,)

    def run(i: int) -> Trajectory:
        return simulate_trajectory(model, controller.clone(), horizon, base + (i,), sampler)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, range(n_traj)))
    return [run(i) for i in range(n_traj)]


def discounted_return(traj: Trajectory, model: ModelBundle) -> float:
    """Exact discounted return via the per-segment integral.

    Each segment holding (state, action) on [t_i, t_i + d_i) contributes
    (c/rho) * exp(-rho t_i) * (1 - exp(-rho d_i)) with reward rate c = R/dt.
    """
    rho = model.discount.rho_ct
    c = model.reward[traj.actions, traj.states] / model.discount.dt
    d = traj.segment_durations()
    return float(np.sum((c / rho) * np.exp(-rho * traj.times) * -np.expm1(-rho * d)))


def occupancy_stats(trajectories, bins, n_states: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Empirical state-occupation probabilities on a time grid.

    Returns (midpoints, occupancy) where occupancy[j, s] is the fraction of
    trajectories in state s at the midpoint of bin j, using the
    piecewise-constant interpolation of each event log.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("need at least one trajectory")
    bins = np.asarray(bins, dtype=float)
    mids = 0.5 * (bins[:-1] + bins[1:])
    K = n_states if n_states is not None else int(max(t.states.max() for t in trajectories)) + 1
    counts = np.zeros((len(mids), K))
    for traj in trajectories:
        idx = np.searchsorted(traj.times, mids, side="right") - 1
        counts[np.arange(len(mids)), traj.states[idx]] += 1.0
    return mids, counts / len(trajectories)


@dataclass(frozen=True)
class TrajectoryMetrics:
    """Per-trajectory fidelity and action-quality summary.

    ``episode_delays`` maps each fault regime to the onset-to-repair latency
    of every completed fault excursion that visited it (inf when the
    canonical repair was never applied during the excursion; excursions
    truncated by the horizon are excluded).  ``mismatch_rate`` is the
    time-weighted fraction where the applied action differs from the
    reference policy at the true state; ``intervened`` records whether any
    non-inert action was ever applied.
    """

    fraction_nominal: float
    episode_delays: dict[int, list[float]]
    mismatch_rate: float
    intervened: bool

    def mean_delay(self, regime: int) -> float:
        finite = [d for d in self.episode_delays.get(regime, []) if np.isfinite(d)]
        if finite:
            return float(np.mean(finite))
        return float("inf") if self.episode_delays.get(regime) else float("nan")


def trajectory_metrics(traj: Trajectory, model: ModelBundle, reference_policy: np.ndarray) -> TrajectoryMetrics:
    """Fidelity, detection-delay, and mismatch metrics for one trajectory.

    A fault excursion is a maximal interval outside the healthy state.  For
    each regime first entered at time t0 within an excursion, the delay is
    the time until the excursion first applies that regime's canonical
    repair action (at or after t0).
    """
    reference_policy = np.asarray(reference_policy, dtype=int)
    d = traj.segment_durations()
    frac_nominal = float(d[traj.states == HEALTHY].sum() / traj.horizon)
    mismatch = float(d[traj.actions != reference_policy[traj.states]].sum() / traj.horizon)
    intervened = bool(np.any(traj.actions != model.actions.no_action))

    delays: dict[int, list[float]] = {s: [] for s in range(model.K) if s != HEALTHY}
    canonical = model.actions.canonical_repair
    i, n = 0, len(traj)
    while i < n:
        if traj.states[i] == HEALTHY:
            i += 1
            continue
        j = i
        while j < n and traj.states[j] != HEALTHY:
            j += 1
        if j == n:
            break  # excursion truncated by the horizon: excluded
        onsets: dict[int, float] = {}
        repaired: dict[int, float] = {}
        for k in range(i, j):
            s_k, t_k, a_k = int(traj.states[k]), float(traj.times[k]), int(traj.actions[k])
            onsets.setdefault(s_k, t_k)
            for regime, action in canonical.items():
                if a_k == action and regime in onsets and regime not in repaired and t_k >= onsets[regime]:
                    repaired[regime] = t_k
        for regime, t0 in onsets.items():
            if regime in delays:
                delays[regime].append(repaired[regime] - t0 if regime in repaired else float("inf"))
        i = j
    return TrajectoryMetrics(frac_nominal, delays, mismatch, intervened)
