"""Policy comparisons, sensitivity sweeps, statistical tests, and exports.

Comparisons pair trajectory seeds across policies (common random numbers) so
ordering checks are tightened without biasing the per-policy means; sweeps
re-solve the affected solvers at every axis value before simulating.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm, rankdata

from .model import HEALTHY, ModelBundle, build_observation_matrix, perturb_reward, scale_repair, DiscountSpec
from .mdp import value_iteration
from .pomdp import generate_belief_points, pbvi_solve
from .sim import simulate_many, discounted_return, trajectory_metrics

__all__ = [
    "PolicyStats",
    "ComparisonResult",
    "SweepResult",
    "WilcoxonResult",
    "run_policy_comparison",
    "wilcoxon_one_sided",
    "cliffs_delta",
    "sensitivity_sweep",
    "export_results",
    "regime_abbreviations",
]

# Exact rank-sum enumeration below this combined sample size, normal
# approximation with tie correction and continuity correction above.
EXACT_WILCOXON_MAX_N = 50


def regime_abbreviations(model: ModelBundle) -> list[str]:
    """Short column tags for fault regimes: capital letters, padded to two."""
    out = []
    for label in model.regimes.labels[1:]:
        caps = "".join(ch for ch in label if ch.isupper())
        out.append((caps if len(caps) >= 2 else label[:2].upper())[:2])
    return out


@dataclass(frozen=True)
class PolicyStats:
    """Aggregate metrics for one policy over a trajectory batch."""

    name: str
    returns: np.ndarray
    fraction_nominal: np.ndarray
    mismatch_rates: np.ndarray
    delays: dict[int, list[float]]       # fault regime -> pooled per-episode delays
    intervened: bool

    @property
    def mean_return(self) -> float:
        return float(self.returns.mean())

    @property
    def sd_return(self) -> float:
        return float(self.returns.std(ddof=1)) if len(self.returns) > 1 else 0.0

    @property
    def mean_fraction_nominal(self) -> float:
        return float(self.fraction_nominal.mean())

    @property
    def mismatch_time_pct(self) -> float:
        """Time-weighted mismatch, percent."""
        return float(self.mismatch_rates.mean()) * 100.0

    @property
    def mismatch_pct(self) -> float:
        """Population convention: a policy that never intervenes is fully mismatched."""
        return 100.0 if not self.intervened else self.mismatch_time_pct

    def mean_delay(self, regime: int) -> float:
        pooled = self.delays.get(regime, [])
        finite = [d for d in pooled if math.isfinite(d)]
        if finite:
            return float(np.mean(finite))
        return float("inf") if pooled else float("nan")


@dataclass(frozen=True)
class ComparisonResult:
    """Per-policy aggregates from a paired-seed comparison run."""

    policies: list[PolicyStats]
    n_traj: int
    horizon: float
    seed: int
    fault_regimes: list[int]

    def __getitem__(self, name: str) -> PolicyStats:
        for p in self.policies:
            if p.name == name:
                return p
        raise KeyError(name)


def run_policy_comparison(
    model: ModelBundle,
    policies,
    n_traj: int,
    horizon: float,
    seed: int,
    reference_policy: np.ndarray | None = None,
    paired: bool = True,
    threads: int = 1,
) -> ComparisonResult:
    """Simulate every named controller and aggregate returns and metrics.

    ``policies`` is a list of (name, controller) pairs.  With ``paired``
    (default) trajectory i of every policy shares the stream keyed by
    (seed, i); unpaired mode keys streams by policy index as well.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    if reference_policy is None:
        reference_policy = value_iteration(model).policy
    stats: list[PolicyStats] = []
    fault_regimes = [s for s in range(model.K) if s != HEALTHY]
    for p_idx, (name, controller) in enumerate(policies):
        base = (seed,) if paired else (seed, 10_000 + p_idx)
        trajs = simulate_many(model, controller, n_traj, horizon, base, threads=threads)
        returns = np.array([discounted_return(t, model) for t in trajs])
        metrics = [trajectory_metrics(t, model, reference_policy) for t in trajs]
        delays: dict[int, list[float]] = {s: [] for s in fault_regimes}
        for m in metrics:
            for s in fault_regimes:
                delays[s].extend(m.episode_delays.get(s, []))
        stats.append(
            PolicyStats(
                name=name,
                returns=returns,
                fraction_nominal=np.array([m.fraction_nominal for m in metrics]),
                mismatch_rates=np.array([m.mismatch_rate for m in metrics]),
                delays=delays,
                intervened=any(m.intervened for m in metrics),
            )
        )
    return ComparisonResult(stats, n_traj, horizon, seed, fault_regimes)


@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    statistic: float          # rank sum of the first sample
    method: str               # "exact" or "normal"
    degenerate: bool = False

    def __float__(self) -> float:
        return self.p_value


def wilcoxon_one_sided(x, y) -> WilcoxonResult:
    """One-sided rank-sum test of H1: x stochastically greater than y.

    Midranks handle ties; below a combined size of 50 the p-value is the
    exact permutation tail (subset-sum counting over doubled midranks),
    otherwise a normal approximation with tie-corrected variance and
    continuity correction.  Two identical constant samples are degenerate
    and report p = 0.5.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("both samples must be nonempty")
    n, m = len(x), len(y)
    combined = np.concatenate([x, y])
    if np.all(combined == combined[0]):
        return WilcoxonResult(0.5, float(n * (n + m + 1) / 2.0), "degenerate", degenerate=True)
    ranks = rankdata(combined)
    w = float(ranks[:n].sum())
    big_n = n + m
    if big_n < EXACT_WILCOXON_MAX_N:
        return WilcoxonResult(_exact_rank_sum_tail(ranks, n, w), w, "exact")
    mean = n * (big_n + 1) / 2.0
    _, tie_counts = np.unique(combined, return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts)).sum()) / (big_n * (big_n - 1))
    var = n * m / 12.0 * ((big_n + 1) - tie_term)
    z = (w - mean - 0.5) / math.sqrt(var)
    return WilcoxonResult(float(norm.sf(z)), w, "normal")


def _exact_rank_sum_tail(ranks: np.ndarray, n: int, w_obs: float) -> float:
    """P(rank sum of a random n-subset >= w_obs), exact under H0.

    Doubling the midranks makes them integers, so the permutation
    distribution is a subset-sum count.
    """
    doubled = np.rint(2.0 * ranks).astype(int)
    total = int(doubled.sum())
    # counts[k, s] = number of k-subsets of the processed ranks with doubled sum s;
    # the overlapping in-place add is buffered by numpy, so each rank is used once.
    counts = np.zeros((n + 1, total + 1))
    counts[0, 0] = 1.0
    for r in doubled:
        counts[1 : n + 1, r:] += counts[0:n, : total + 1 - r]
    threshold = int(round(2.0 * w_obs))
    tail = counts[n, threshold:].sum()
    return float(tail / counts[n].sum())


def cliffs_delta(x, y) -> float:
    """(#{x_i > y_j} - #{x_i < y_j}) / (n*m), in [-1, 1]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("both samples must be nonempty")
    y_sorted = np.sort(y)
    greater = np.searchsorted(y_sorted, x, side="left")       # y_j < x_i counts
    less = len(y) - np.searchsorted(y_sorted, x, side="right")  # y_j > x_i counts
    return float((greater.sum() - less.sum()) / (len(x) * len(y)))


@dataclass(frozen=True)
class SweepResult:
    """Per-axis-value, per-policy means with 95% confidence half-widths."""

    axis: str
    values: list
    policy_names: list[str]
    means: np.ndarray            # (n_values, n_policies)
    ci_half: np.ndarray          # 1.96 * standard error of the mean
    fraction_nominal: np.ndarray
    mdp_policies: list[tuple]    # re-solved optimal policy mapping per value


def sensitivity_sweep(
    model: ModelBundle,
    axis: str,
    values,
    n_traj: int,
    seed: int,
    policy_builders,
    horizon: float = 20.0,
    sweep_regime: int = 1,
    reward_mode: str = "gaussian",
    gaussian_replicates: int = 20,
    threads: int = 1,
) -> SweepResult:
    """Re-solve and re-simulate the policy set along one sensitivity axis.

    ``policy_builders`` maps policy name -> callable(model) -> controller, so
    model-based policies are re-solved against each perturbed model.  Axes:
    ``obs_accuracy`` rewrites the swept regime's observation row (residual to
    the healthy label), ``repair_scale`` scales all repair probabilities,
    ``reward_perturb`` perturbs the reward matrix (with replicates in
    gaussian mode), ``gamma`` swaps the discount factor.
    """
    values = list(values)
    if sorted(values) != values and sorted(values, reverse=True) != values:
        raise ValueError("axis values must be monotone")
    names = list(policy_builders)
    means = np.zeros((len(values), len(names)))
    ci = np.zeros_like(means)
    fnom = np.zeros_like(means)
    mdp_policies = []

    for vi, value in enumerate(values):
        variants = _axis_models(model, axis, value, seed, vi, reward_mode, gaussian_replicates, sweep_regime)
        rep_means = np.zeros((len(variants), len(names)))
        rep_fnom = np.zeros_like(rep_means)
        rep_ci = np.zeros_like(rep_means)
        policies_per_rep = []
        for ri, variant in enumerate(variants):
            controllers = [(name, policy_builders[name](variant)) for name in names]
            result = run_policy_comparison(
                variant, controllers, n_traj, horizon, seed=_point_seed(seed, vi, ri), threads=threads
            )
            for pi, name in enumerate(names):
                stats = result[name]
                rep_means[ri, pi] = stats.mean_return
                rep_fnom[ri, pi] = stats.mean_fraction_nominal
                rep_ci[ri, pi] = 1.96 * stats.sd_return / math.sqrt(len(stats.returns))
            policies_per_rep.append(tuple(value_iteration(variant).policy.tolist()))
        means[vi] = rep_means.mean(axis=0)
        fnom[vi] = rep_fnom.mean(axis=0)
        if len(variants) > 1:
            ci[vi] = rep_means.std(axis=0, ddof=1)  # across-replicate spread
        else:
            ci[vi] = rep_ci[0]
        mdp_policies.append(policies_per_rep[0])
    return SweepResult(axis, values, names, means, ci, fnom, mdp_policies)


def _point_seed(seed: int, value_index: int, replicate: int) -> int:
    return (seed * 1_000_003 + value_index * 101 + replicate) % (2**31)


def _axis_models(model, axis, value, seed, value_index, reward_mode, replicates, sweep_regime) -> list[ModelBundle]:
    if axis == "obs_accuracy":
        if not 0.0 <= value <= 1.0:
            raise ValueError("observation accuracy must lie in [0, 1]")
        obs = np.array(model.observation)
        row = np.zeros(model.K)
        row[sweep_regime] = value
        row[HEALTHY] = 1.0 - value  # residual goes to the healthy label
        obs[sweep_regime] = row
        return [model.replace(observation=obs)]
    if axis == "repair_scale":
        return [model.replace(repair=scale_repair(model.repair, value))]
    if axis == "gamma":
        return [model.replace(discount=DiscountSpec(float(value), model.discount.dt))]
    if axis == "reward_perturb":
        if reward_mode == "gaussian" and value > 0.0:
            return [
                model.replace(reward=perturb_reward(model.reward, "gaussian", value, seed=_point_seed(seed, value_index, r)))
                for r in range(replicates)
            ]
        return [model.replace(reward=perturb_reward(model.reward, reward_mode, value, seed=seed))]
    raise ValueError(f"unknown sweep axis {axis!r}")


def export_results(result, fmt: str, path, metadata: dict | None = None) -> Path:
    """Write a comparison or sweep result as CSV (plot-ready) or JSON (full).

    Column ordering is fixed and float formatting uses repr, so identical
    inputs produce byte-identical files.
    """
    path = Path(path)
    if isinstance(result, ComparisonResult):
        payload = _comparison_payload(result)
    elif isinstance(result, SweepResult):
        payload = _sweep_payload(result)
    else:
        raise TypeError(f"cannot export {type(result).__name__}")
    if fmt == "csv":
        path.write_text(payload["csv"])
    elif fmt == "json":
        doc = {k: v for k, v in payload.items() if k != "csv"}
        doc["metadata"] = metadata or {}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return path


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return repr(float(value))


def _comparison_payload(result: ComparisonResult) -> dict:
    abbrevs = ["SN", "DO", "DR"] if len(result.fault_regimes) == 3 else [str(s) for s in result.fault_regimes]
    header = "policy,mean_return,sd_return,frac_nominal," + ",".join(f"delay_{a}" for a in abbrevs) + ",mismatch_pct"
    lines = [header]
    rows = []
    for p in result.policies:
        delays = [p.mean_delay(s) for s in result.fault_regimes]
        lines.append(
            ",".join(
                [p.name, _fmt(p.mean_return), _fmt(p.sd_return), _fmt(p.mean_fraction_nominal)]
                + [_fmt(d) for d in delays]
                + [_fmt(p.mismatch_pct)]
            )
        )
        rows.append(
            {
                "policy": p.name,
                "mean_return": p.mean_return,
                "sd_return": p.sd_return,
                "frac_nominal": p.mean_fraction_nominal,
                "delays": {str(s): _json_float(p.mean_delay(s)) for s in result.fault_regimes},
                "mismatch_pct": p.mismatch_pct,
                "mismatch_time_pct": p.mismatch_time_pct,
                "n_traj": len(p.returns),
            }
        )
    return {
        "csv": "\n".join(lines) + "\n",
        "kind": "comparison",
        "n_traj": result.n_traj,
        "horizon": result.horizon,
        "seed": result.seed,
        "policies": rows,
    }


def _sweep_payload(result: SweepResult) -> dict:
    lines = ["axis_value,policy,mean,ci_half"]
    for vi, value in enumerate(result.values):
        for pi, name in enumerate(result.policy_names):
            lines.append(f"{_fmt(value)},{name},{_fmt(result.means[vi, pi])},{_fmt(result.ci_half[vi, pi])}")
    return {
        "csv": "\n".join(lines) + "\n",
        "kind": "sweep",
        "axis": result.axis,
        "values": [float(v) for v in result.values],
        "policies": result.policy_names,
        "means": result.means.tolist(),
        "ci_half": result.ci_half.tolist(),
        "fraction_nominal": result.fraction_nominal.tolist(),
        "mdp_policies": [list(p) for p in result.mdp_policies],
    }


def _json_float(value: float):
    if math.isinf(value):
        return "inf"
    if math.isnan(value):
        return "nan"
    return value
