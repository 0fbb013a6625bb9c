"""Estimators connecting microsim output to limit-process predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EnergyPath
from .limit_process import LimitChain, build_chain
from .microsim import CollisionLog, count_collisions


class InsufficientDataError(RuntimeError):
    """Not enough samples for the requested fit."""


@dataclass(frozen=True)
class EmpiricalDistribution:
    """State counts sharing a LimitChain's indexing."""

    counts: np.ndarray
    total: int
    chain: LimitChain

    def probabilities(self) -> np.ndarray:
        return self.counts / self.total


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    ci_lo: float
    ci_hi: float
    n_events: int
    n_replicas: int


@dataclass(frozen=True)
class RecollisionReport:
    """Per-pair recollision counts within a fixed micro-time window.

    The denominator counts collisions early enough that a follow-up inside
    the window would still fall before the horizon, so censoring does not
    bias the fraction.
    """

    collisions: int
    recollisions: int
    window_micro: float
    fraction: float
    ci_halfwidth: float
    ratio_label: str = ""


def empirical_distribution(
    paths: list[EnergyPath], t: float, chain: LimitChain | None = None
) -> EmpiricalDistribution:
    """Counts of the cadlag energy vector at time t across paths.

    All paths must cover t; states are indexed by `chain` (built from the
    first path's initial vector when omitted).
    """
    if not paths:
        raise ValueError("need at least one path")
    if chain is None:
        chain = build_chain(tuple(float(x) for x in paths[0].values[0]))
    counts = np.zeros(chain.n_states, dtype=np.int64)
    for path in paths:
        if path.horizon < t:
            raise ValueError(f"path horizon {path.horizon} does not cover t={t}")
        key = tuple(float(x) for x in path.value_at(t))
        try:
            counts[chain.index[key]] += 1
        except KeyError:
            raise ValueError(f"observed state {key} is not in the chain's state space")
    return EmpiricalDistribution(counts=counts, total=len(paths), chain=chain)


def _as_probabilities(dist) -> tuple[np.ndarray, LimitChain | None]:
    if isinstance(dist, EmpiricalDistribution):
        return dist.probabilities(), dist.chain
    return np.asarray(dist, dtype=float), None


def tv_distance(p, q) -> float:
    """Total variation distance, half the L1 difference on shared indexing."""
    pa, pc = _as_probabilities(p)
    qa, qc = _as_probabilities(q)
    if pc is not None and qc is not None and pc.states != qc.states:
        raise ValueError("distributions indexed by different state spaces")
    if pa.shape != qa.shape:
        raise ValueError(f"state spaces differ in size: {pa.shape} vs {qa.shape}")
    return 0.5 * float(np.abs(pa - qa).sum())


def tv_ci_halfwidth(emp: EmpiricalDistribution, z: float = 1.96) -> float:
    """Conservative normal-approximation half-width for an empirical TV:
    half the sum of per-state standard errors."""
    p = emp.probabilities()
    se = np.sqrt(p * (1.0 - p) / emp.total)
    return 0.5 * z * float(se.sum())


def swap_rate_estimate(logs: list[CollisionLog], min_events: int = 100) -> RateEstimate:
    """Exponential rate fit to first-collision macro waiting times.

    Maximum likelihood with right censoring at the horizon: rate = events /
    total macro exposure.  CI is the normal approximation
    rate * (1 +- 1.96 / sqrt(events)).
    """
    exposure = 0.0
    events = 0
    for log in logs:
        first = log.first_time()
        if first is None:
            exposure += log.horizon_micro * log.epsilon
        else:
            exposure += first * log.epsilon
            events += 1
    if events < min_events:
        raise InsufficientDataError(
            f"only {events} first-collision samples; need at least {min_events} to fit"
        )
    rate = events / exposure
    half = 1.96 * rate / math.sqrt(events)
    return RateEstimate(
        rate=rate, ci_lo=rate - half, ci_hi=rate + half, n_events=events, n_replicas=len(logs)
    )


def collision_intensity_estimate(logs: list[CollisionLog], min_replicas: int = 100) -> RateEstimate:
    """Stationary collision intensity: total collisions per unit macro time.

    Under the invariant start this estimates the instantaneous pair-collision
    rate regardless of how collisions cluster, unlike the first-collision
    interarrival fit, which a rational speed ratio depresses.  CI from the
    replicate-level spread of per-run rates.
    """
    if len(logs) < min_replicas:
        raise InsufficientDataError(f"need >= {min_replicas} replicas, got {len(logs)}")
    rates = np.array([log.n_collisions / (log.horizon_micro * log.epsilon) for log in logs])
    rate = float(rates.mean())
    half = 1.96 * float(rates.std(ddof=1)) / math.sqrt(len(rates))
    return RateEstimate(
        rate=rate,
        ci_lo=rate - half,
        ci_hi=rate + half,
        n_events=int(sum(log.n_collisions for log in logs)),
        n_replicas=len(logs),
    )


def jump_count_tail(logs: list[CollisionLog], k: int, thresholds) -> np.ndarray:
    """Empirical P(collision count of pair k >= n) for each threshold n."""
    if len(logs) < 1000:
        raise InsufficientDataError(f"need >= 1000 replicas, got {len(logs)}")
    counts = np.array([count_collisions(log, k) for log in logs])
    return np.array([float(np.mean(counts >= n)) for n in thresholds])


def recollision_stats(
    logs: list[CollisionLog], window: float, ratio_label: str = ""
) -> RecollisionReport:
    """Fraction of pair-1 collisions followed by another pair-1 collision
    within `window` micro-time units."""
    if window < 0:
        raise ValueError("window must be >= 0")
    total = 0
    rec = 0
    for log in logs:
        times = log.times[log.pairs == 1]
        cutoff = log.horizon_micro - window
        m = len(times)
        for i in range(m):
            if times[i] > cutoff:
                break
            total += 1
            if i + 1 < m and times[i + 1] - times[i] <= window:
                rec += 1
    fraction = rec / total if total else 0.0
    half = 1.96 * math.sqrt(fraction * (1.0 - fraction) / total) if total else math.nan
    return RecollisionReport(
        collisions=total,
        recollisions=rec,
        window_micro=window,
        fraction=fraction,
        ci_halfwidth=half,
        ratio_label=ratio_label,
    )
