"""Exact event-driven simulation of the coupled chain.

Free flight between events, elastic wall reflections, momentum-swap
collisions when a pair reaches the contact manifold q_{k+1} = q_k - 1 + eps
with p_k > p_{k+1}, and Poisson velocity flips.  No time discretization:
positions advance linearly to each event time.

Two engines produce bit-identical trajectories: a pure-Python reference
(heap scheduler with invalidation tokens) and a numba-compiled loop that
keeps the same lazily invalidated candidate times in flat arrays.  Both
consume the replica's random stream with the same draw recipe (one uniform
per flip event).
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .core import (
    ORDERING_TOL,
    MicroState,
    SystemConfig,
    EnergyPath,
    exponential_draw,
    make_stream,
    sample_gibbs_conditioned,
    validate_state,
)

try:
    from . import _kernels

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - exercised only without numba
    _kernels = None
    HAVE_NUMBA = False

# Tolerance for internal consistency checks (stale events, negative gaps).
# Looser than ORDERING_TOL: it absorbs one position-advance roundoff.
_EVENT_TOL = 1e-9


class EventKind(IntEnum):
    """Tie precedence is the enum order: FLIP < COLLISION < WALL_LEFT < WALL_RIGHT."""

    FLIP = 0
    COLLISION = 1
    WALL_LEFT = 2
    WALL_RIGHT = 3


@dataclass(frozen=True)
class Event:
    """A scheduled event; `index` is the 1-based particle index (for a
    collision, the left particle of the pair)."""

    kind: EventKind
    time: float
    index: int


class StaleEventError(RuntimeError):
    """Event no longer matches the state it is applied to."""


class SimulationConsistencyError(RuntimeError):
    """Internal contract broken (e.g. ordering gap negative beyond tolerance)."""


@dataclass(frozen=True)
class CollisionLog:
    """Every collision event of one run: micro time, 1-based pair index, and
    the energies of the pair just before the swap."""

    times: np.ndarray
    pairs: np.ndarray
    e_before_left: np.ndarray
    e_before_right: np.ndarray
    horizon_micro: float
    epsilon: float

    @property
    def n_collisions(self) -> int:
        return len(self.times)

    def first_time(self) -> float | None:
        """Micro time of the first collision, or None if none occurred."""
        return float(self.times[0]) if len(self.times) else None


@dataclass(frozen=True)
class RunResult:
    path: EnergyPath
    log: CollisionLog
    final_state: MicroState
    n_events: int
    ties: int


def count_collisions(log: CollisionLog, k: int) -> int:
    """Number of collision events of pair k (1-based) in the log."""
    return int(np.count_nonzero(log.pairs == k))


# --- candidate computation (shared event semantics) -----------------------


def _wall_candidate(q: float, p: float, t: float) -> tuple[float, EventKind]:
    if p < 0.0:
        return t + q / (-p), EventKind.WALL_LEFT
    return t + (1.0 - q) / p, EventKind.WALL_RIGHT


def _collision_candidate(
    qk: float, qk1: float, pk: float, pk1: float, t: float, eps: float
) -> float:
    """Absolute collision time of a pair, or +inf if separating."""
    dv = pk - pk1
    if dv <= 0.0:
        return math.inf
    gap = qk1 - qk + 1.0 - eps
    if gap < -_EVENT_TOL:
        raise SimulationConsistencyError(
            f"negative contact gap {gap:.3e} beyond tolerance at scheduling time {t}"
        )
    if gap < 0.0:
        gap = 0.0
    return t + gap / dv


def next_event(state: MicroState, config: SystemConfig) -> Event:
    """Earliest among wall hits, pair collisions, and scheduled flips.

    Ties are broken by kind precedence (FLIP < COLLISION < WALL_LEFT <
    WALL_RIGHT) and then by lowest index.
    """
    n = config.n_particles
    q, p, t = state.q, state.p, state.t
    best: tuple[float, int, int] | None = None
    for k in range(n):
        cand = (float(state.next_flip[k]), int(EventKind.FLIP), k)
        if best is None or cand < best:
            best = cand
    for k in range(n - 1):
        tc = _collision_candidate(q[k], q[k + 1], p[k], p[k + 1], t, config.epsilon)
        cand = (float(tc), int(EventKind.COLLISION), k)
        if cand < best:
            best = cand
    for k in range(n):
        tw, kind = _wall_candidate(float(q[k]), float(p[k]), t)
        cand = (float(tw), int(kind), k)
        if cand < best:
            best = cand
    time, kind, k0 = best
    return Event(kind=EventKind(kind), time=time, index=k0 + 1)


def apply_event(
    state: MicroState,
    event: Event,
    rng: np.random.Generator,
    config: SystemConfig,
) -> MicroState:
    """Advance all positions linearly to the event time and apply it in place.

    Flips and wall hits negate the particle's velocity (a flip also draws a
    fresh exponential clock); a collision swaps the pair's momenta and
    clamps the pair exactly back onto the contact manifold.
    """
    k = event.index - 1
    dt = event.time - state.t
    if dt < -_EVENT_TOL:
        raise StaleEventError(f"event at {event.time} is in the past of state at {state.t}")
    state.q += state.p * dt
    state.t = event.time
    q, p = state.q, state.p
    if event.kind == EventKind.FLIP:
        if event.time > state.next_flip[k] + _EVENT_TOL:
            raise StaleEventError(f"flip clock of particle {event.index} already rescheduled")
        p[k] = -p[k]
        state.next_flip[k] = event.time + exponential_draw(rng, config.lam)
    elif event.kind == EventKind.WALL_LEFT:
        if abs(q[k]) > _EVENT_TOL or p[k] >= 0.0:
            raise StaleEventError(f"particle {event.index} not at the left wall with p<0")
        q[k] = 0.0
        p[k] = -p[k]
    elif event.kind == EventKind.WALL_RIGHT:
        if abs(q[k] - 1.0) > _EVENT_TOL or p[k] <= 0.0:
            raise StaleEventError(f"particle {event.index} not at the right wall with p>0")
        q[k] = 1.0
        p[k] = -p[k]
    elif event.kind == EventKind.COLLISION:
        gap = q[k + 1] - q[k] + 1.0 - config.epsilon
        if abs(gap) > _EVENT_TOL or p[k] <= p[k + 1]:
            raise StaleEventError(f"pair {event.index} not in approaching contact")
        q[k + 1] = q[k] - 1.0 + config.epsilon
        p[k], p[k + 1] = p[k + 1], p[k]
        lv = state.level
        lv[k], lv[k + 1] = lv[k + 1], lv[k]
    else:  # pragma: no cover
        raise ValueError(f"unknown event kind {event.kind}")
    return state


# --- python reference engine ----------------------------------------------


class _Scheduler:
    """Priority queue of event candidates with invalidation tokens.

    One slot per candidate source: ('flip', k), ('wall', k), ('coll', k).
    Rescheduling a slot bumps its version; stale heap entries are discarded
    on pop.  Slot times are also mirrored in `times` for the tie scan.
    """

    def __init__(self, n: int):
        self.heap: list[tuple[float, int, int, int, str]] = []
        self.version: dict[tuple[str, int], int] = {}
        self.times: dict[tuple[str, int], float] = {}
        self.n = n

    def schedule(self, slot: tuple[str, int], time: float, kind: EventKind):
        ver = self.version.get(slot, 0) + 1
        self.version[slot] = ver
        self.times[slot] = time
        if math.isfinite(time):
            heapq.heappush(self.heap, (time, int(kind), slot[1], ver, slot[0]))

    def pop(self) -> tuple[float, EventKind, int]:
        while True:
            time, kind, index, ver, name = heapq.heappop(self.heap)
            if self.version.get((name, index)) == ver:
                return time, EventKind(kind), index

    def count_at(self, time: float) -> int:
        return sum(1 for v in self.times.values() if v == time)


def _schedule_wall(sched: _Scheduler, state: MicroState, k: int):
    tw, kind = _wall_candidate(float(state.q[k]), float(state.p[k]), state.t)
    sched.schedule(("wall", k), tw, kind)


def _schedule_coll(sched: _Scheduler, state: MicroState, eps: float, k: int):
    tc = _collision_candidate(
        float(state.q[k]), float(state.q[k + 1]), float(state.p[k]), float(state.p[k + 1]),
        state.t, eps,
    )
    sched.schedule(("coll", k), tc, EventKind.COLLISION)


def _run_python(
    state: MicroState,
    config: SystemConfig,
    t_end: float,
    rng: np.random.Generator,
    validate_each_event: bool,
):
    n = config.n_particles
    eps = config.epsilon
    sched = _Scheduler(n)
    for k in range(n):
        sched.schedule(("flip", k), float(state.next_flip[k]), EventKind.FLIP)
        _schedule_wall(sched, state, k)
    for k in range(n - 1):
        _schedule_coll(sched, state, eps, k)

    jump_times: list[float] = []
    jump_levels: list[np.ndarray] = []
    coll_times: list[float] = []
    coll_pairs: list[int] = []
    coll_left: list[int] = []
    coll_right: list[int] = []
    n_events = 0
    ties = 0

    while True:
        time, kind, k = sched.pop()
        if time > t_end:
            break
        ties += max(sched.count_at(time) - 1, 0)
        if kind == EventKind.COLLISION:
            coll_times.append(time)
            coll_pairs.append(k + 1)
            coll_left.append(int(state.level[k]))
            coll_right.append(int(state.level[k + 1]))
        apply_event(state, Event(kind=kind, time=time, index=k + 1), rng, config)
        n_events += 1
        if kind == EventKind.FLIP:
            sched.schedule(("flip", k), float(state.next_flip[k]), EventKind.FLIP)
            _schedule_wall(sched, state, k)
            if k > 0:
                _schedule_coll(sched, state, eps, k - 1)
            if k < n - 1:
                _schedule_coll(sched, state, eps, k)
        elif kind in (EventKind.WALL_LEFT, EventKind.WALL_RIGHT):
            _schedule_wall(sched, state, k)
            if k > 0:
                _schedule_coll(sched, state, eps, k - 1)
            if k < n - 1:
                _schedule_coll(sched, state, eps, k)
        else:  # collision of pair (k, k+1)
            if coll_left[-1] != coll_right[-1]:
                jump_times.append(time)
                jump_levels.append(state.level.copy())
            _schedule_wall(sched, state, k)
            _schedule_wall(sched, state, k + 1)
            if k > 0:
                _schedule_coll(sched, state, eps, k - 1)
            _schedule_coll(sched, state, eps, k)
            if k + 1 < n - 1:
                _schedule_coll(sched, state, eps, k + 1)
        if validate_each_event:
            violations = validate_state(state, config)
            if violations:
                raise SimulationConsistencyError(
                    f"invariant violated after event {n_events}: {violations}"
                )

    dt = t_end - state.t
    state.q += state.p * dt
    state.t = t_end
    return (
        np.array(jump_times),
        np.array(jump_levels, dtype=np.int64).reshape(len(jump_levels), n),
        np.array(coll_times),
        np.array(coll_pairs, dtype=np.int64),
        np.array(coll_left, dtype=np.int64),
        np.array(coll_right, dtype=np.int64),
        n_events,
        ties,
    )


# --- public run ------------------------------------------------------------


def run(
    config: SystemConfig,
    horizon: float,
    rng: np.random.Generator,
    *,
    clock: str = "macro",
    initial: MicroState | None = None,
    engine: str = "auto",
    validate_each_event: bool = False,
) -> RunResult:
    """Simulate one replica up to `horizon` on the given clock.

    Macro horizon t means micro horizon t/epsilon; the energy path is
    recorded on the same clock as the horizon.  The initial state defaults
    to a fresh Gibbs-conditioned draw from `rng`.
    """
    if clock not in ("micro", "macro"):
        raise ValueError(f"clock must be 'micro' or 'macro', got {clock!r}")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if clock == "macro":
        if config.epsilon <= 0.0:
            raise ValueError("macro clock requires epsilon > 0")
        t_end = horizon / config.epsilon
    else:
        t_end = horizon

    state = initial.copy() if initial is not None else sample_gibbs_conditioned(config, rng)
    if engine == "auto":
        engine = "numba" if (HAVE_NUMBA and not validate_each_event) else "python"
    if engine == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba engine requested but numba is unavailable")
        (jt, jl, ct, cp, cl, cr, n_events, ties, err) = _kernels.run_kernel(
            state.q, state.p, state.level, state.next_flip,
            state.t, t_end, config.epsilon, config.lam, _EVENT_TOL, rng,
        )
        if err != 0:
            raise SimulationConsistencyError("negative contact gap beyond tolerance")
        state.t = t_end
    elif engine == "python":
        (jt, jl, ct, cp, cl, cr, n_events, ties) = _run_python(
            state, config, t_end, rng, validate_each_event
        )
    else:
        raise ValueError(f"unknown engine {engine!r}")

    table = config.level_table()
    # values[0] is the pre-run energy vector; state.level was mutated by the
    # run, so rebuild it from the original assignment.
    first = initial.level if initial is not None else config.level_indices()
    values = np.vstack([table[first][None, :], table[jl]]) if len(jl) else table[first][None, :]
    times = jt * config.epsilon if clock == "macro" else jt
    path = EnergyPath(times=times, values=values, clock=clock, horizon=horizon)
    log = CollisionLog(
        times=ct,
        pairs=cp,
        e_before_left=table[cl],
        e_before_right=table[cr],
        horizon_micro=t_end,
        epsilon=config.epsilon,
    )
    return RunResult(path=path, log=log, final_state=state, n_events=n_events, ties=ties)


def run_replicas(
    config: SystemConfig,
    horizon: float,
    *,
    clock: str = "macro",
    replicas: int | None = None,
    threads: int = 1,
    engine: str = "auto",
    validate_each_event: bool = False,
) -> list[RunResult]:
    """Run `replicas` independent replicas; replica r uses the stream
    derived from (config.seed, r).  Results are ordered by replica index,
    so output is independent of the thread count."""
    n_rep = config.replicas if replicas is None else replicas

    def one(r: int) -> RunResult:
        return run(
            config,
            horizon,
            make_stream(config.seed, r),
            clock=clock,
            engine=engine,
            validate_each_event=validate_each_event,
        )

    if threads <= 1:
        return [one(r) for r in range(n_rep)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_rep)))


def single_particle_endpoints(
    q0: float,
    p0: float,
    lam: float,
    t: float,
    n_samples: int,
    rng: np.random.Generator,
    engine: str = "auto",
) -> tuple[np.ndarray, np.ndarray]:
    """Endpoint (position, velocity sign) of `n_samples` uncoupled
    single-particle trajectories started at (q0, p0), all drawn from one
    stream.  This is the Monte-Carlo side of the kernel cross-check; it
    runs the same event engine with N = 1.
    """
    if engine == "auto":
        engine = "numba" if HAVE_NUMBA else "python"
    if engine == "numba":
        return _kernels.single_particle_endpoints(q0, p0, lam, t, n_samples, rng)
    config = SystemConfig(n_particles=1, epsilon=0.0, lam=lam, energies=(0.5 * p0 * p0,))
    qs = np.empty(n_samples)
    sg = np.empty(n_samples)
    for i in range(n_samples):
        state = MicroState(
            q=np.array([q0]),
            p=np.array([p0]),
            level=np.array([0], dtype=np.int64),
            t=0.0,
            next_flip=np.array([exponential_draw(rng, lam)]),
        )
        res = run(config, t, rng, clock="micro", initial=state, engine="python")
        qs[i] = res.final_state.q[0]
        sg[i] = math.copysign(1.0, res.final_state.p[0])
    return qs, sg
