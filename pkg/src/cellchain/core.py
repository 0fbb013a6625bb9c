"""Domain types, configuration, random streams, and initial-measure sampling.

Positions live in per-cell coordinates: particle k moves in [0, 1] and the
neighbor overlap of width epsilon shows up only through the ordering
constraint q_{k+1} >= q_k - 1 + epsilon.  Velocities are signed magnitudes
computed once from the energy table, so the energy multiset is conserved
exactly by construction (collisions swap table indices, never re-square
floats).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Absolute tolerance on the ordering constraint q_{k+1} >= q_k - 1 + eps.
ORDERING_TOL = 1e-12
# Max proposals when rejection-sampling positions; acceptance is
# 1 - O(N eps^2), so this never binds at documented scales.
REJECTION_CAP = 10**6


class ConfigError(ValueError):
    """Invalid configuration; `key` names the offending entry."""

    def __init__(self, key: str, reason: str):
        super().__init__(f"config key '{key}': {reason}")
        self.key = key
        self.reason = reason


class GibbsRejectionError(RuntimeError):
    """Rejection sampler exhausted its proposal budget."""


@dataclass(frozen=True)
class SystemConfig:
    """Physical and numerical parameters of one chain.

    `energies` assigns an initial energy to every particle; the distinct
    sorted values form the energy table reachable for all times.  `lam` is
    the Poisson velocity-flip rate (file key: `lambda`).
    """

    n_particles: int
    epsilon: float
    lam: float
    energies: tuple[float, ...]
    seed: int = 0
    replicas: int = 1

    def __post_init__(self):
        if self.n_particles < 1:
            raise ConfigError("n_particles", "must be a positive integer")
        # eps = 0 is the uncoupled dynamics, kept available as an oracle.
        if not (0.0 <= self.epsilon < 0.5):
            raise ConfigError("epsilon", f"must satisfy 0 <= epsilon < 1/2, got {self.epsilon}")
        if self.lam < 0.0:
            raise ConfigError("lambda", f"must be >= 0, got {self.lam}")
        if len(self.energies) != self.n_particles:
            raise ConfigError(
                "energies",
                f"expected {self.n_particles} entries, got {len(self.energies)}",
            )
        if any(e <= 0.0 for e in self.energies):
            raise ConfigError("energies", "all energies must be strictly positive")
        if self.replicas < 1:
            raise ConfigError("replicas", "must be a positive integer")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed", "must fit in an unsigned 64-bit integer")

    @property
    def energy_levels(self) -> tuple[float, ...]:
        """Distinct energies, ascending."""
        return tuple(sorted(set(self.energies)))

    @property
    def n_energies(self) -> int:
        return len(self.energy_levels)

    def level_table(self) -> np.ndarray:
        """Energy table as an array (index -> energy)."""
        return np.array(self.energy_levels, dtype=np.float64)

    def speed_table(self) -> np.ndarray:
        """Signed-magnitude table: speed[i] = sqrt(2 * energy_levels[i])."""
        return np.sqrt(2.0 * self.level_table())

    def level_indices(self) -> np.ndarray:
        """Per-particle index into the energy table."""
        levels = self.energy_levels
        return np.array([levels.index(e) for e in self.energies], dtype=np.int64)


@dataclass
class MicroState:
    """Exact state of the event-driven chain.

    `p` holds signed speeds taken verbatim from the speed table; `level`
    holds the matching energy-table index per particle.  Events negate or
    swap entries of `p`/`level` but never recompute them.
    """

    q: np.ndarray
    p: np.ndarray
    level: np.ndarray
    t: float
    next_flip: np.ndarray

    def copy(self) -> "MicroState":
        return MicroState(
            q=self.q.copy(),
            p=self.p.copy(),
            level=self.level.copy(),
            t=self.t,
            next_flip=self.next_flip.copy(),
        )

    def energies(self, config: SystemConfig) -> np.ndarray:
        return config.level_table()[self.level]


@dataclass(frozen=True)
class EnergyPath:
    """Cadlag record of the energy vector.

    `values[i]` holds on [times[i-1], times[i]) with times[-1] meaning 0, so
    values has one more row than times.  Consecutive rows differ.  `clock`
    tags whether times are micro or macro (macro = epsilon * micro).
    """

    times: np.ndarray
    values: np.ndarray
    clock: str
    horizon: float

    def __post_init__(self):
        if self.clock not in ("micro", "macro"):
            raise ValueError(f"clock must be 'micro' or 'macro', got {self.clock!r}")

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    def value_at(self, t: float) -> np.ndarray:
        """Energy vector at time t (cadlag: last jump at or before t)."""
        if t < 0 or t > self.horizon:
            raise ValueError(f"t={t} outside recorded horizon [0, {self.horizon}]")
        i = int(np.searchsorted(self.times, t, side="right"))
        return self.values[i]


@dataclass(frozen=True)
class Violation:
    """One violated MicroState invariant.

    `index` is the 1-based particle index (for pair constraints, the left
    particle of the pair).
    """

    kind: str
    index: int
    magnitude: float


def make_stream(seed: int, replica: int) -> np.random.Generator:
    """Deterministic stream for (seed, replica).

    Mixing function: numpy SeedSequence over the pair [seed, replica]; the
    resulting PCG64 streams are independent across replica indices and
    bit-reproducible for equal pairs.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(replica)]))


def exponential_draw(rng: np.random.Generator, rate: float) -> float:
    """Inverse-CDF exponential draw, -log(1-U)/rate.

    A fixed explicit recipe (one uniform per draw) so every engine consumes
    the random stream identically.  rate = 0 gives +inf (no event).
    """
    if rate == 0.0:
        rng.random()  # keep the draw count engine-independent
        return math.inf
    return -math.log1p(-rng.random()) / rate


def _sample_positions(
    n: int, epsilon: float, rng: np.random.Generator, cap: int = REJECTION_CAP
) -> tuple[np.ndarray, int]:
    """Uniform positions on the ordered region, by rejection from [0,1]^n.

    Returns (positions, number of proposals used).
    """
    for attempt in range(1, cap + 1):
        q = rng.random(n)
        if n == 1 or bool(np.all(q[1:] >= q[:-1] - 1.0 + epsilon)):
            return q, attempt
    raise GibbsRejectionError(
        f"no accepted position sample in {cap} proposals "
        f"(acceptance rate < {1.0 / cap:.1e}; n={n}, epsilon={epsilon})"
    )


def sample_gibbs_conditioned(config: SystemConfig, rng: np.random.Generator) -> MicroState:
    """Draw the initial state: uniform positions on the constrained region,
    independent fair velocity signs, speeds from the energy table, and one
    exponential flip time per particle.

    Draw order (fixed): position proposals, then n sign uniforms, then n
    flip uniforms.
    """
    n = config.n_particles
    q, _ = _sample_positions(n, config.epsilon, rng)
    signs = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    level = config.level_indices()
    p = signs * config.speed_table()[level]
    next_flip = np.array([exponential_draw(rng, config.lam) for _ in range(n)])
    return MicroState(q=q, p=p, level=level, t=0.0, next_flip=next_flip)


def validate_state(state: MicroState, config: SystemConfig) -> list[Violation]:
    """Report every violated MicroState invariant (empty list = valid).

    Checks: ordering constraint (within ORDERING_TOL), zero velocities,
    positions inside the cell (within ORDERING_TOL), and exact membership
    of |p_k| in the speed table at the particle's level index.
    """
    out: list[Violation] = []
    n = config.n_particles
    q, p = state.q, state.p
    speeds = config.speed_table()
    for k in range(n - 1):
        bound = q[k] - 1.0 + config.epsilon
        if q[k + 1] < bound - ORDERING_TOL:
            out.append(Violation("ordering", k + 1, float(bound - q[k + 1])))
    for k in range(n):
        if p[k] == 0.0:
            out.append(Violation("zero_velocity", k + 1, 0.0))
        elif abs(p[k]) != speeds[state.level[k]]:
            out.append(
                Violation("speed_table", k + 1, float(abs(p[k]) - speeds[state.level[k]]))
            )
        if q[k] < -ORDERING_TOL or q[k] > 1.0 + ORDERING_TOL:
            out.append(Violation("position_range", k + 1, float(max(-q[k], q[k] - 1.0))))
    return out


# --- config file ---------------------------------------------------------

_CORE_KEYS = ("n_particles", "epsilon", "lambda", "energies", "seed", "replicas", "horizon_macro")


def _parse_scalar(key: str, raw: str, kind: type):
    try:
        if kind is int:
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {raw!r} as {kind.__name__}") from exc


def load_config_file(path: str | Path) -> dict[str, str]:
    """Read a `key = value` text file ('#' starts a comment)."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def config_from_file(
    path: str | Path,
    seed: int | None = None,
    replicas: int | None = None,
) -> tuple[SystemConfig, dict[str, str]]:
    """Build a SystemConfig from a config file.

    Recognized keys: n_particles, epsilon, lambda, energies (comma list),
    seed, replicas, horizon_macro.  Unknown keys are returned untouched in
    the extras dict for per-command use; `horizon_macro` is passed through
    there as well.  `seed`/`replicas` arguments override the file.
    """
    raw = load_config_file(path)
    for key in ("n_particles", "epsilon", "lambda", "energies"):
        if key not in raw:
            raise ConfigError(key, "missing required key")
    try:
        energies = tuple(float(tok) for tok in raw["energies"].replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError("energies", f"cannot parse {raw['energies']!r}") from exc
    if not energies:
        raise ConfigError("energies", "empty list")
    config = SystemConfig(
        n_particles=_parse_scalar("n_particles", raw["n_particles"], int),
        epsilon=_parse_scalar("epsilon", raw["epsilon"], float),
        lam=_parse_scalar("lambda", raw["lambda"], float),
        energies=energies,
        seed=seed if seed is not None else _parse_scalar("seed", raw.get("seed", "0"), int),
        replicas=replicas
        if replicas is not None
        else _parse_scalar("replicas", raw.get("replicas", "1"), int),
    )
    extras = {k: v for k, v in raw.items() if k not in _CORE_KEYS[:6]}
    return config, extras
