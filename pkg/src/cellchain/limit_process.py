"""The limiting energy-exchange jump process on the macro clock.

States are energy vectors; the only transitions are adjacent swaps, pair k
firing at rate gamma(e_k, e_{k+1}) = max(sqrt(2 e_k), sqrt(2 e_{k+1})) / 2.
Swaps of equal energies carry rate but change nothing, so they appear in
Gillespie's waiting times yet never in the generator (self-loops cancel in
the master equation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import EnergyPath, exponential_draw

STATE_CAP = 10_000


class StateSpaceCapError(RuntimeError):
    """Too many reachable states to enumerate; sample with gillespie_run."""


def rate_gamma(a: float, b: float) -> float:
    """Adjacent-swap rate: half the larger of the two speeds sqrt(2e)."""
    if a <= 0 or b <= 0:
        raise ValueError(f"energies must be positive, got ({a}, {b})")
    return 0.5 * math.sqrt(2.0 * max(a, b))


@dataclass(frozen=True, eq=False)
class LimitChain:
    """Reachable states (all distinct permutations of the initial multiset,
    lexicographically ordered) and the sparse generator over them."""

    states: tuple[tuple[float, ...], ...]
    index: dict[tuple[float, ...], int]
    generator: sp.csr_matrix
    initial_index: int

    @property
    def n_states(self) -> int:
        return len(self.states)


def _distinct_permutations(items) -> list[tuple[float, ...]]:
    """All distinct permutations, ascending lexicographic order."""
    seq = sorted(items)
    out = [tuple(seq)]
    while True:
        i = len(seq) - 2
        while i >= 0 and seq[i] >= seq[i + 1]:
            i -= 1
        if i < 0:
            return out
        j = len(seq) - 1
        while seq[j] <= seq[i]:
            j -= 1
        seq[i], seq[j] = seq[j], seq[i]
        seq[i + 1 :] = reversed(seq[i + 1 :])
        out.append(tuple(seq))


def _orbit_size(items) -> int:
    count = math.factorial(len(items))
    for v in set(items):
        count //= math.factorial(list(items).count(v))
    return count


def build_chain(initial, cap: int = STATE_CAP) -> LimitChain:
    """Enumerate the swap orbit of `initial` and assemble the generator.

    Adjacent transpositions generate the full symmetric group, so the orbit
    is every distinct permutation of the initial multiset.
    """
    initial = tuple(float(e) for e in initial)
    if any(e <= 0 for e in initial):
        raise ValueError("energies must be positive")
    size = _orbit_size(initial)
    if size > cap:
        raise StateSpaceCapError(
            f"{size} reachable states exceed the cap {cap}; use gillespie_run instead"
        )
    states = tuple(_distinct_permutations(initial))
    index = {s: i for i, s in enumerate(states)}
    n = len(initial)
    rows: list[int] = []
    cols: list[int] = []
    rates: list[float] = []
    diag = np.zeros(len(states))
    for i, s in enumerate(states):
        for k in range(n - 1):
            if s[k] == s[k + 1]:
                continue
            swapped = s[:k] + (s[k + 1], s[k]) + s[k + 2 :]
            j = index[swapped]
            g = rate_gamma(s[k], s[k + 1])
            rows.append(i)
            cols.append(j)
            rates.append(g)
            diag[i] -= g
    rows.extend(range(len(states)))
    cols.extend(range(len(states)))
    rates.extend(diag)
    generator = sp.csr_matrix(
        (np.array(rates), (np.array(rows), np.array(cols))),
        shape=(len(states), len(states)),
    )
    return LimitChain(
        states=states, index=index, generator=generator, initial_index=index[initial]
    )


def _uniformized_step_count(mu: float, tol: float) -> int:
    p = math.exp(-mu)
    cum = p
    m = 0
    while 1.0 - cum >= tol and m < 10_000_000:
        m += 1
        p *= mu / m
        cum += p
    return m


def _evolve(qt: sp.csr_matrix, lam_u: float, v0: np.ndarray, t: float, tol: float) -> np.ndarray:
    """Uniformized transient solution from distribution v0 over time t."""
    mu = lam_u * t
    m_max = _uniformized_step_count(mu, tol)
    w = math.exp(-mu)
    v = v0.copy()
    out = w * v
    for m in range(1, m_max + 1):
        v = v + qt.dot(v) / lam_u
        w *= mu / m
        out += w * v
    return out


def solve_distribution(chain: LimitChain, t: float, tol: float = 1e-13) -> np.ndarray:
    """Transient distribution at macro time t from the chain's initial
    point mass, by uniformization (Poisson-weighted jump-matrix powers,
    truncation tail below `tol`)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    n = chain.n_states
    v = np.zeros(n)
    v[chain.initial_index] = 1.0
    diag = -chain.generator.diagonal()
    lam_u = 1.05 * float(diag.max()) if n > 0 else 0.0
    if lam_u <= 0.0 or t == 0.0:
        return v
    qt = chain.generator.T.tocsr()
    # keep the Poisson weights representable: split very long horizons
    chunks = max(1, int(math.ceil(lam_u * t / 500.0)))
    dt = t / chunks
    for _ in range(chunks):
        v = _evolve(qt, lam_u, v, dt, tol / chunks)
    return v


def gillespie_run(initial, horizon: float, rng: np.random.Generator) -> EnergyPath:
    """Sample one macro-clock trajectory of the jump process.

    Waiting times are exponential in the total rate over all adjacent pairs
    (equal-energy pairs included); the firing pair is chosen proportionally
    to its rate.  Only swaps that change the vector are recorded.  Draw
    recipe: one uniform for the waiting time, one for the pair choice.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    e = [float(x) for x in initial]
    n = len(e)
    times: list[float] = []
    values: list[tuple[float, ...]] = [tuple(e)]
    rates = [rate_gamma(e[k], e[k + 1]) for k in range(n - 1)]
    total = sum(rates)
    t = 0.0
    while total > 0.0:
        t += exponential_draw(rng, total)
        if t > horizon:
            break
        x = rng.random() * total
        acc = 0.0
        k = n - 2
        for i in range(n - 1):
            acc += rates[i]
            if x < acc:
                k = i
                break
        if e[k] != e[k + 1]:
            e[k], e[k + 1] = e[k + 1], e[k]
            times.append(t)
            values.append(tuple(e))
            for i in (k - 1, k, k + 1):
                if 0 <= i < n - 1:
                    rates[i] = rate_gamma(e[i], e[i + 1])
            total = sum(rates)
    return EnergyPath(
        times=np.array(times),
        values=np.array(values),
        clock="macro",
        horizon=horizon,
    )


@dataclass(frozen=True)
class SsepReport:
    passed: bool
    constant_rate: float
    max_abs_difference: float
    message: str


def ssep_generator_check(chain: LimitChain) -> SsepReport:
    """Check the chain against an independently built simple symmetric
    exclusion generator (occupied = higher energy), entry for entry.

    Requires exactly two distinct energy values.
    """
    values = sorted(set(chain.states[0]))
    if len(values) != 2:
        raise ValueError(f"expected exactly 2 distinct energies, got {len(values)}")
    lo, hi = values
    c = rate_gamma(lo, hi)
    n_states = chain.n_states
    if n_states > 4096:
        raise StateSpaceCapError("dense SSEP comparison capped at 4096 states")
    occ = [tuple(1 if e == hi else 0 for e in s) for s in chain.states]
    occ_index = {o: i for i, o in enumerate(occ)}
    ssep = np.zeros((n_states, n_states))
    for i, o in enumerate(occ):
        for k in range(len(o) - 1):
            if o[k] != o[k + 1]:
                swapped = o[:k] + (o[k + 1], o[k]) + o[k + 2 :]
                j = occ_index[swapped]
                ssep[i, j] += c
                ssep[i, i] -= c
    gen = chain.generator.toarray()
    off = gen.copy()
    np.fill_diagonal(off, 0.0)
    nonzero = off[off != 0.0]
    uniform = bool(np.all(nonzero == c)) if nonzero.size else True
    diff = float(np.max(np.abs(gen - ssep))) if n_states else 0.0
    passed = uniform and diff == 0.0
    msg = (
        f"generator matches SSEP at constant rate {c}"
        if passed
        else f"mismatch: uniform-rate={uniform}, max |difference|={diff}"
    )
    return SsepReport(passed=passed, constant_rate=c, max_abs_difference=diff, message=msg)
