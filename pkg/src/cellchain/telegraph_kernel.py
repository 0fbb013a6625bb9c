"""Analytic transition kernel of one noisy particle in its cell.

The free-line density is a Poisson mixture over flip counts n: an atom of
mass e^{-lam t} on the deterministic endpoint (n = 0), plus for each n >= 1
a polynomial density in u = (q' - q)/(p t) supported on |u| <= 1 whose
velocity branch alternates with the parity of n.  Reflection at the cell
walls turns the line density into an image sum over even shifts (same
orientation) and odd reflected shifts.

Series coefficients are evaluated with log-gamma weights; the image range
is exact (finite support), only the n-series is truncated at a Poisson
tail below `truncation`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SPEED_MATCH_TOL = 1e-12


@dataclass(frozen=True)
class KernelQuery:
    """Arguments of the cell kernel: start (q, p), end (q_prime, p_prime),
    elapsed time t, flip rate lam.  |p_prime| must equal |p|."""

    q: float
    p: float
    q_prime: float
    p_prime: float
    t: float
    lam: float


@dataclass(frozen=True)
class KernelValue:
    """Atom weight e^{-lam t} on the deterministic image plus the value of
    the bounded smooth density at (q_prime, p_prime)."""

    atom_weight: float
    atom_point: tuple[float, float]
    smooth_density: float


@dataclass(frozen=True)
class MixingCertificate:
    """Numerical Doeblin certificate: grid lower bound `alpha` of the smooth
    part at probe time t0, optionally with a fitted L1 decay rate."""

    t0: float
    alpha: float
    grid_resolution: int
    decay_rate: float | None = None


def deterministic_flow(q: float, p: float, t: float) -> tuple[float, float]:
    """Free flight with elastic wall reflections: fold q + p t into [0, 1]
    by the period-2 triangle map; the velocity sign flips once per fold."""
    if t < 0:
        raise ValueError("t must be >= 0")
    x = q + p * t
    y = x % 2.0
    if y == 0.0:
        return 0.0, abs(p)
    if y == 1.0:
        return 1.0, -abs(p)
    if y < 1.0:
        return y, p
    return 2.0 - y, -p


def _poisson_tail_cutoff(mu: float, tol: float) -> int:
    """Smallest m with P(Poisson(mu) > m) < tol."""
    if mu <= 0.0:
        return 1
    p = math.exp(-mu)
    cum = p
    m = 0
    while 1.0 - cum >= tol and m < 100_000:
        m += 1
        p *= mu / m
        cum += p
    return max(m, 1)


def _check_speeds(p: float, p_prime: float):
    if p == 0.0:
        raise ValueError("p must be nonzero")
    if abs(abs(p_prime) - abs(p)) > _SPEED_MATCH_TOL:
        raise ValueError(f"|p_prime| must equal |p| (got {p_prime} vs {p})")


def rho_n(n: int, query: KernelQuery) -> float:
    """The n-flip factor of the free-line density (Poisson weight excluded).

    Even n >= 2 keeps the velocity sign, odd n flips it; zero outside the
    reachable interval |q' - q| <= |p| t or on the wrong velocity branch.
    n = 0 is the symbolic atom and is rejected here.
    """
    if n == 0:
        raise ValueError("n = 0 is the deterministic atom, not a density")
    if query.t <= 0:
        raise ValueError("t must be > 0")
    _check_speeds(query.p, query.p_prime)
    p, t = query.p, query.t
    dq = query.q_prime - query.q
    if abs(dq) > abs(p) * t:
        return 0.0
    same_sign = (query.p_prime > 0) == (p > 0)
    u = dq / (p * t)
    if n % 2 == 0:
        if not same_sign:
            return 0.0
        a = n // 2
        coef = math.exp(
            math.lgamma(n + 1) - n * math.log(2.0) - math.lgamma(a + 1) - math.lgamma(a)
        ) / (abs(p) * t)
        return coef * (1.0 + u) ** a * (1.0 - u) ** (a - 1)
    if same_sign:
        return 0.0
    a = (n - 1) // 2
    coef = math.exp(
        math.lgamma(n + 1) - n * math.log(2.0) - 2.0 * math.lgamma(a + 1)
    ) / (abs(p) * t)
    return coef * ((1.0 + u) * (1.0 - u)) ** a


def _series(u: np.ndarray, same_branch: bool, mu: float, pt_abs: float, n_max: int) -> np.ndarray:
    """Poisson-weighted n-series of the line density at points u, one branch."""
    acc = np.zeros_like(u)
    if mu <= 0.0:
        return acc
    log_half_mu = math.log(mu / 2.0)
    if same_branch:
        for n in range(2, n_max + 1, 2):
            a = n // 2
            logw = -mu + n * log_half_mu - math.lgamma(a + 1) - math.lgamma(a)
            w = math.exp(logw) / pt_abs
            acc += w * (1.0 + u) ** a * (1.0 - u) ** (a - 1)
    else:
        for n in range(1, n_max + 1, 2):
            a = (n - 1) // 2
            logw = -mu + n * log_half_mu - 2.0 * math.lgamma(a + 1)
            w = math.exp(logw) / pt_abs
            acc += w * ((1.0 + u) * (1.0 - u)) ** a
    return acc


def smooth_density_grid(
    q: float,
    p: float,
    q_prime,
    p_prime_sign: int,
    t: float,
    lam: float,
    truncation: float = 1e-10,
) -> np.ndarray:
    """Smooth part g of the cell kernel, vectorized over target positions.

    `p_prime_sign` selects the target velocity p' = sign * |p|.  Sums the
    reflected images: even integer shifts keep orientation, odd shifts
    reflect position and velocity.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    if p == 0.0:
        raise ValueError("p must be nonzero")
    qp = np.atleast_1d(np.asarray(q_prime, dtype=float))
    out = np.zeros_like(qp)
    if lam == 0.0:
        return out
    speed = abs(p)
    p_prime = p_prime_sign * speed
    mu = lam * t
    n_max = _poisson_tail_cutoff(mu, truncation)
    kmax = int(math.ceil(speed * t)) + 2
    for k in range(-kmax, kmax + 1):
        if k % 2 == 0:
            y = qp + k
            w = p_prime
        else:
            y = 1.0 - qp + k
            w = -p_prime
        u = (y - q) / (p * t)
        mask = np.abs(u) <= 1.0
        if not mask.any():
            continue
        same_branch = (w > 0) == (p > 0)
        out[mask] += _series(u[mask], same_branch, mu, speed * t, n_max)
    return out


def kernel_f(query: KernelQuery, truncation: float = 1e-10) -> KernelValue:
    """Cell-kernel value at one query point: exact atom weight e^{-lam t},
    the atom's location from the deterministic flow, and the smooth density
    at (q_prime, p_prime)."""
    if query.t <= 0:
        raise ValueError("t must be > 0")
    _check_speeds(query.p, query.p_prime)
    atom_weight = math.exp(-query.lam * query.t)
    atom_point = deterministic_flow(query.q, query.p, query.t)
    sign = 1 if query.p_prime > 0 else -1
    smooth = smooth_density_grid(
        query.q, query.p, np.array([query.q_prime]), sign, query.t, query.lam, truncation
    )[0]
    return KernelValue(atom_weight=atom_weight, atom_point=atom_point, smooth_density=float(smooth))


def _support_breakpoints(q: float, speed: float, t: float) -> np.ndarray:
    """Interior target positions where some image hits the edge of the
    reachable interval; the smooth density is analytic between them."""
    reach = speed * t
    pts = [0.0, 1.0]
    kmax = int(math.ceil(reach)) + 2
    for k in range(-kmax, kmax + 1):
        for s in (-reach, reach):
            if k % 2 == 0:
                c = q - k + s
            else:
                c = 1.0 + k - q + s
            if 0.0 < c < 1.0:
                pts.append(c)
    return np.unique(np.array(pts))


def kernel_total_mass(
    q: float,
    p: float,
    t: float,
    lam: float,
    truncation: float = 1e-12,
    nodes: int = 40,
) -> float:
    """Atom weight plus the quadrature mass of the smooth part over both
    velocity signs; piecewise Gauss-Legendre between image-support edges,
    where the truncated series is polynomial."""
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    bp = _support_breakpoints(q, abs(p), t)
    mass = math.exp(-lam * t)
    for sign in (1, -1):
        for a, b in zip(bp[:-1], bp[1:]):
            half = 0.5 * (b - a)
            pts = 0.5 * (a + b) + half * xg
            vals = smooth_density_grid(q, p, pts, sign, t, lam, truncation)
            mass += half * float(np.dot(wg, vals))
    return mass


def doeblin_scan(
    lam: float,
    speed: float,
    t0: float,
    grid_resolution: int = 33,
    truncation: float = 1e-10,
) -> MixingCertificate:
    """Numerical lower bound of the smooth kernel part over a grid of
    (q, q', sign, sign') at probe time t0."""
    if t0 <= 0:
        raise ValueError("t0 must be > 0")
    grid = np.linspace(0.0, 1.0, grid_resolution)
    alpha = math.inf
    for s in (1, -1):
        for s_prime in (1, -1):
            for qv in grid:
                vals = smooth_density_grid(qv, s * speed, grid, s_prime, t0, lam, truncation)
                alpha = min(alpha, float(vals.min()))
    return MixingCertificate(t0=t0, alpha=alpha, grid_resolution=grid_resolution)


def project_energy_marginal(dist) -> np.ndarray:
    """Position-uniform, sign-symmetric projection with the same total mass.

    `dist` is a normalized array of shape (n_position_bins, 2), one column
    per velocity sign.  The projection is the fixed point of the uncoupled
    dynamics for one energy, hence idempotent.
    """
    arr = np.asarray(dist, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("expected shape (n_bins, 2)")
    total = float(arr.sum())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"distribution must be normalized, sums to {total}")
    return np.full_like(arr, 1.0 / arr.size)


def mixing_decay(
    lam: float,
    speed: float,
    q0: float,
    sign0: int,
    times,
    n_grid: int = 1024,
    truncation: float = 1e-12,
) -> tuple[np.ndarray, float]:
    """L1 distance between the evolved kernel row of a point-mass start and
    its position-uniform sign-symmetric projection, per time, plus the
    least-squares exponential decay rate fitted on log distances.

    The atom contributes its full weight e^{-lam t}; the smooth part is
    integrated against |g - 1/2| by the midpoint rule.
    """
    times = np.asarray(times, dtype=float)
    if len(times) == 0 or np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be positive and increasing")
    mids = (np.arange(n_grid) + 0.5) / n_grid
    p0 = sign0 * speed
    dists = np.empty_like(times)
    for i, t in enumerate(times):
        d = math.exp(-lam * t)
        for s_prime in (1, -1):
            g = smooth_density_grid(q0, p0, mids, s_prime, t, lam, truncation)
            d += float(np.abs(g - 0.5).mean())
        dists[i] = d
    slope, _ = np.polyfit(times, np.log(dists), 1)
    return dists, float(-slope)
