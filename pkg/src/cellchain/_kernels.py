"""Numba-compiled event loops.

Semantics mirror the pure-Python engine in `microsim` exactly: identical
candidate formulas, identical tie precedence (flip < collision < wall-left
< wall-right, then lowest index), identical draw recipe (one uniform per
flip, next time = t + (-log1p(-u) / lam)).  Candidate times are cached per
slot and recomputed only for the particles and pairs an event touches, so
both engines see the same floats and produce bit-identical trajectories.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _wall(qk, pk, t):
    if pk < 0.0:
        return t + qk / (-pk), 2
    return t + (1.0 - qk) / pk, 3


@njit(cache=True, nogil=True, inline="always")
def _coll(qk, qk1, pk, pk1, t, eps, tol):
    dv = pk - pk1
    if dv <= 0.0:
        return np.inf, True
    gap = qk1 - qk + 1.0 - eps
    if gap < -tol:
        return np.inf, False
    if gap < 0.0:
        gap = 0.0
    return t + gap / dv, True


@njit(cache=True, nogil=True)
def run_kernel(q, p, level, next_flip, t0, t_end, eps, lam, tol, gen):
    n = q.shape[0]
    t = t0
    err = 0

    wall_time = np.empty(n)
    wall_kind = np.empty(n, np.int64)
    coll_time = np.empty(n - 1) if n > 1 else np.empty(0)
    for k in range(n):
        wt, wk = _wall(q[k], p[k], t)
        wall_time[k] = wt
        wall_kind[k] = wk
    for k in range(n - 1):
        ct, ok = _coll(q[k], q[k + 1], p[k], p[k + 1], t, eps, tol)
        if not ok:
            err = 1
        coll_time[k] = ct

    jcap = 16
    jm = 0
    jt = np.empty(jcap)
    jlv = np.empty((jcap, n), np.int64)
    ccap = 16
    cm = 0
    ct_arr = np.empty(ccap)
    cp_arr = np.empty(ccap, np.int64)
    cl_arr = np.empty(ccap, np.int64)
    cr_arr = np.empty(ccap, np.int64)
    n_events = 0
    ties = 0

    while err == 0:
        bt = np.inf
        bk = 99
        bi = -1
        for k in range(n):
            tt = next_flip[k]
            if tt < bt or (tt == bt and (0 < bk or (0 == bk and k < bi))):
                bt = tt
                bk = 0
                bi = k
        for k in range(n - 1):
            tt = coll_time[k]
            if tt < bt or (tt == bt and (1 < bk or (1 == bk and k < bi))):
                bt = tt
                bk = 1
                bi = k
        for k in range(n):
            tt = wall_time[k]
            kk = wall_kind[k]
            if tt < bt or (tt == bt and (kk < bk or (kk == bk and k < bi))):
                bt = tt
                bk = kk
                bi = k
        if bt > t_end:
            break

        c = 0
        for k in range(n):
            if next_flip[k] == bt:
                c += 1
            if wall_time[k] == bt:
                c += 1
        for k in range(n - 1):
            if coll_time[k] == bt:
                c += 1
        if c > 1:
            ties += c - 1

        dt = bt - t
        for i in range(n):
            q[i] += p[i] * dt
        t = bt
        k = bi

        if bk == 0:  # velocity flip
            p[k] = -p[k]
            u = gen.random()
            if lam == 0.0:
                next_flip[k] = np.inf
            else:
                next_flip[k] = t + (-np.log1p(-u) / lam)
            wt, wk2 = _wall(q[k], p[k], t)
            wall_time[k] = wt
            wall_kind[k] = wk2
            if k > 0:
                ctt, ok = _coll(q[k - 1], q[k], p[k - 1], p[k], t, eps, tol)
                if not ok:
                    err = 1
                coll_time[k - 1] = ctt
            if k < n - 1:
                ctt, ok = _coll(q[k], q[k + 1], p[k], p[k + 1], t, eps, tol)
                if not ok:
                    err = 1
                coll_time[k] = ctt
        elif bk == 1:  # collision of pair (k, k+1)
            if cm == ccap:
                ccap *= 2
                new_t = np.empty(ccap)
                new_p = np.empty(ccap, np.int64)
                new_l = np.empty(ccap, np.int64)
                new_r = np.empty(ccap, np.int64)
                new_t[:cm] = ct_arr
                new_p[:cm] = cp_arr
                new_l[:cm] = cl_arr
                new_r[:cm] = cr_arr
                ct_arr = new_t
                cp_arr = new_p
                cl_arr = new_l
                cr_arr = new_r
            ct_arr[cm] = t
            cp_arr[cm] = k + 1
            cl_arr[cm] = level[k]
            cr_arr[cm] = level[k + 1]
            cm += 1
            changed = level[k] != level[k + 1]
            q[k + 1] = q[k] - 1.0 + eps
            tmp = p[k]
            p[k] = p[k + 1]
            p[k + 1] = tmp
            tmpl = level[k]
            level[k] = level[k + 1]
            level[k + 1] = tmpl
            if changed:
                if jm == jcap:
                    jcap *= 2
                    new_jt = np.empty(jcap)
                    new_jl = np.empty((jcap, n), np.int64)
                    new_jt[:jm] = jt
                    new_jl[:jm] = jlv
                    jt = new_jt
                    jlv = new_jl
                jt[jm] = t
                for i in range(n):
                    jlv[jm, i] = level[i]
                jm += 1
            wt, wk2 = _wall(q[k], p[k], t)
            wall_time[k] = wt
            wall_kind[k] = wk2
            wt, wk2 = _wall(q[k + 1], p[k + 1], t)
            wall_time[k + 1] = wt
            wall_kind[k + 1] = wk2
            if k > 0:
                ctt, ok = _coll(q[k - 1], q[k], p[k - 1], p[k], t, eps, tol)
                if not ok:
                    err = 1
                coll_time[k - 1] = ctt
            ctt, ok = _coll(q[k], q[k + 1], p[k], p[k + 1], t, eps, tol)
            if not ok:
                err = 1
            coll_time[k] = ctt
            if k + 1 < n - 1:
                ctt, ok = _coll(q[k + 1], q[k + 2], p[k + 1], p[k + 2], t, eps, tol)
                if not ok:
                    err = 1
                coll_time[k + 1] = ctt
        else:  # wall reflection
            if bk == 2:
                q[k] = 0.0
            else:
                q[k] = 1.0
            p[k] = -p[k]
            wt, wk2 = _wall(q[k], p[k], t)
            wall_time[k] = wt
            wall_kind[k] = wk2
            if k > 0:
                ctt, ok = _coll(q[k - 1], q[k], p[k - 1], p[k], t, eps, tol)
                if not ok:
                    err = 1
                coll_time[k - 1] = ctt
            if k < n - 1:
                ctt, ok = _coll(q[k], q[k + 1], p[k], p[k + 1], t, eps, tol)
                if not ok:
                    err = 1
                coll_time[k] = ctt
        n_events += 1

    if err == 0:
        dt = t_end - t
        for i in range(n):
            q[i] += p[i] * dt

    return (
        jt[:jm].copy(),
        jlv[:jm].copy(),
        ct_arr[:cm].copy(),
        cp_arr[:cm].copy(),
        cl_arr[:cm].copy(),
        cr_arr[:cm].copy(),
        n_events,
        ties,
        err,
    )


@njit(cache=True, nogil=True)
def single_particle_endpoints(q0, p0, lam, t_end, n_samples, gen):
    """Endpoint (q, sign) of n_samples uncoupled single-particle runs from a
    fixed start, one initial flip draw plus one draw per flip event each."""
    qs = np.empty(n_samples)
    sg = np.empty(n_samples)
    for s in range(n_samples):
        q = q0
        p = p0
        t = 0.0
        u = gen.random()
        if lam == 0.0:
            nf = np.inf
        else:
            nf = 0.0 + (-np.log1p(-u) / lam)
        while True:
            if p < 0.0:
                wt = t + q / (-p)
                wk = 2
            else:
                wt = t + (1.0 - q) / p
                wk = 3
            if nf <= wt:
                et = nf
                ek = 0
            else:
                et = wt
                ek = wk
            if et > t_end:
                q += p * (t_end - t)
                break
            q += p * (et - t)
            t = et
            if ek == 0:
                p = -p
                u = gen.random()
                nf = t + (-np.log1p(-u) / lam)
            elif ek == 2:
                q = 0.0
                p = -p
            else:
                q = 1.0
                p = -p
        qs[s] = q
        sg[s] = 1.0 if p > 0.0 else -1.0
    return qs, sg
