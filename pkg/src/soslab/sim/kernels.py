"""Compiled event loops for coupled continuous-time Glauber chains.

All chains share one stream of events (time, site, uniform u).  At an event
each chain replaces its height at the site by the inverse CDF of its own
one-ring transition law, ordered by height, evaluated at u.  For the ``pm_one``
kernel that law puts mass p_down/2 on phi_v - 1 and p_up/2 on phi_v + 1, where
p_up = w(phi_v + 1) / (w(phi_v) + w(phi_v + 1)) (and symmetrically p_down),
and the remaining mass on phi_v.

For ``pm_one`` the loop is thinned: a site only generates events at the rate
at which some chain could move there (max over chains of p_down/2 plus max of
p_up/2), kept in a sum tree, and u is drawn from the part of [0, 1) where a
move can happen.  This has the same law as the plain loop.
"""

from __future__ import annotations

import math

import numba
import numpy as np

BIG = 1 << 40
KERNEL_PM_ONE = 0
KERNEL_FULL = 1
STOP_NONE = 0
STOP_COALESCE = 1
STOP_ESCAPE = 2


@numba.njit(cache=True, inline="always")
def _site_energy(X, m, v, h, nbr, bval, beta, lam, bmix):
    e = 0.0
    for d in range(4):
        j = nbr[v, d]
        if j >= 0:
            e += abs(h - X[m, j])
        else:
            b = bval[v, d]
            # bmix interpolates each boundary height b towards b + 1
            e += abs(h - b) + bmix * (abs(h - b - 1) - abs(h - b))
    return beta * e + lam * h


@numba.njit(cache=True)
def _pm_probs(X, m, v, nbr, bval, floor, ceil, beta, lam, bmix):
    c = X[m, v]
    e0 = _site_energy(X, m, v, c, nbr, bval, beta, lam, bmix)
    pu = 0.0
    pd = 0.0
    if c + 1 <= ceil[v]:
        d = _site_energy(X, m, v, c + 1, nbr, bval, beta, lam, bmix) - e0
        pu = 1.0 / (1.0 + math.exp(min(d, 700.0)))
    if c - 1 >= floor[v]:
        d = _site_energy(X, m, v, c - 1, nbr, bval, beta, lam, bmix) - e0
        pd = 1.0 / (1.0 + math.exp(min(d, 700.0)))
    return 0.5 * pd, 0.5 * pu


@numba.njit(cache=True)
def _full_draw(X, m, v, u, nbr, bval, floor, ceil, beta, lam, tail_k, bmix):
    a = floor[v]
    if ceil[v] < BIG:
        top = ceil[v]
        inf_tail = False
    else:
        top = a
        for d in range(4):
            j = nbr[v, d]
            w = X[m, j] if j >= 0 else bval[v, d]
            if w > top:
                top = w
        top += tail_k
        inf_tail = True
    n = top - a + 1
    es = np.empty(n)
    emin = 1e300
    for i in range(n):
        es[i] = _site_energy(X, m, v, a + i, nbr, bval, beta, lam, bmix)
        if es[i] < emin:
            emin = es[i]
    tot = 0.0
    for i in range(n):
        es[i] = math.exp(-(es[i] - emin))
        tot += es[i]
    q = math.exp(-(4 * beta + lam))
    if inf_tail:
        tot += es[n - 1] * q / (1 - q)
    acc = 0.0
    for i in range(n):
        acc += es[i] / tot
        if u < acc:
            return a + i
    # geometric tail above the listed heights
    r = (u - acc) / max(1.0 - acc, 1e-300)
    extra = 1 + int(math.floor(math.log(max(1.0 - r, 1e-300)) / math.log(q))) if inf_tail else 0
    return top + extra


@numba.njit(cache=True)
def _tree_set(tree, P, i, val):
    k = P + i
    tree[k] = val
    k >>= 1
    while k >= 1:
        tree[k] = tree[2 * k] + tree[2 * k + 1]
        k >>= 1


@numba.njit(cache=True)
def _tree_find(tree, P, r):
    k = 1
    while k < P:
        if r < tree[2 * k]:
            k = 2 * k
        else:
            r -= tree[2 * k]
            k = 2 * k + 1
    return k - P


@numba.njit(cache=True)
def _droplet_diam(X, m, v, level, nbr6, sx, sy, stamp, queue, mark):
    """Bounding-box side of the 6-component of {phi >= level} containing v (0 if phi_v < level)."""
    if X[m, v] < level:
        return 0
    head = 0
    tail = 1
    queue[0] = v
    stamp[v] = mark
    x0 = sx[v]
    x1 = sx[v]
    y0 = sy[v]
    y1 = sy[v]
    while head < tail:
        w = queue[head]
        head += 1
        if sx[w] < x0:
            x0 = sx[w]
        if sx[w] > x1:
            x1 = sx[w]
        if sy[w] < y0:
            y0 = sy[w]
        if sy[w] > y1:
            y1 = sy[w]
        for d in range(6):
            z = nbr6[w, d]
            if z >= 0 and stamp[z] != mark and X[m, z] >= level:
                stamp[z] = mark
                queue[tail] = z
                tail += 1
    return max(x1 - x0, y1 - y0) + 1


@numba.njit(cache=True)
def _censor_epoch(t, c_times):
    for i in range(len(c_times)):
        if t < c_times[i]:
            return i
    return -1


@numba.njit(cache=True)
def coupled_events(X, t, t_end, nbr, bval, nbr6, sx, sy, floor, ceil, beta, lams, kernel,
                   censored, c_times, c_sites, c_lo, c_hi, seed, sample_dt, samples, max_events,
                   stop_mode, stop_level, stop_r, hit_times, tail_k, order_pairs, bmix):
    """Run all chains in X (M, N) from time t to t_end on a shared event stream.

    Returns (final time, number of events, number of samples written, stopped flag,
    ordering violations).  ``order_pairs`` lists (i, j) with X[i] >= X[j] expected;
    the pair is checked at the updated site after every event.
    Samples of the full state are taken at t + sample_dt, t + 2 sample_dt, ...
    while there is room in ``samples``.
    """
    np.random.seed(seed)
    M, N = X.shape
    P = 1
    while P < N:
        P *= 2
    tree = np.zeros(2 * P)
    thinned = kernel == KERNEL_PM_ONE
    dn = np.zeros(N)
    up = np.zeros(N)
    if thinned:
        for v in range(N):
            md = 0.0
            mu_ = 0.0
            for m in range(M):
                a, b = _pm_probs(X, m, v, nbr, bval, floor, ceil, beta, lams[m], bmix)
                if a > md:
                    md = a
                if b > mu_:
                    mu_ = b
            dn[v] = md
            up[v] = mu_
            _tree_set(tree, P, v, md + mu_)
    ndiff = 0
    if stop_mode == STOP_COALESCE:
        for v in range(N):
            for m in range(1, M):
                if X[m, v] != X[0, v]:
                    ndiff += 1
                    break
        if ndiff == 0:
            return t, 0, 0, True, 0
    stamp = np.zeros(N, dtype=np.int64)
    queue = np.zeros(N, dtype=np.int64)
    mark = 0
    remaining = 0
    if stop_mode == STOP_ESCAPE:
        for m in range(M):
            if hit_times[m] < 0:
                remaining += 1
        if remaining == 0:
            return t, 0, 0, True, 0
    n_samples = 0
    next_sample = t + sample_dt if sample_dt > 0 else np.inf
    n_ev = 0
    viol = 0
    newh = np.zeros(M, dtype=np.int64)
    while n_ev < max_events:
        rate = tree[1] if thinned else float(N)
        if rate <= 0:
            dt = np.inf
        else:
            dt = np.random.exponential(1.0 / rate)
        t_next = t + dt
        while next_sample <= min(t_next, t_end) and n_samples < samples.shape[0]:
            samples[n_samples, :, :] = X
            n_samples += 1
            next_sample += sample_dt
        if t_next > t_end:
            return t_end, n_ev, n_samples, False, viol
        t = t_next
        n_ev += 1
        if thinned:
            v = _tree_find(tree, P, np.random.random() * tree[1])
            if v >= N:
                v = N - 1
            r = np.random.random() * (dn[v] + up[v])
            u = r if r < dn[v] else 1.0 - up[v] + (r - dn[v])
        else:
            v = np.random.randint(N)
            u = np.random.random()
        # new heights
        ep = -1
        if len(c_times) > 0:
            ep = _censor_epoch(t, c_times)
        for m in range(M):
            c = X[m, v]
            if kernel == KERNEL_PM_ONE:
                a, b = _pm_probs(X, m, v, nbr, bval, floor, ceil, beta, lams[m], bmix)
                if u < a:
                    h = c - 1
                elif u >= 1.0 - b:
                    h = c + 1
                else:
                    h = c
            else:
                h = _full_draw(X, m, v, u, nbr, bval, floor, ceil, beta, lams[m], tail_k, bmix)
            if censored[m] and ep >= 0 and h != c:
                # both ends of the move must lie in the epoch's band
                if (not c_sites[ep, v] or min(h, c) < c_lo[ep] or max(h, c) > c_hi[ep]):
                    h = c
            newh[m] = h
        was_diff = False
        if stop_mode == STOP_COALESCE:
            for m in range(1, M):
                if X[m, v] != X[0, v]:
                    was_diff = True
                    break
        for m in range(M):
            X[m, v] = newh[m]
        for q in range(order_pairs.shape[0]):
            if X[order_pairs[q, 0], v] < X[order_pairs[q, 1], v]:
                viol += 1
        if thinned:
            for k in range(5):
                w = v if k == 4 else nbr[v, k]
                if w < 0:
                    continue
                md = 0.0
                mu_ = 0.0
                for m in range(M):
                    a, b = _pm_probs(X, m, w, nbr, bval, floor, ceil, beta, lams[m], bmix)
                    if a > md:
                        md = a
                    if b > mu_:
                        mu_ = b
                dn[w] = md
                up[w] = mu_
                _tree_set(tree, P, w, md + mu_)
        if stop_mode == STOP_COALESCE:
            is_diff = False
            for m in range(1, M):
                if X[m, v] != X[0, v]:
                    is_diff = True
                    break
            if was_diff and not is_diff:
                ndiff -= 1
            elif is_diff and not was_diff:
                ndiff += 1
            if ndiff == 0:
                return t, n_ev, n_samples, True, viol
        elif stop_mode == STOP_ESCAPE:
            for m in range(M):
                if hit_times[m] < 0 and X[m, v] >= stop_level:
                    mark += 1
                    if _droplet_diam(X, m, v, stop_level, nbr6, sx, sy, stamp, queue, mark) >= stop_r:
                        hit_times[m] = t
                        remaining -= 1
            if remaining == 0:
                return t, n_ev, n_samples, True, viol
    return t, n_ev, n_samples, False, viol
