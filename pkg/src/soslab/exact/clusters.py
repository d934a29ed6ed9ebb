"""Cluster weights of non-elementary contours and the mixed cluster/elementary expansion."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..contours import (DOWN, UP, NonElemCluster, cluster_decompose, elementary_scale, extract_contours,
                        interiors_in)
from ..lattice import OFFSETS6, BoundaryData, GeometryError, INF, Region, constant_boundary, general_region
from ..measure import Params
from .enumeration import energies, enumerate_states
from .partition import RenormalizedSum, edge_length, log_Z_el_bd


class RegimeError(ValueError):
    """The elementary scale depends on the base height, which this evaluator does not support."""


def check_base_independent(p: Params, max_diam: int) -> float:
    """Return the common elementary scale, or raise if it differs between heights.

    The scale min(1/lambda, e^{3 beta (h+1)}) is the same for every h >= 0 once
    lambda >= e^{-3 beta}; otherwise it is enough that every contour in play
    is elementary at height 0.
    """
    D0 = elementary_scale(0, p)
    if p.lam > 0 and p.lam >= math.exp(-3 * p.beta):
        return D0
    if max_diam <= D0:
        return D0
    raise RegimeError("elementary scale varies with the base height here; use lambda >= e^{-3 beta}")


def _halo(sites: frozenset) -> set:
    return {(x + dx, y + dy) for (x, y) in sites for dx, dy in OFFSETS6} - set(sites)


def _region_bd(sites: frozenset, level: int, ceiling: int, floor_at: set = (), ceil_at: set = (),
               signing: str | None = None, rim_sites: set = ()) -> BoundaryData:
    """Constant boundary ``level`` on a region with extra floors/ceilings at ``level`` on given sites."""
    V = general_region(sites)
    bd = constant_boundary(V, level, "free", ceiling=ceiling)
    f, c = bd.floor.copy(), bd.ceiling.copy()
    for i, s in enumerate(V.sites):
        if s in floor_at or (signing in ("plus", "pinned") and s in rim_sites):
            f[i] = max(f[i], level)
        if s in ceil_at or (signing in ("minus", "pinned") and s in rim_sites):
            c[i] = min(c[i], level)
    if np.any(f > c):
        raise GeometryError("empty band")
    return bd.replace(floor=f, ceiling=c)


def annulus_log_Z_el(gamma, children, ann: frozenset, p: Params, ceiling: int, D: float) -> float:
    """log Z^el_{S(gamma), h(gamma), Ann} with the level-line constraints of gamma and its children."""
    if not ann:
        return 0.0
    t = gamma.height
    outside = _halo(gamma.interior)
    rim = {s for s in ann if _halo(frozenset([s])) & outside}
    floor_at, ceil_at = set(), set()
    if gamma.sign == UP:
        floor_at |= rim
    else:
        ceil_at |= rim
    for ch in children:
        near = _halo(ch.interior) & ann
        (ceil_at if ch.sign == UP else floor_at).update(near)
    try:
        bd = _region_bd(ann, t, ceiling, floor_at, ceil_at)
    except GeometryError:
        return -math.inf
    return log_Z_el_bd(bd, p, t, D)


def cluster_weight(cluster: NonElemCluster, h: int, p: Params, ceiling: int) -> float:
    """log W^rn_h(C): -beta sum|gamma| + sum log Z^el(Ann(gamma; C)) - log Z^rn.el_{h, Ann(C)}."""
    D = check_base_independent(p, max(c.diameter for c in cluster.members))
    lw = -p.beta * sum(c.length for c in cluster.members)
    for g in cluster.members:
        lw += annulus_log_Z_el(g, cluster.children.get(g, []), cluster.ann[g], p, ceiling, D)
    return lw - ann_log_Z_rn_el(cluster, h, p, ceiling)


_RN_EL_CACHE: dict = {}


def ann_log_Z_rn_el(cluster: NonElemCluster, h: int, p: Params, ceiling: int) -> float:
    """log Z^rn.el_{h, Ann(C)}, signed like the root on its rim (0 for an empty annulus)."""
    total = cluster.ann_total
    if not total:
        return 0.0
    sg = "plus" if cluster.root.sign == UP else "minus"
    key = (total, sg, h, p.beta, p.lam, ceiling)
    if key not in _RN_EL_CACHE:
        R = general_region(total)
        if R.simply_connected:
            rs = RenormalizedSum(R, h, p, ceiling, "rn_elem")
            val = math.log(rs.total(sg)) - p.lam * h * len(R)
        else:
            val = log_Z_el_bd(constant_boundary(R, h, "free", ceiling=ceiling), p, h, elementary_scale(h, p))
        if len(_RN_EL_CACHE) > 100_000:
            _RN_EL_CACHE.clear()
        _RN_EL_CACHE[key] = val
    return _RN_EL_CACHE[key]


def _cluster_key(cl: NonElemCluster) -> tuple:
    return tuple(sorted((c.sign, c.height, tuple(sorted(c.interior))) for c in cl.members))


@dataclass
class ExpansionCheck:
    log_Z: float
    log_Z_expansion: float
    log_Z_b2: float
    n_groups: int
    max_group_error: float


def cluster_expansion_check(V: Region, signing: str, h: int, p: Params, ceiling: int) -> ExpansionCheck:
    """Verify the cluster/elementary factorisation of Z_{eta,h,V} group by group.

    Every configuration is assigned its collection of non-elementary clusters.
    For each collection the total Gibbs weight is compared with

        Z^el_{eta,h,Ext} * prod_C e^{-beta sum|gamma|} prod_gamma Z^el_{S(gamma),h(gamma),Ann(gamma;C)},

    and the sum over collections is also rebuilt from the cluster weights
    W^rn_h(C) times Z^rn.el_{h,Ann(C)}.
    """
    D = check_base_independent(p, max(len(set(x for x, _ in V.sites)), len(set(y for _, y in V.sites))))
    bd = constant_boundary(V, h, signing, ceiling=ceiling)
    st = enumerate_states(bd)
    lw = -energies(st, bd, p)
    groups: dict = defaultdict(list)
    reps: dict = {}
    for s_idx in range(len(st)):
        coll = extract_contours(st[s_idx], V, h)
        clusters, _ = cluster_decompose(coll, p)
        key = tuple(sorted(_cluster_key(c) for c in clusters))
        groups[key].append(lw[s_idx])
        if key not in reps:
            reps[key] = clusters
    rim_sites = {s for i, s in enumerate(V.sites) if V.rim[i]}
    lhs_all, rhs_all, b2_all = [], [], []
    worst = 0.0
    for key, vals in groups.items():
        lhs = float(logsumexp(vals))
        clusters = reps[key]
        ext = V.site_set
        fl, cl_ = set(), set()
        for c in clusters:
            ext = ext - c.root.interior
            (cl_ if c.root.sign == UP else fl).update(_halo(c.root.interior))
        rhs = 0.0
        if ext:
            try:
                ebd = _region_bd(frozenset(ext), h, ceiling, fl & ext, cl_ & ext, signing, rim_sites)
                rhs = log_Z_el_bd(ebd, p, h, D)
            except GeometryError:
                rhs = -math.inf
        b2 = rhs
        for c in clusters:
            part = -p.beta * c.total_length
            for g in c.members:
                part += annulus_log_Z_el(g, c.children.get(g, []), c.ann[g], p, ceiling, D)
            rhs += part
            b2 += cluster_weight(c, h, p, ceiling) + ann_log_Z_rn_el(c, h, p, ceiling)
        worst = max(worst, abs(lhs - rhs))
        lhs_all.append(lhs)
        rhs_all.append(rhs)
        b2_all.append(b2)
    return ExpansionCheck(float(logsumexp(lhs_all)), float(logsumexp(rhs_all)), float(logsumexp(b2_all)),
                          len(groups), worst)


def two_contour_clusters(V: Region, h: int, p: Params) -> list[NonElemCluster]:
    """All clusters made of a non-elementary contour and one nested non-elementary child."""
    D = elementary_scale(h, p)
    big = [I for I in interiors_in(V.sites) if max(
        max(x for x, _ in I) - min(x for x, _ in I), max(y for _, y in I) - min(y for _, y in I)) + 1 > D]
    from ..contours import Contour
    out = []
    for outer in big:
        for inner in big:
            if inner < outer:
                for so in (UP, DOWN):
                    if so == DOWN and h == 0:
                        continue
                    ho = h + 1 if so == UP else h - 1
                    for si in (UP, DOWN):
                        hi = ho + 1 if si == UP else ho - 1
                        if hi < 0:
                            continue
                        a, b = Contour(so, ho, outer), Contour(si, hi, inner)
                        cl = NonElemCluster(a, [a, b], {a: [b], b: []},
                                            {a: outer - inner, b: inner})
                        out.append(cl)
    return out


def cluster_bound_log(cluster: NonElemCluster, h: int, p: Params) -> float:
    """log of exp(-(beta-1) sum|gamma| - sum e^{-4 beta (h ^ (h(gamma)+1)) - 3 beta} |Ann(gamma; C)|)."""
    out = -(p.beta - 1) * sum(edge_length(c.interior) for c in cluster.members)
    for c in cluster.members:
        out -= math.exp(-4 * p.beta * min(h, c.height + 1) - 3 * p.beta) * len(cluster.ann[c])
    return out
