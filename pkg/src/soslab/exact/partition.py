"""Plain, elementary, renormalized and truncated partition functions on small regions.

All quantities are computed at a finite uniform ceiling; the plain partition
function also carries a rigorous bound on the mass of configurations above the
ceiling, so that statements about the unbounded model can be checked on the
safe side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

from ..contours import Contour, UP, DOWN, elementary_scale, interiors_in
from ..lattice import (OFFSETS4, OFFSETS6, BoundaryData, GeometryError, Region, Site, bbox_size,
                       constant_boundary, general_region, label, sites_to_grid)
from ..measure import Params
from .enumeration import ResourceError, energies, enumerate_states
from .transfer import log_partition


class ConvergenceError(ArithmeticError):
    """A contour weight is at least 1, so copies of it cannot be resummed."""


@dataclass(frozen=True)
class PFValue:
    """log Z at a finite ceiling, plus an upper bound for the unbounded model."""

    log: float
    log_upper: float
    ceiling: int

    @property
    def tail_bound(self) -> float:
        """Relative mass possibly missing above the ceiling: Z_inf / Z_H - 1 <= tail_bound."""
        return math.expm1(self.log_upper - self.log)


def _region(V) -> Region:
    return V if isinstance(V, Region) else general_region(V)


def _cb(V: Region, signing, h: int, ceiling: int) -> BoundaryData:
    return constant_boundary(V, h, signing, ceiling=ceiling)


# ---------------------------------------------------------------------------
# ceiling tail


def level_set_sum(V: Region, p: Params, exact_max: int = 16) -> float:
    """q = sum over nonempty S in V of e^{-beta |d_e S| - lambda |S|}.

    Exact for |V| <= exact_max, otherwise the bound (2^|V| - 1) e^{-4 beta}.
    """
    n = len(V)
    if n == 0:
        return 0.0
    if n > exact_max:
        return math.expm1(n * math.log(2)) * math.exp(-4 * p.beta)
    masks = np.arange(1, 1 << n, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(np.int64)
    deg_out = 4 - (V.nbr >= 0).sum(axis=1)  # bonds leaving V
    size = bits.sum(axis=1)
    cut = bits @ deg_out
    e = V.edges
    if len(e):
        cut = cut + (bits[:, e[:, 0]] != bits[:, e[:, 1]]).sum(axis=1)
    return float(np.exp(-p.beta * cut - p.lam * size).sum())


def ceiling_tail_log_factor(V: Region, p: Params, k: int, ceiling: int) -> float:
    """log(1 + q^{H-k+1} / (1-q)): Z_inf <= Z_H times this factor (boundary k, ceiling H >= k)."""
    q = level_set_sum(V, p)
    if q >= 1 or ceiling < k:
        return math.inf
    return math.log1p(q ** (ceiling - k + 1) / (1 - q))


# ---------------------------------------------------------------------------
# plain partition functions


def log_Z_bd(bd: BoundaryData, p: Params) -> float:
    """log Z for arbitrary boundary data with finite ceilings (transfer matrix, enumeration fallback)."""
    try:
        return log_partition(bd, p)
    except (ResourceError, ValueError):
        st = enumerate_states(bd)
        return float(logsumexp(-energies(st, bd, p))) if len(st) else -math.inf


def partition_function(V, signing, h: int, p: Params, ceiling: int) -> PFValue:
    """log Z_{eta,h,V}: boundary h, floor 0, signing eta on the rim, ceiling H."""
    V = _region(V)
    val = _log_Z_or_empty(V, signing, h, p, ceiling)
    return PFValue(val, val + ceiling_tail_log_factor(V, p, h, ceiling), ceiling)


def log_Z(V, signing, h: int, p: Params, ceiling: int) -> float:
    return _log_Z_cached(_canon(V), signing, h, p.beta, p.lam, ceiling)


def _canon(V) -> tuple:
    """Translation-normalised site tuple, for caching."""
    s = V.sites if isinstance(V, Region) else tuple(sorted(V))
    x0 = min(x for x, _ in s)
    y0 = min(y for _, y in s)
    return tuple(sorted((x - x0, y - y0) for x, y in s))


@lru_cache(maxsize=200_000)
def _log_Z_cached(sites: tuple, signing: str, h: int, beta: float, lam: float, ceiling: int) -> float:
    if h < 0:
        return -math.inf
    return _log_Z_or_empty(general_region(sites), signing, h, Params(beta, lam, allow_large_field=True),
                           ceiling)


def _log_Z_or_empty(V: Region, signing, h: int, p: Params, ceiling: int) -> float:
    """log Z, or -inf when the signing pins the rim outside the band (e.g. plus above the ceiling)."""
    try:
        bd = _cb(V, signing, h, ceiling)
    except GeometryError:
        return -math.inf
    return log_Z_bd(bd, p)


# ---------------------------------------------------------------------------
# elementary partition functions


@lru_cache(maxsize=512)
def _component_table(sites: tuple, D: float) -> np.ndarray:
    """ok[mask]: every 6-component of the masked sites has bounding-box side <= D."""
    n = len(sites)
    if n > 22:
        raise ResourceError("elementary tables need at most 22 sites")
    grid, origin = sites_to_grid(sites)
    ys = np.array([y - origin[1] for _, y in sites])
    xs = np.array([x - origin[0] for x, _ in sites])
    ok = np.ones(1 << n, dtype=bool)
    if D >= max(grid.shape):
        return ok
    g = np.zeros(grid.shape, dtype=bool)
    for mask in range(1, 1 << n):
        g[:] = False
        sel = [(mask >> i) & 1 == 1 for i in range(n)]
        g[ys[sel], xs[sel]] = True
        lab, k = label(g, 6)
        for c in range(1, k + 1):
            yy, xx = np.nonzero(lab == c)
            if max(yy.max() - yy.min(), xx.max() - xx.min()) + 1 > D:
                ok[mask] = False
                break
    return ok


def elementary_filter(states: np.ndarray, V: Region, h: int, D: float) -> np.ndarray:
    """Boolean per state: all contours based at h are elementary at scale D.

    By nesting it is enough that every 6-component of {phi > h} and of
    {phi < h} has a bounding box of side at most D.
    """
    table = _component_table(tuple(V.sites), float(min(D, 1e9)))
    w = (1 << np.arange(len(V), dtype=np.int64))
    up = (states > h).astype(np.int64) @ w
    dn = (states < h).astype(np.int64) @ w
    return table[up] & table[dn]


def log_Z_el_bd(bd: BoundaryData, p: Params, h: int, D: float) -> float:
    st = enumerate_states(bd)
    if len(st) == 0:
        return -math.inf
    keep = elementary_filter(st, bd.region, h, D)
    if not keep.any():
        return -math.inf
    return float(logsumexp(-energies(st[keep], bd, p)))


def elementary_partition_function(V, signing, h: int, p: Params, ceiling: int,
                                  scale: float | None = None) -> PFValue:
    """log Z^el_{eta,h,V}: only configurations whose contours are all h-elementary.

    The upper value inflates by the same ceiling tail factor as the plain
    partition function (Z^el <= Z term by term above the ceiling).
    """
    V = _region(V)
    D = elementary_scale(h, p) if scale is None else scale
    if bbox_size(V.sites) <= D:
        # no contour in V can be non-elementary: Z^el = Z
        return partition_function(V, signing, h, p, ceiling)
    try:
        val = log_Z_el_bd(_cb(V, signing, h, ceiling), p, h, D)
    except GeometryError:
        val = -math.inf
    return PFValue(val, val + ceiling_tail_log_factor(V, p, h, ceiling), ceiling)


# ---------------------------------------------------------------------------
# renormalized weights


def _interior_of(gamma) -> tuple[frozenset, str]:
    if isinstance(gamma, Contour):
        return gamma.interior, gamma.sign
    return frozenset(gamma), UP


def edge_length(interior: frozenset) -> int:
    return sum((x + dx, y + dy) not in interior for (x, y) in interior for dx, dy in OFFSETS4)


def renormalized_weight(gamma, h: int, p: Params, ceiling: int, sign: str | None = None) -> float:
    """log W^rn_h(gamma) = -beta|gamma| + log Z_{+,h+1,Int}/Z_{+,h,Int} (up), or the
    minus / h-1 analogue (down)."""
    interior, s = _interior_of(gamma)
    s = sign or s
    if s == DOWN and h <= 0:
        raise GeometryError("a down contour has no renormalized weight at height 0")
    c = _canon(interior)
    L = edge_length(interior)
    if s == UP:
        num = _log_Z_cached(c, "plus", h + 1, p.beta, p.lam, ceiling)
        den = _log_Z_cached(c, "plus", h, p.beta, p.lam, ceiling)
    else:
        num = _log_Z_cached(c, "minus", h - 1, p.beta, p.lam, ceiling)
        den = _log_Z_cached(c, "minus", h, p.beta, p.lam, ceiling)
    return -p.beta * L + num - den


def truncated_weight(gamma, h: int, p: Params, ceiling: int, sign: str | None = None) -> float:
    """log W^tr_h = min(log W^rn_h, -(beta - 5)|gamma|)."""
    interior, _ = _interior_of(gamma)
    return min(renormalized_weight(gamma, h, p, ceiling, sign), -(p.beta - 5) * edge_length(interior))


# ---------------------------------------------------------------------------
# renormalized partition functions


@dataclass(frozen=True)
class RNResult:
    log: float
    tail_bound: float  # Z^rn minus its multiplicity-capped value (0 if uncapped)
    n_contours: int


class _Geometry:
    """Bitmask view of all contour interiors in a region."""

    def __init__(self, V: Region, max_diam: float = math.inf):
        self.V = V
        self.n = len(V)
        self.bit = {s: 1 << i for i, s in enumerate(V.sites)}
        self.full = (1 << self.n) - 1
        ints = [I for I in interiors_in(V.sites) if bbox_size(I) <= max_diam]
        self.interiors = ints
        self.mask = [self._m(I) for I in ints]
        self.rim = []
        self.halo = []
        for I in ints:
            r, hl = 0, 0
            for (x, y) in I:
                for dx, dy in OFFSETS6:
                    q = (x + dx, y + dy)
                    if q not in I:
                        r |= self.bit[(x, y)]
                        if q in self.bit:
                            hl |= self.bit[q]
            self.rim.append(r)
            self.halo.append(hl)
        self.by_min: dict[int, list[int]] = {}
        for a, m in enumerate(self.mask):
            self.by_min.setdefault(m & -m, []).append(a)
        self.index = {m: a for a, m in enumerate(self.mask)}

    def _m(self, sites) -> int:
        out = 0
        for s in sites:
            out |= self.bit[s]
        return out


def _allowed_signs(touches_rim: bool, s: str, h: int) -> tuple[str, ...]:
    signs = (UP, DOWN) if h > 0 else (UP,)
    if not touches_rim or s == "free":
        return signs
    if s == "pinned":
        return ()
    want = UP if s in ("plus", UP) else DOWN
    return tuple(t for t in signs if t == want)


class RenormalizedSum:
    """Exact sum over admissible renormalized contour collections in a simply connected region.

    Admissibility (pairwise): interiors are nested or disjoint; disjoint
    contours of the same sign are not 6-adjacent; a contour nested in another
    and meeting its rim has the same sign; contours meeting the rim of the
    region obey the signing; at h = 0 there are no down contours.  Identical
    copies of a contour are resummed geometrically.
    """

    def __init__(self, V: Region, h: int, p: Params, ceiling: int, mode: str = "rn",
                 multiplicity_cap: int | None = None):
        if mode not in ("rn", "tr", "rn_elem"):
            raise ValueError(f"unknown weight mode {mode!r}")
        if not V.simply_connected:
            raise GeometryError("renormalized sums need a simply connected region")
        self.V, self.h, self.p, self.ceiling, self.mode = V, h, p, ceiling, mode
        self.cap = multiplicity_cap
        D = elementary_scale(h, p) if mode == "rn_elem" else math.inf
        self.geo = _Geometry(V, D)
        self._w: dict = {}
        self._G: dict = {}
        self._E: dict = {}

    def weight(self, a: int, s: str) -> float:
        key = (a, s)
        if key not in self._w:
            I = self.geo.interiors[a]
            if self.mode == "tr":
                lw = truncated_weight(I, self.h, self.p, self.ceiling, s)
            else:
                lw = renormalized_weight(I, self.h, self.p, self.ceiling, s)
            w = math.exp(lw)
            if w >= 1:
                raise ConvergenceError(f"no convergent resummation: W = {w:.4g} >= 1 for a contour "
                                       f"with |Int| = {len(I)}")
            self._w[key] = w
        return self._w[key]

    def _geom(self, w: float) -> float:
        if self.cap is None:
            return w / (1 - w)
        return w * (1 - w ** self.cap) / (1 - w)

    def E(self, a: int, s: str) -> float:
        """Weight of the contour (a, s) with all its copies and everything it encloses."""
        key = (a, s)
        if key not in self._E:
            self._E[key] = self._geom(self.weight(a, s)) * self.G(self.geo.mask[a], self.geo.rim[a], s)
        return self._E[key]

    def G(self, region: int, rim: int, s: str) -> float:
        """Sum over packings of mutually external contours strictly inside ``region``."""
        key = (region, s)
        if key in self._G:
            return self._G[key]
        geo = self.geo
        memo: dict = {}

        def rec(decided: int, up_block: int, dn_block: int) -> float:
            free = region & ~decided
            if not free:
                return 1.0
            k = (decided, up_block & free, dn_block & free)
            if k in memo:
                return memo[k]
            v = free & -free
            tot = rec(decided | v, up_block, dn_block)
            for a in geo.by_min.get(v, ()):
                m = geo.mask[a]
                if m == region or m & ~free:
                    continue
                for t in _allowed_signs(bool(m & rim), s, self.h):
                    if t == UP:
                        if m & up_block:
                            continue
                        tot += self.E(a, t) * rec(decided | m, up_block | geo.halo[a], dn_block)
                    else:
                        if m & dn_block:
                            continue
                        tot += self.E(a, t) * rec(decided | m, up_block, dn_block | geo.halo[a])
            memo[k] = tot
            return tot

        val = rec(0, 0, 0)
        self._G[key] = val
        return val

    def total(self, signing: str) -> float:
        """e^{lambda h |V|} Z^rn_{eta,h,V}."""
        geo = self.geo
        full = geo.full
        rim_bits = geo._m(s for i, s in enumerate(self.V.sites) if self.V.rim[i])
        tot = self.G(full, rim_bits, signing)
        a = geo.index.get(full)
        if a is not None:
            for t in _allowed_signs(True, signing, self.h):
                tot += self.E(a, t)
        return tot


def renormalized_partition_function(V, signing, h: int, p: Params, ceiling: int, weight_mode: str = "rn",
                                    multiplicity_cap: int | None = None) -> RNResult:
    """log Z^rn (or Z^tr, Z^rn.el) by exact recursion over nested packings.

    With a multiplicity cap M, copies beyond M are dropped and ``tail_bound``
    is the exact omitted mass (the difference to the uncapped sum).
    """
    V = _region(V)
    rs = RenormalizedSum(V, h, p, ceiling, weight_mode, multiplicity_cap)
    t = rs.total(signing)
    tail = 0.0
    if multiplicity_cap is not None:
        full = RenormalizedSum(V, h, p, ceiling, weight_mode, None).total(signing)
        tail = (full - t) * math.exp(-p.lam * h * len(V))
    return RNResult(math.log(t) - p.lam * h * len(V), tail, len(rs.geo.interiors))


def renormalized_bruteforce(V, signing, h: int, p: Params, ceiling: int, weight_mode: str = "rn",
                            max_contours: int = 80) -> float:
    """Independent check of the renormalized sum: depth-first search over signed contour sets.

    Only practical for tiny regions (box(1), a handful of sites).
    """
    V = _region(V)
    rs = RenormalizedSum(V, h, p, ceiling, weight_mode)
    geo = rs.geo
    rim_bits = geo._m(s for i, s in enumerate(V.sites) if V.rim[i])
    items = []
    for a, m in enumerate(geo.mask):
        for t in _allowed_signs(bool(m & rim_bits), signing, h):
            items.append((a, t))
    if len(items) > max_contours:
        raise ResourceError(f"{len(items)} signed contours is too many for brute force")

    def compatible(x, y) -> bool:
        (a, s), (b, t) = x, y
        ma, mb = geo.mask[a], geo.mask[b]
        inter = ma & mb
        if not inter:
            return not (s == t and (mb & geo.halo[a]))
        if inter == mb and ma != mb:
            return not (mb & geo.rim[a]) or s == t
        if inter == ma and ma != mb:
            return not (ma & geo.rim[b]) or s == t
        return False

    wts = [rs._geom(rs.weight(a, t)) for a, t in items]
    total = 0.0

    def dfs(start, chosen, prod):
        nonlocal total
        total += prod
        for i in range(start, len(items)):
            if all(compatible(items[i], items[j]) for j in chosen):
                chosen.append(i)
                dfs(i + 1, chosen, prod * wts[i])
                chosen.pop()

    dfs(0, [], 1.0)
    return math.log(total) - p.lam * h * len(V)


@dataclass(frozen=True)
class PartitionFunctionFamily:
    plain: float
    elementary: float
    renormalized: float
    truncated: float
    renormalized_elementary: float
    multiplicity_cap: int | None
    tail_bound: float


def partition_family(V, signing, h: int, p: Params, ceiling: int,
                     multiplicity_cap: int | None = None) -> PartitionFunctionFamily:
    V = _region(V)
    pl = partition_function(V, signing, h, p, ceiling)
    el = elementary_partition_function(V, signing, h, p, ceiling)
    rn = renormalized_partition_function(V, signing, h, p, ceiling, "rn", multiplicity_cap)
    tr = renormalized_partition_function(V, signing, h, p, ceiling, "tr", multiplicity_cap)
    re = renormalized_partition_function(V, signing, h, p, ceiling, "rn_elem", multiplicity_cap)
    return PartitionFunctionFamily(pl.log, el.log, rn.log, tr.log, re.log, multiplicity_cap,
                                   max(pl.tail_bound, rn.tail_bound))
