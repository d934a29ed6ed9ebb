"""Level-line (contour) representation of height fields.

A contour is the dual loop around a 6-connected, hole-free site set, its
interior.  The contours of a field with constant boundary height k are read
off its level sets: for every threshold t, each 6-component of {phi >= t} that
does not reach the outside yields an up contour of height t, and each
6-component of {phi < t} that does not reach the outside yields a down contour
of height t - 1.  The interior is the component with its holes filled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np

from .lattice import (OFFSETS4, OFFSETS6, BoundaryData, GeometryError, Region, Site, bbox_size,
                      fill_holes, grid_to_sites, label, sites_to_grid)
from .measure import Params

UP, DOWN = "up", "down"


class ContourError(ValueError):
    pass


def edge_boundary(interior: frozenset[Site]) -> list[tuple[int, int, int]]:
    """Dual edges of a contour as (x, y, dir): site inside and direction to the outside."""
    out = []
    for (x, y) in sorted(interior):
        for d, (dx, dy) in enumerate(OFFSETS4):
            if (x + dx, y + dy) not in interior:
                out.append((x, y, d))
    return out


@dataclass(frozen=True)
class Contour:
    """A signed, height-tagged level line.

    Equality and hashing use (sign, height, interior); ``shape`` drops the height.
    """

    sign: str
    height: int
    interior: frozenset

    @cached_property
    def length(self) -> int:
        return len(edge_boundary(self.interior))

    @cached_property
    def diameter(self) -> int:
        return bbox_size(self.interior)

    @cached_property
    def edges(self) -> list[tuple[int, int, int]]:
        return edge_boundary(self.interior)

    @property
    def area(self) -> int:
        return len(self.interior)

    @property
    def shape(self) -> tuple[str, frozenset]:
        return (self.sign, self.interior)

    @property
    def base(self) -> int:
        """Height on the exterior side."""
        return self.height - 1 if self.sign == UP else self.height + 1

    def to_json(self) -> dict:
        return {"sign": self.sign, "height": self.height, "edges": [list(e) for e in self.edges],
                "interior_size": self.area, "diameter": self.diameter}

    def __repr__(self) -> str:
        return f"Contour({self.sign}, h={self.height}, |Int|={self.area}, |g|={self.length})"


def contour_of(interior: Iterable[Site], sign: str = UP, height: int = 1) -> Contour:
    interior = frozenset(interior)
    if not interior:
        raise ContourError("empty interior")
    return Contour(sign, height, interior)


def stack_key(c: Contour) -> tuple:
    """Sort key putting enclosing contours first (stacked copies: up by height, down reversed)."""
    return (-c.area, c.height if c.sign == UP else -c.height, c.sign)


@dataclass
class ContourCollection:
    contours: list[Contour]
    region: Region | None = None
    level: int | None = None
    admissible: bool = True

    def __len__(self):
        return len(self.contours)

    def __iter__(self):
        return iter(self.contours)

    def shapes(self) -> list[tuple[str, frozenset]]:
        return sorted(((c.sign, tuple(sorted(c.interior))) for c in self.contours))

    def ordered(self) -> list[Contour]:
        return sorted(self.contours, key=stack_key)

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(c.to_json()) for c in self.ordered())


# ---------------------------------------------------------------------------
# extraction


def _level_interiors(V: Region, above: np.ndarray) -> tuple[list[frozenset], list[frozenset]]:
    """Interiors of the up-type and down-type level lines of a set {phi >= t} (cached per region)."""
    cache = V.__dict__.setdefault("_level_cache", {})
    key = np.packbits(above).tobytes()
    hit = cache.get(key)
    if hit is not None:
        return hit
    g = np.zeros(V.mask.shape, dtype=bool)
    g[V.mask] = above
    G = np.pad(g, 1, constant_values=False)
    ox, oy = V.origin[0] - 1, V.origin[1] - 1
    out: tuple[list, list] = ([], [])
    for slot, mask in ((0, G), (1, ~G)):
        lab, n = label(mask, 6)
        frame = lab[0, 0]
        for c in range(1, n + 1):
            if c == frame:
                continue
            inter = fill_holes(lab == c, 6)
            out[slot].append(frozenset(grid_to_sites(inter, (ox, oy))))
    if len(cache) > 200_000:
        cache.clear()
    cache[key] = out
    return out


def extract_contours(phi: np.ndarray, V: Region, k: int) -> ContourCollection:
    """All contours of phi on V with constant boundary height k (sites off V read as k)."""
    if V.periodic:
        raise ContourError("contours need a constant boundary; a torus has none")
    phi = np.asarray(phi, dtype=np.int64)
    out = []
    lo = min(int(phi.min()), k) if len(phi) else k
    hi = max(int(phi.max()), k) if len(phi) else k
    for t in range(lo + 1, hi + 1):
        above = phi >= t
        if t > k:
            # the outside sits below t: only {phi >= t} components and holes in them
            ups, downs = _level_interiors(V, above)
        else:
            # the outside sits at or above t: read the complement
            downs, ups = _level_interiors(V, ~above)
        out.extend(Contour(UP, t, I) for I in ups)
        out.extend(Contour(DOWN, t - 1, I) for I in downs)
    return ContourCollection(out, V, k)


def heights_from_contours(contours: Iterable[Contour], V: Region, k: int) -> np.ndarray:
    phi = np.full(len(V), k, dtype=np.int64)
    for c in contours:
        idx = [V.pos(s) for s in c.interior if s in V]
        if len(idx) != len(c.interior):
            raise ContourError("contour interior leaves the region")
        phi[idx] += 1 if c.sign == UP else -1
    return phi


def reconstruct(collection: ContourCollection | Sequence[Contour], V: Region, k: int,
                floor: int = 0) -> np.ndarray:
    """Rebuild the height field from signed contours (input heights are ignored).

    Raises ContourError if the collection is not the contour collection of any
    field, or if the field drops below the floor.
    """
    contours = list(collection)
    phi = heights_from_contours(contours, V, k)
    if np.any(phi < floor):
        raise ContourError("floor violation: a down contour reaches below the floor")
    again = extract_contours(phi, V, k)
    want = sorted((c.sign, tuple(sorted(c.interior))) for c in contours)
    if again.shapes() != want:
        raise ContourError("inadmissible collection: no height field has these contours")
    return phi


def is_admissible(collection: Sequence[Contour], V: Region, k: int, floor: int = 0) -> bool:
    try:
        reconstruct(collection, V, k, floor)
    except ContourError:
        return False
    return True


# ---------------------------------------------------------------------------
# weights and classification


def log_contour_weight(gamma: Contour, p: Params) -> float:
    """log of e^{-beta|g| - lambda|Int|} (up) or e^{-beta|g| + lambda|Int|} (down)."""
    s = -1.0 if gamma.sign == UP else 1.0
    return -p.beta * gamma.length + s * p.lam * gamma.area


def contour_weight(gamma: Contour, p: Params) -> float:
    """W(gamma) = exp(log_contour_weight)."""
    return math.exp(log_contour_weight(gamma, p))


def elementary_scale(h: int, p: Params) -> float:
    """min(1/lambda, e^{3 beta (h+1)})."""
    a = math.inf if p.lam == 0 else 1.0 / p.lam
    b = math.exp(min(3 * p.beta * (h + 1), 700.0))
    return min(a, b)


def is_elementary(gamma: Contour, h: int, p: Params) -> bool:
    return gamma.diameter <= elementary_scale(h, p)


def log_weight_identity(phi: np.ndarray, bd: BoundaryData, p: Params) -> tuple[float, float]:
    """(-H(phi), -lambda k |V| + sum of log contour weights); equal for admissible fields."""
    from .measure import hamiltonian
    V = bd.region
    k = bd.level
    if k is None:
        raise ContourError("weight identity needs a constant boundary")
    coll = extract_contours(phi, V, k)
    rhs = -p.lam * k * len(V) + sum(log_contour_weight(c, p) for c in coll)
    return -hamiltonian(phi, bd, p), rhs


# ---------------------------------------------------------------------------
# level loops


def outermost_level_loop(phi: np.ndarray, V: Region, k: int, mode: str = "eq_k",
                         target: Iterable[Site] | None = None) -> frozenset[Site] | None:
    """Outermost circuit of good sites (phi = k, <= k or >= k) surrounding ``target``.

    Violating sites are revealed from the outside inward along *-connected
    (8-adjacent) paths; the loop is the set of good sites *-adjacent to the
    revealed region.  Returns None if the revealed region reaches the target.
    """
    phi = np.asarray(phi)
    if mode == "eq_k":
        good = phi == k
    elif mode == "le_k":
        good = phi <= k
    elif mode == "ge_k":
        good = phi >= k
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if target is None:
        c = np.array(V.sites).mean(axis=0)
        d = np.abs(np.array(V.sites) - c).max(axis=1)
        target = [V.sites[int(np.argmin(d))]]
    target = frozenset(target)
    bad = np.zeros(V.mask.shape, dtype=bool)
    bad[V.mask] = ~good
    bad = np.pad(bad | ~V.mask, 1, constant_values=True)
    lab, _ = label(bad, 8)
    ext = lab == lab[0, 0]
    ext = ext[1:-1, 1:-1]
    ext_sites = set(grid_to_sites(ext, V.origin))
    if any(s in ext_sites for s in target):
        return None
    loop = set()
    for i, (x, y) in enumerate(V.sites):
        if (x, y) in ext_sites or not good[i]:
            continue
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                q = (x + dx, y + dy)
                if (dx or dy) and (q in ext_sites or q not in V):
                    loop.add((x, y))
    return frozenset(loop) if loop else None


# ---------------------------------------------------------------------------
# clusters of non-elementary contours


@dataclass
class NonElemCluster:
    """A nesting tree of non-elementary contours.

    ``ann`` maps each member to Ann(g; C): its interior minus the interiors of
    its children in the cluster.
    """

    root: Contour
    members: list[Contour]
    children: dict = field(default_factory=dict)
    ann: dict = field(default_factory=dict)

    @property
    def ann_total(self) -> frozenset:
        out = frozenset()
        for a in self.ann.values():
            out |= a
        return out

    @property
    def total_length(self) -> int:
        return sum(c.length for c in self.members)


def nesting_parents(contours: Sequence[Contour]) -> dict[int, int | None]:
    """Index of the innermost enclosing contour for each contour (stacks resolved by height)."""
    order = sorted(range(len(contours)), key=lambda i: stack_key(contours[i]))
    parent: dict[int, int | None] = {}
    placed: list[int] = []
    for i in order:
        ci = contours[i]
        par = None
        for j in reversed(placed):
            if ci.interior <= contours[j].interior:
                par = j
                break
        parent[i] = par
        placed.append(i)
    return parent


def cluster_decompose(collection: ContourCollection | Sequence[Contour], p: Params,
                      leaf_annulus: str = "interior") -> tuple[list[NonElemCluster], list[Contour]]:
    """Group non-elementary contours into clusters; return (clusters, elementary contours).

    A contour is non-elementary when its diameter exceeds the elementary scale
    at its own height.  Each non-elementary contour is linked to its nearest
    non-elementary ancestor, and the resulting trees are the clusters.

    ``leaf_annulus`` controls Ann(g; C) for members without nested members:
    ``interior`` (default) uses the whole interior, which is what makes the
    cluster expansion of the partition function an exact identity; ``empty``
    uses the empty set.
    """
    contours = list(collection)
    par = nesting_parents(contours)
    nonel = {i for i, c in enumerate(contours) if not is_elementary(c, c.height, p)}
    elem = [c for i, c in enumerate(contours) if i not in nonel]

    def ne_parent(i):
        j = par[i]
        while j is not None and j not in nonel:
            j = par[j]
        return j

    up = {i: ne_parent(i) for i in nonel}
    kids: dict[int, list[int]] = {i: [] for i in nonel}
    roots = []
    for i, j in up.items():
        if j is None:
            roots.append(i)
        else:
            kids[j].append(i)
    clusters = []
    for r in sorted(roots, key=lambda i: stack_key(contours[i])):
        members, stack = [], [r]
        while stack:
            i = stack.pop()
            members.append(i)
            stack.extend(kids[i])
        cl = NonElemCluster(contours[r], [contours[i] for i in members])
        for i in members:
            c = contours[i]
            cl.children[c] = [contours[j] for j in kids[i]]
            if kids[i]:
                inner = frozenset().union(*(contours[j].interior for j in kids[i]))
                cl.ann[c] = c.interior - inner
            else:
                cl.ann[c] = c.interior if leaf_annulus == "interior" else frozenset()
        clusters.append(cl)
    return clusters, elem


# ---------------------------------------------------------------------------
# enumeration of geometric contours


def interiors_in(sites: Iterable[Site], max_size: int | None = None) -> list[frozenset[Site]]:
    """All 6-connected, hole-free subsets of a site set (the possible contour interiors).

    Exhaustive; meant for regions of at most ~16 sites.
    """
    return list(_interiors_cached(tuple(sorted(set(sites))), max_size))


@lru_cache(maxsize=4096)
def _interiors_cached(sites: tuple, max_size: int | None) -> tuple:
    sites = list(sites)
    pos = {s: i for i, s in enumerate(sites)}
    n = len(sites)
    adj = [[pos[(x + dx, y + dy)] for dx, dy in OFFSETS6 if (x + dx, y + dy) in pos] for (x, y) in sites]
    found: set[int] = set()
    # grow connected sets from their minimal element
    for root in range(n):
        seen: set[int] = set()
        stack = [(1 << root, 1 << root)]
        while stack:
            mask, frontier_src = stack.pop()
            if mask in seen:
                continue
            seen.add(mask)
            found.add(mask)
            if max_size is not None and bin(mask).count("1") >= max_size:
                continue
            m = mask
            nbrs = 0
            while m:
                b = m & -m
                i = b.bit_length() - 1
                for j in adj[i]:
                    if j > root:
                        nbrs |= 1 << j
                m ^= b
            nbrs &= ~mask
            while nbrs:
                b = nbrs & -nbrs
                stack.append((mask | b, b))
                nbrs ^= b
    out = []
    for mask in found:
        S = frozenset(sites[i] for i in range(n) if mask >> i & 1)
        g, o = sites_to_grid(S)
        if np.array_equal(fill_holes(g, 6), g):
            out.append(S)
    out.sort(key=lambda s: (len(s), sorted(s)))
    return tuple(out)
