"""Lattice geometry: regions, boundary sets, connectivity helpers and boundary data.

Sites are integer pairs ``(x, y)``.  Every region keeps a dense bounding-box
grid (rows indexed by ``y``, columns by ``x``) so that height fields can be
stored as flat arrays in row-major site order and converted to grids cheaply.

Two adjacency notions are used throughout:

* the usual nearest-neighbour (4-) adjacency, which carries the Hamiltonian;
* the 6-adjacency obtained by adding the NW-SE diagonal ``(x, y) ~ (x+1, y-1)``.
  This is what the south-west / north-east splitting rule for level lines
  induces, and it is self-matching: a site set and its complement are both
  read with it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

Site = tuple[int, int]

OFFSETS4: tuple[Site, ...] = ((1, 0), (-1, 0), (0, 1), (0, -1))
OFFSETS6: tuple[Site, ...] = OFFSETS4 + ((1, -1), (-1, 1))
OFFSETS8: tuple[Site, ...] = OFFSETS4 + ((1, 1), (-1, -1), (1, -1), (-1, 1))

# ndimage structures on [row=y, col=x] grids
STRUCT4 = ndimage.generate_binary_structure(2, 1)
STRUCT8 = np.ones((3, 3), dtype=bool)
STRUCT6 = np.array([[0, 1, 1], [1, 1, 1], [1, 1, 0]], dtype=bool)
_STRUCTS = {4: STRUCT4, 6: STRUCT6, 8: STRUCT8}

INF = np.inf
SIGNINGS = ("plus", "minus", "pinned", "free")


class GeometryError(ValueError):
    pass


def structure(conn: int) -> np.ndarray:
    try:
        return _STRUCTS[conn]
    except KeyError:
        raise ValueError(f"connectivity must be 4, 6 or 8, got {conn}") from None


def label(mask: np.ndarray, conn: int) -> tuple[np.ndarray, int]:
    """Connected components of a boolean grid ([row=y, col=x])."""
    return ndimage.label(mask, structure=structure(conn))


def fill_holes(mask: np.ndarray, conn: int = 6) -> np.ndarray:
    """Add every complement component not connected to the frame.

    ``conn`` is the connectivity used for the complement.
    """
    padded = np.pad(mask, 1, constant_values=False)
    lab, _ = label(~padded, conn)
    outside = lab[0, 0]
    filled = padded | (lab != outside)
    return filled[1:-1, 1:-1]


def sites_to_grid(sites: Iterable[Site]) -> tuple[np.ndarray, Site]:
    pts = np.array(sorted(set(sites)), dtype=np.int64).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros((0, 0), dtype=bool), (0, 0)
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    grid = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
    grid[pts[:, 1] - y0, pts[:, 0] - x0] = True
    return grid, (int(x0), int(y0))


def grid_to_sites(grid: np.ndarray, origin: Site) -> list[Site]:
    ys, xs = np.nonzero(grid)
    return [(int(x) + origin[0], int(y) + origin[1]) for y, x in zip(ys, xs)]


def components(sites: Iterable[Site], conn: int) -> list[frozenset[Site]]:
    """Connected components of a finite site set under 4-, 6- or 8-adjacency."""
    grid, origin = sites_to_grid(sites)
    if grid.size == 0:
        return []
    lab, k = label(grid, conn)
    out = []
    for c in range(1, k + 1):
        out.append(frozenset(grid_to_sites(lab == c, origin)))
    return out


def fill(sites: Iterable[Site], conn: int = 6) -> frozenset[Site]:
    grid, origin = sites_to_grid(sites)
    if grid.size == 0:
        return frozenset()
    return frozenset(grid_to_sites(fill_holes(grid, conn), origin))


def is_simply_connected(sites: Iterable[Site]) -> bool:
    """6-connected and without 6-holes, i.e. bounded by a single level line."""
    sites = frozenset(sites)
    if not sites:
        return False
    return len(components(sites, 6)) == 1 and fill(sites, 6) == sites


def bbox_size(sites: Iterable[Site]) -> int:
    """l-infinity diameter of the dual loop around a site set (a single site gives 1)."""
    pts = np.array(list(sites))
    if len(pts) == 0:
        return 0
    span = pts.max(axis=0) - pts.min(axis=0) + 1
    return int(span.max())


def box_range(n: int) -> tuple[int, int]:
    """Integer coordinates of the n+1 points of the side of box(n)."""
    lo = -(n // 2)
    return lo, lo + n


# ---------------------------------------------------------------------------
# Regions


class Region:
    """A finite lattice domain (or a periodic torus).

    Parameters
    ----------
    sites : iterable of (x, y)
        The site set.
    kind : str
        One of ``box``, ``annulus``, ``torus``, ``general``.
    n, m : int, optional
        Size parameters of boxes, annuli and tori.
    """

    def __init__(self, sites: Iterable[Site], kind: str = "general", n: int | None = None,
                 m: int | None = None, periodic: bool = False):
        grid, origin = sites_to_grid(sites)
        if grid.size == 0:
            self.mask = np.zeros((0, 0), dtype=bool)
        else:
            self.mask = grid
        self.origin = origin
        self.kind = kind
        self.n = n
        self.m = m
        self.periodic = periodic
        ys, xs = np.nonzero(self.mask)
        self.sites: tuple[Site, ...] = tuple(
            (int(x) + origin[0], int(y) + origin[1]) for y, x in zip(ys, xs))
        self.index = np.full(self.mask.shape, -1, dtype=np.int64)
        self.index[ys, xs] = np.arange(len(self.sites))
        self._pos = {s: i for i, s in enumerate(self.sites)}
        if periodic:
            h, w = self.mask.shape
            if not self.mask.all() or h != w:
                raise GeometryError("a torus must be a full square grid")

    # -- basics ---------------------------------------------------------
    def __len__(self) -> int:
        return len(self.sites)

    def __contains__(self, site: Site) -> bool:
        return site in self._pos

    def __repr__(self) -> str:
        extra = "" if self.n is None else f", n={self.n}" + ("" if self.m is None else f", m={self.m}")
        return f"Region({self.kind}{extra}, sites={len(self)})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Region):
            return NotImplemented
        return self.periodic == other.periodic and self.site_set == other.site_set

    def __hash__(self) -> int:
        return hash((self.periodic, self.site_set))

    def pos(self, site: Site) -> int:
        return self._pos[site]

    @cached_property
    def site_set(self) -> frozenset[Site]:
        return frozenset(self.sites)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def wrap(self, site: Site) -> Site:
        if not self.periodic:
            return site
        h, w = self.mask.shape
        x0, y0 = self.origin
        return ((site[0] - x0) % w + x0, (site[1] - y0) % h + y0)

    @cached_property
    def nbr(self) -> np.ndarray:
        """(N, 4) neighbour indices in OFFSETS4 order; -1 marks a site outside the region."""
        out = np.full((len(self), 4), -1, dtype=np.int64)
        for i, (x, y) in enumerate(self.sites):
            for d, (dx, dy) in enumerate(OFFSETS4):
                s = self.wrap((x + dx, y + dy))
                out[i, d] = self._pos.get(s, -1)
        return out

    @cached_property
    def outer_slots(self) -> list[tuple[int, int, Site]]:
        """(site index, direction, outside site) for every edge leaving the region."""
        out = []
        for i, (x, y) in enumerate(self.sites):
            for d, (dx, dy) in enumerate(OFFSETS4):
                if self.nbr[i, d] < 0:
                    out.append((i, d, (x + dx, y + dy)))
        return out

    @cached_property
    def edges(self) -> np.ndarray:
        """Internal nearest-neighbour edges as an (E, 2) index array, each once."""
        e = set()
        for i in range(len(self)):
            for j in self.nbr[i]:
                if j >= 0 and j != i:
                    e.add((min(i, j), max(i, j)))
        if not e:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array(sorted(e), dtype=np.int64)

    @cached_property
    def simply_connected(self) -> bool:
        if self.periodic or len(self) == 0:
            return False
        return is_simply_connected(self.sites)

    @cached_property
    def holes(self) -> list[frozenset[Site]]:
        if self.periodic:
            return []
        padded = np.pad(self.mask, 1, constant_values=False)
        lab, k = label(~padded, 6)
        out_lab = lab[0, 0]
        holes = []
        ox, oy = self.origin[0] - 1, self.origin[1] - 1
        for c in range(1, k + 1):
            if c != out_lab:
                holes.append(frozenset(grid_to_sites(lab == c, (ox, oy))))
        return holes

    @cached_property
    def rim(self) -> np.ndarray:
        """Boolean array of sites 6-adjacent to the complement.

        This is the inner boundary seen by level lines.  It coincides with the
        nearest-neighbour inner boundary for boxes and rectangles.
        """
        if self.periodic:
            return np.zeros(len(self), dtype=bool)
        r = np.zeros(len(self), dtype=bool)
        for i, (x, y) in enumerate(self.sites):
            r[i] = any((x + dx, y + dy) not in self._pos for dx, dy in OFFSETS6)
        return r

    def grid(self, values: np.ndarray, fill_value=-1) -> np.ndarray:
        """Dense row-major bounding-box grid of a per-site array."""
        g = np.full(self.mask.shape, fill_value, dtype=np.asarray(values).dtype)
        g[self.mask] = values
        return g

    def from_grid(self, grid: np.ndarray) -> np.ndarray:
        return np.asarray(grid)[self.mask]

    def to_json(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.n is not None:
            d["n"] = self.n
        if self.m is not None:
            d["m"] = self.m
        if self.kind == "general":
            d["sites"] = [list(s) for s in self.sites]
        return d


def build_box(n: int) -> Region:
    """box(n): the (n+1)^2 integer points of the closed box of side n around the origin."""
    if n < 1:
        raise GeometryError("box size must be >= 1")
    return _box(n)


def _box(n: int) -> Region:
    lo, hi = box_range(n)
    sites = [(x, y) for y in range(lo, hi + 1) for x in range(lo, hi + 1)]
    return Region(sites, kind="box", n=n)


def build_annulus(n: int, m: int) -> Region:
    """box(n) with the interior of box(n - m) removed (no hole when n - m < 2)."""
    if n < 1 or m < 1:
        raise GeometryError("annulus needs n >= 1 and m >= 1")
    outer = _box(n).site_set
    inner = frozenset()
    if n - m >= 2:
        b = _box(n - m)
        inner = frozenset(s for s in b.sites if not np.any(b.nbr[b.pos(s)] < 0))
    return Region(outer - inner, kind="annulus", n=n, m=m)


def build_torus(n: int) -> Region:
    """The n x n discrete torus (coordinates 0..n-1)."""
    if n < 3:
        raise GeometryError("torus side must be >= 3")
    sites = [(x, y) for y in range(n) for x in range(n)]
    return Region(sites, kind="torus", n=n, periodic=True)


def general_region(sites: Iterable[Site]) -> Region:
    return Region(sites, kind="general")


def region_from_json(d: Mapping) -> Region:
    kind = d.get("kind")
    unknown = set(d) - {"kind", "n", "m", "sites"}
    if unknown:
        raise GeometryError(f"unknown region keys: {sorted(unknown)}")
    if kind == "box":
        return build_box(int(d["n"]))
    if kind == "annulus":
        return build_annulus(int(d["n"]), int(d["m"]))
    if kind == "torus":
        return build_torus(int(d["n"]))
    if kind == "general":
        return general_region(tuple(map(int, s)) for s in d["sites"])
    if kind == "site":
        return general_region([(0, 0)])
    raise GeometryError(f"unknown region kind {kind!r}")


def parse_region(spec: str) -> Region:
    """Parse ``box:4``, ``annulus:6:2``, ``torus:16``, ``site`` or a JSON object."""
    spec = spec.strip()
    if spec.startswith("{"):
        return region_from_json(json.loads(spec))
    parts = spec.split(":")
    kind = parts[0]
    if kind == "site":
        return general_region([(0, 0)])
    try:
        nums = [int(p) for p in parts[1:]]
    except ValueError:
        raise GeometryError(f"bad region spec {spec!r}") from None
    if kind == "box" and len(nums) == 1:
        return build_box(nums[0])
    if kind == "annulus" and len(nums) == 2:
        return build_annulus(*nums)
    if kind == "torus" and len(nums) == 1:
        return build_torus(nums[0])
    raise GeometryError(f"bad region spec {spec!r}")


@dataclass(frozen=True)
class BoundarySets:
    inner: frozenset[Site]
    outer: frozenset[Site]
    edge: frozenset[tuple[Site, Site]]


def boundary_sets(V: Region) -> BoundarySets:
    """Inner boundary, outer boundary and edge boundary (inside site, outside site)."""
    if V.periodic:
        raise GeometryError("no boundary: region is a torus")
    inner, outer, edge = set(), set(), set()
    for i, _, out in V.outer_slots:
        inner.add(V.sites[i])
        outer.add(out)
        edge.add((V.sites[i], out))
    return BoundarySets(frozenset(inner), frozenset(outer), frozenset(edge))


def interior(V: Region) -> frozenset[Site]:
    """Sites of V with no neighbour outside V."""
    return V.site_set - boundary_sets(V).inner


def shrink(V: Region, r: int) -> Region:
    """S_r(V): sites at l-infinity distance >= r from the inner boundary."""
    if r <= 0:
        return V
    inner = np.array(sorted(boundary_sets(V).inner)).reshape(-1, 2)
    keep = []
    for s in V.sites:
        d = np.abs(inner - np.array(s)).max(axis=1).min() if len(inner) else np.inf
        if d >= r:
            keep.append(s)
    return Region(keep, kind="general")


def subregion(V: Region, sites: Iterable[Site]) -> Region:
    sites = frozenset(sites)
    if not sites <= V.site_set:
        raise GeometryError("sub-region sites must lie in the region")
    return Region(sites, kind="general")


# ---------------------------------------------------------------------------
# Boundary data


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Boundary heights, floors, ceilings and signing of a region.

    ``phi`` holds one height per entry of ``region.outer_slots``.  Ceilings are
    floats so that ``inf`` can stand for "no ceiling".
    """

    region: Region
    phi: np.ndarray
    floor: np.ndarray
    ceiling: np.ndarray
    signing: Mapping[Site, str] = field(default_factory=dict)
    level: int | None = None

    def __post_init__(self):
        if np.any(self.floor > self.ceiling):
            raise GeometryError("floors must not exceed ceilings")

    @cached_property
    def bval(self) -> np.ndarray:
        """(N, 4) boundary heights aligned with ``region.nbr`` (0 where the neighbour is inside)."""
        b = np.zeros((len(self.region), 4), dtype=np.int64)
        for (i, d, _), h in zip(self.region.outer_slots, self.phi):
            b[i, d] = h
        return b

    @property
    def finite_ceiling(self) -> bool:
        return bool(np.all(np.isfinite(self.ceiling)))

    def int_ceiling(self) -> np.ndarray:
        if not self.finite_ceiling:
            raise ValueError("ceiling must be finite here")
        return self.ceiling.astype(np.int64)

    def with_ceiling(self, H: float) -> "BoundaryData":
        c = np.minimum(self.ceiling, H)
        return BoundaryData(self.region, self.phi, self.floor, c, self.signing, self.level)

    def replace(self, **kw) -> "BoundaryData":
        d = dict(region=self.region, phi=self.phi, floor=self.floor, ceiling=self.ceiling,
                 signing=self.signing, level=self.level)
        d.update(kw)
        return BoundaryData(**d)


def signing_to_floor_ceiling(V: Region, signing, k: int, base_floor=None, base_ceiling=None,
                             sites: Sequence[bool] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Floors and ceilings induced by a boundary signing around constant boundary height k.

    ``signing`` is one of plus / minus / pinned / free, or a mapping site -> signing.
    It acts on the rim of V (see ``Region.rim``) unless an explicit boolean
    selection ``sites`` is given.
    """
    N = len(V)
    floor = np.zeros(N, dtype=np.int64) if base_floor is None else np.array(base_floor, dtype=np.int64)
    ceil = np.full(N, INF) if base_ceiling is None else np.array(base_ceiling, dtype=float)
    where = V.rim if sites is None else np.asarray(sites, dtype=bool)
    for i in np.nonzero(where)[0]:
        s = signing if isinstance(signing, str) else signing.get(V.sites[i], "free")
        if s not in SIGNINGS:
            raise GeometryError(f"unknown signing {s!r}")
        if s in ("plus", "pinned"):
            floor[i] = max(floor[i], k)
        if s in ("minus", "pinned"):
            ceil[i] = min(ceil[i], k)
    return floor, ceil


def constant_boundary(V: Region, k: int = 0, signing="free", ceiling: float = INF,
                      floor: int = 0) -> BoundaryData:
    """Boundary data for the constant boundary condition k with a boundary signing."""
    N = len(V)
    base_floor = np.full(N, floor, dtype=np.int64)
    base_ceil = np.full(N, float(ceiling))
    if V.periodic:
        if signing not in ("free", None):
            raise GeometryError("a torus has no boundary to sign")
        return BoundaryData(V, np.zeros(0, dtype=np.int64), base_floor, base_ceil, {}, None)
    f, c = signing_to_floor_ceiling(V, signing, k, base_floor, base_ceil)
    phi = np.full(len(V.outer_slots), k, dtype=np.int64)
    sg = ({V.sites[i]: signing for i in np.nonzero(V.rim)[0]} if isinstance(signing, str)
          else dict(signing))
    return BoundaryData(V, phi, f, c, sg, k)


def boundary_from_mapping(V: Region, phi: Mapping[Site, int], floor=0, ceiling: float = INF,
                          signing: Mapping[Site, str] | str | None = None) -> BoundaryData:
    """Boundary data from an explicit map outer-site -> height.

    Non-free signings are only meaningful for a constant boundary.
    """
    vals = np.array([phi[out] for _, _, out in V.outer_slots], dtype=np.int64)
    N = len(V)
    f = np.full(N, floor, dtype=np.int64) if np.isscalar(floor) else np.array(floor, dtype=np.int64)
    c = np.full(N, float(ceiling)) if np.isscalar(ceiling) else np.array(ceiling, dtype=float)
    level = int(vals[0]) if len(vals) and np.all(vals == vals[0]) else None
    if signing not in (None, "free"):
        if level is None:
            raise GeometryError("non-constant boundary with a non-free signing")
        f, c = signing_to_floor_ceiling(V, signing, level, f, c)
    return BoundaryData(V, vals, f, c, {} if signing is None or isinstance(signing, str) else dict(signing),
                        level)


def clamp_boundary(bd: BoundaryData) -> BoundaryData:
    """Clamp boundary heights into the band of the adjacent floors and ceilings.

    A boundary height above every adjacent ceiling can be lowered to the largest
    of them (and symmetrically for floors) without changing any gradient
    differences that matter, so the induced measure is unchanged.
    """
    V = bd.region
    out_to = {}
    for (i, _, out), h in zip(V.outer_slots, bd.phi):
        out_to.setdefault(out, [h, []])[1].append(i)
    new = {}
    for out, (h, idx) in out_to.items():
        hi = max(bd.ceiling[i] for i in idx)
        lo = min(bd.floor[i] for i in idx)
        if h >= hi:
            h = hi
        elif h <= lo:
            h = lo
        new[out] = int(h)
    phi = np.array([new[out] for _, _, out in V.outer_slots], dtype=np.int64)
    level = int(phi[0]) if len(phi) and np.all(phi == phi[0]) else None
    return bd.replace(phi=phi, level=level)
