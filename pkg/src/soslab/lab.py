"""Phase-transition phenomenology: critical windows, lambda_c estimates,
bottleneck sets, layer statistics and lambda sweeps."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import csgraph

from .contours import outermost_level_loop
from .exact.enumeration import ExactModel
from .exact.partition import log_Z
from .exact.spectral import bottleneck_ratio, cheeger, cheeger_exact, spectral_gap
from .lattice import OFFSETS4, OFFSETS8, BoundaryData, Region, build_box, constant_boundary
from .measure import Params
from .sim import chain as simc


class BracketError(ValueError):
    """No sign change of the free-energy difference inside the scanned bracket."""

    def __init__(self, msg, bracket, values):
        super().__init__(msg)
        self.bracket = bracket
        self.values = values


# ---------------------------------------------------------------------------
# windows and critical points


def window(i: int, beta: float) -> tuple[float, float]:
    """I_i = [e^{-4 beta i - 2 beta}, e^{-4 beta i - beta}]."""
    if i < 0:
        raise ValueError("window index must be >= 0")
    return math.exp(-4 * beta * i - 2 * beta), math.exp(-4 * beta * i - beta)


def window_id(lam: float, beta: float, n_max: int = 64) -> int:
    """Index i with lam in I_i, or -1 if lam lies in no window."""
    for i in range(n_max):
        lo, hi = window(i, beta)
        if lo <= lam <= hi:
            return i
        if hi < lam:
            break
    return -1


def gap_interval(k: int, beta: float) -> tuple[float, float]:
    """(sup I_{k+1}, inf I_k): where lambda_c^{(k)} has to lie."""
    return window(k + 1, beta)[1], window(k, beta)[0]


@dataclass(frozen=True)
class LambdaC:
    k: int
    value: float
    method: str
    err: float
    per_size: tuple = ()
    slope: float = math.nan


@dataclass
class CriticalTable:
    beta: float
    n_windows: int = 4
    estimates: list[LambdaC] = field(default_factory=list)

    @property
    def windows(self) -> list[tuple[float, float]]:
        return [window(i, self.beta) for i in range(self.n_windows)]

    @property
    def values(self) -> list[float]:
        return [e.value for e in self.estimates]

    def to_json(self) -> dict:
        return {"beta": self.beta, "windows": self.windows,
                "lambda_c": [{"k": e.k, "value": e.value, "method": e.method, "err": e.err,
                              "slope": e.slope} for e in self.estimates]}


def distances(lam: float, table: CriticalTable | Sequence[float]) -> tuple[float, float, float]:
    """(d_plus, d_minus, d): distances to the nearest critical point above, below, and overall.

    An empty side gives ``inf`` (lambda_c^{(-1)} = inf by convention).
    """
    vals = table.values if isinstance(table, CriticalTable) else list(table)
    if not vals:
        raise ValueError("empty critical table")
    up = [c - lam for c in vals if c >= lam]
    dn = [lam - c for c in vals if c <= lam]
    dp = min(up) if up else math.inf
    dm = min(dn) if dn else math.inf
    return dp, dm, min(abs(c - lam) for c in vals)


def free_energy(V: Region, h: int, p: Params, ceiling: int, signing="free") -> float:
    """f_{eta,h,V} = log Z_{eta,h,V} / |V| (exact)."""
    return log_Z(V, signing, h, p, ceiling) / len(V)


def fe_difference(V: Region, k: int, lam: float, beta: float, ceiling: int, signing="free") -> float:
    """f_{k+1,V} - f_{k,V} at field lam."""
    p = Params(beta, lam, allow_large_field=True)
    return free_energy(V, k + 1, p, ceiling, signing) - free_energy(V, k, p, ceiling, signing)


def _bisect_root(fn, lo: float, hi: float, xtol_rel: float, n_scan: int = 40):
    """Scan a log grid for a sign change of fn, then bisect."""
    grid = np.geomspace(lo, hi, n_scan)
    vals = np.array([fn(x) for x in grid])
    idx = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    if len(idx) == 0:
        raise BracketError(f"no sign change of f_(k+1) - f_k on [{lo:.3g}, {hi:.3g}]",
                           (lo, hi), (float(vals[0]), float(vals[-1])))
    a, b = grid[idx[0]], grid[idx[0] + 1]
    return optimize.bisect(fn, a, b, xtol=a * xtol_rel, rtol=1e-15)


def estimate_lambda_c(k: int, beta: float, method: str = "exact_fe", sizes: Sequence[int] = (1, 2, 3),
                      ceiling: int | None = None, signing="free", xtol_rel: float = 1e-6,
                      bracket: tuple[float, float] | None = None, **sampled_kw) -> LambdaC:
    """Root in lambda of f_{k+1,V} - f_{k,V} on boxes of the given sizes.

    The reported value is the root on the largest box; the error bar is the
    spread of the roots across sizes.  ``slope`` is d/dlambda (f_k - f_{k+1})
    at the root on the largest box, by central differences.  The default
    bracket runs from inf I_{k+1} to sup I_k.  ``sampled_fe`` replaces the exact
    free energies by thermodynamic integration (see :func:`sampled_fe_difference`)
    and returns the root of a straight-line fit over a lambda grid.
    """
    ceiling = k + 4 if ceiling is None else ceiling
    lo = window(k + 1, beta)[0] if bracket is None else bracket[0]
    hi = window(k, beta)[1] if bracket is None else bracket[1]
    roots = []
    for n in sizes:
        V = build_box(n)
        if method == "exact_fe":
            fn = lambda x, V=V: fe_difference(V, k, x, beta, ceiling, signing)  # noqa: E731
            r = _bisect_root(fn, lo, hi, xtol_rel)
        elif method == "sampled_fe":
            r, _ = _sampled_root(V, k, beta, lo, hi, ceiling, **sampled_kw)
        else:
            raise ValueError(f"unknown method {method!r}")
        roots.append(float(r))
    V = build_box(sizes[-1])
    r = roots[-1]
    if method == "exact_fe":
        eps = r * 1e-4
        slope = -(fe_difference(V, k, r + eps, beta, ceiling, signing)
                  - fe_difference(V, k, r - eps, beta, ceiling, signing)) / (2 * eps)
    else:
        slope = math.nan
    err = float(max(roots) - min(roots)) if len(roots) > 1 else 0.0
    return LambdaC(k, r, method, err, tuple(zip(sizes, roots)), float(slope))


def sampled_fe_difference(V: Region, k: int, p: Params, ceiling: int | None = None, n_nodes: int = 6,
                          t_burn: float = 200.0, t_sample: float = 2000.0, dt: float = 1.0, seed=0,
                          kernel: str = "pm_one") -> tuple[float, float, float]:
    """f_{k+1,V} - f_{k,V} by thermodynamic integration over the boundary height.

    The boundary term of every outer edge is interpolated as
    (1 - s)|phi_v - k| + s |phi_v - k - 1|, so that

        log Z_{k+1} - log Z_k = -beta * int_0^1 E_s[sum_boundary (|phi_v-k-1| - |phi_v-k|)] ds,

    and the integral is taken on Gauss-Legendre nodes.  Returns
    (estimate, Monte Carlo standard error, quadrature error), the latter from
    the difference with the rule on n_nodes - 2 nodes.
    """
    bd = constant_boundary(V, k, "free", math.inf if ceiling is None else ceiling)
    slots = np.array([i for i, _, _ in V.outer_slots])

    def node_means(n):
        xs, ws = np.polynomial.legendre.leggauss(n)
        s = 0.5 * (xs + 1)
        out = []
        for j, sj in enumerate(s):
            X = simc.initial_field(bd, k)[None, :].copy()
            rs = np.random.default_rng([seed, n, j]).integers(simc.SEED_BITS, size=2)
            simc._drive(X, 0.0, t_burn, bd, p.beta, [p.lam], kernel, rs[0], bmix=sj)
            nsamp = int(t_sample / dt)
            _, _, S, _, _, _ = simc._drive(X, t_burn, t_burn + t_sample, bd, p.beta, [p.lam], kernel, rs[1],
                                           sample_dt=dt, n_samples=nsamp, bmix=sj)
            S = S[:, 0, :]
            g = (np.abs(S[:, slots] - k - 1) - np.abs(S[:, slots] - k)).sum(axis=1)
            out.append(simc.batch_means(g))
        return np.array(out), 0.5 * ws

    m, w = node_means(n_nodes)
    est = -p.beta * float(np.dot(w, m[:, 0])) / len(V)
    se = p.beta * math.sqrt(float(np.dot(w ** 2, m[:, 1] ** 2))) / len(V)
    m2, w2 = node_means(max(2, n_nodes - 2))
    est2 = -p.beta * float(np.dot(w2, m2[:, 0])) / len(V)
    return est, se, abs(est - est2)


def _sampled_root(V, k, beta, lo, hi, ceiling, n_lambda: int = 5, **kw):
    lams = np.geomspace(lo, hi, n_lambda)
    vals, errs = [], []
    for lam in lams:
        e, se, qe = sampled_fe_difference(V, k, Params(beta, lam, allow_large_field=True), ceiling, **kw)
        vals.append(e)
        errs.append(math.hypot(se, qe))
    vals, errs = np.array(vals), np.array(errs)
    b, a = np.polyfit(lams, vals, 1, w=1 / np.maximum(errs, 1e-12))
    if b == 0:
        raise BracketError("flat free-energy difference", (lo, hi), tuple(vals))
    return -a / b, (vals, errs)


# ---------------------------------------------------------------------------
# bottleneck sets


@lru_cache(maxsize=32)
def _adjacency(V: Region, conn: int) -> sparse.csr_matrix:
    offs = OFFSETS4 if conn == 4 else OFFSETS8
    rows, cols = [], []
    for i, (x, y) in enumerate(V.sites):
        for dx, dy in offs:
            s = V.wrap((x + dx, y + dy))
            if s in V:
                rows.append(i)
                cols.append(V.pos(s))
    N = len(V)
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, N))


def component_sizes(V: Region, mask: np.ndarray, conn: int) -> np.ndarray:
    """Sizes of the connected components of a site set (periodic on a torus)."""
    mask = np.asarray(mask, dtype=bool)
    idx = np.nonzero(mask)[0]
    if len(idx) == 0:
        return np.zeros(0, dtype=np.int64)
    A = _adjacency(V, conn)[idx][:, idx]
    _, lab = csgraph.connected_components(A, directed=False)
    return np.bincount(lab)


def component_labels(V: Region, mask: np.ndarray, conn: int) -> np.ndarray:
    """Component label per site (-1 off the set)."""
    mask = np.asarray(mask, dtype=bool)
    out = np.full(len(V), -1, dtype=np.int64)
    idx = np.nonzero(mask)[0]
    if len(idx):
        _, lab = csgraph.connected_components(_adjacency(V, conn)[idx][:, idx], directed=False)
        out[idx] = lab
    return out


@dataclass(frozen=True)
class BottleneckMembership:
    in_A: bool
    in_A_prime: bool | None
    largest_ge: int
    largest_le: int


def bottleneck_set(phi: np.ndarray, V: Region, k: int, r: float, geometry: str = "zero_bc") -> BottleneckMembership:
    """Membership of phi in A_r (every 4-connected component of {phi >= k} has at most r sites)
    and, on the torus, in A'_r (every 8-connected component of {phi <= k-1} has at most r sites).

    The 4/8 pairing makes the two events disjoint on an n-torus when r <= n/8:
    a chequerboard would otherwise put every component of both sets at size one.
    """
    phi = np.asarray(phi)
    ge = component_sizes(V, phi >= k, 4)
    le = component_sizes(V, phi <= k - 1, 8)
    lg = int(ge.max()) if len(ge) else 0
    ll = int(le.max()) if len(le) else 0
    if geometry == "zero_bc":
        return BottleneckMembership(lg <= r, None, lg, ll)
    if geometry == "torus":
        return BottleneckMembership(lg <= r, ll <= r, lg, ll)
    raise ValueError(f"unknown geometry {geometry!r}")


def bottleneck_radius(n: int, d_plus: float) -> float:
    """r = min(n/8, 1/(8 d_plus))."""
    return min(n / 8, math.inf if d_plus == 0 else 1 / (8 * d_plus))


@dataclass(frozen=True)
class PhiStarScan:
    r_values: tuple
    phi: tuple  # Phi(A_r), inf when A_r has measure 0 or 1
    mass: tuple  # mu(A_r)
    phi_star: float | None
    gap: float

    def cheeger_ok(self) -> bool:
        """gap^{-1} >= Phi(A)^{-1} / 2 for every scanned set and for Phi_*."""
        vals = [f for f in self.phi if math.isfinite(f)]
        if self.phi_star is not None:
            vals.append(self.phi_star)
        return all(1 / self.gap >= 0.5 / f - 1e-9 for f in vals if f > 0)


def phi_star_scan(model: ExactModel, k: int, r_values: Iterable[float], exact: str = "auto") -> PhiStarScan:
    """Exact bottleneck ratio of A_r for each r, plus Phi_* when it is affordable.

    ``exact``: ``auto`` (all subsets up to 22 states, MILP up to 400), ``subsets``,
    ``milp`` or ``none``.
    """
    V = model.bd.region
    rs = tuple(r_values)
    sizes = [component_sizes(V, s >= k, 4) for s in model.states]
    largest = np.array([int(c.max()) if len(c) else 0 for c in sizes])
    phis, masses = [], []
    for r in rs:
        A = largest <= r
        phis.append(bottleneck_ratio(model, A))
        masses.append(float(model.pi[A].sum()))
    S = len(model)
    ps = None
    if exact == "subsets" or (exact == "auto" and S <= 22):
        ps = cheeger(model, "all_subsets")[0]
    elif exact == "milp" or (exact == "auto" and S <= 400):
        ps = cheeger_exact(model)[0]
    return PhiStarScan(rs, tuple(phis), tuple(masses), ps, spectral_gap(model).gap)


# ---------------------------------------------------------------------------
# layer statistics


@dataclass(frozen=True)
class LoopInfo:
    length: int
    dist_to_boundary: int


@dataclass(frozen=True)
class LayerStats:
    heights: np.ndarray
    fractions: np.ndarray
    ge_components: np.ndarray  # sizes
    ge_diameters: np.ndarray
    le_components: np.ndarray
    le_diameters: np.ndarray
    loops: dict

    @property
    def modal_height(self) -> int:
        return int(self.heights[np.argmax(self.fractions)])

    def to_json(self) -> dict:
        return {"heights": self.heights.tolist(), "fractions": self.fractions.tolist(),
                "ge_components": self.ge_components.tolist(), "ge_diameters": self.ge_diameters.tolist(),
                "le_components": self.le_components.tolist(), "le_diameters": self.le_diameters.tolist(),
                "loops": {m: None if l is None else vars(l) for m, l in self.loops.items()}}


def _diameters(V: Region, lab: np.ndarray) -> np.ndarray:
    n = lab.max() + 1 if len(lab) and lab.max() >= 0 else 0
    xy = np.array(V.sites)
    out = np.zeros(n, dtype=np.int64)
    for c in range(n):
        pts = xy[lab == c]
        out[c] = int((pts.max(axis=0) - pts.min(axis=0)).max()) + 1
    return out


def _dist_to_outside(V: Region, sites) -> int:
    outside = {s for i, d, s in V.outer_slots}
    if not outside:
        return -1
    o = np.array(sorted(outside))
    return int(min(np.abs(o - np.array(s)).max(axis=1).min() for s in sites))


def layer_report(phi: np.ndarray, V: Region, k: int) -> LayerStats:
    """Height histogram, components of {phi >= k} (4-connected) and {phi <= k-1}
    (8-connected), and the outermost =k, <=k, >=k loops around the centre."""
    phi = np.asarray(phi)
    hs, cnt = np.unique(phi, return_counts=True)
    lab_ge = component_labels(V, phi >= k, 4)
    lab_le = component_labels(V, phi <= k - 1, 8)
    loops = {}
    for mode in ("eq_k", "le_k", "ge_k"):
        L = None if V.periodic else outermost_level_loop(phi, V, k, mode)
        loops[mode] = None if L is None else LoopInfo(len(L), _dist_to_outside(V, L))
    return LayerStats(hs, cnt / cnt.sum(), np.bincount(lab_ge[lab_ge >= 0]) if (lab_ge >= 0).any()
                      else np.zeros(0, dtype=np.int64), _diameters(V, lab_ge),
                      np.bincount(lab_le[lab_le >= 0]) if (lab_le >= 0).any() else np.zeros(0, dtype=np.int64),
                      _diameters(V, lab_le), loops)


# ---------------------------------------------------------------------------
# lambda sweeps


@dataclass(frozen=True)
class SweepRow:
    lam: float
    metric: float
    err_lo: float
    err_hi: float
    window_id: int


SWEEP_HEADER = ("lambda", "metric", "err_lo", "err_hi", "window_id")


def _median_ci(x: np.ndarray, z: float = 1.96) -> tuple[float, float, float]:
    """Median with a distribution-free (binomial order statistic) interval."""
    x = np.sort(np.asarray(x))
    n = len(x)
    med = float(np.median(x))
    j = max(0, int(math.floor(n / 2 - z * math.sqrt(n) / 2)))
    kk = min(n - 1, int(math.ceil(n / 2 + z * math.sqrt(n) / 2)))
    return med, float(x[j]), float(x[kk])


def lambda_sweep(V: Region, beta: float, lambda_grid: Sequence[float], metric: str = "gap_exact",
                 ceiling: float = 2, bd_level: int = 0, n_reps: int = 20, seed=0, kernel: str = "pm_one",
                 escape_r: int = 2, t_max: float = 1e6) -> list[SweepRow]:
    """Per-lambda metric with error bars.

    Metrics: ``gap_exact`` (inverse spectral gap, zero error), ``coupling_time``
    (median with an order-statistic interval) and ``escape_time`` (mean with a
    standard error; one grand coupling over all lambdas per replica).
    """
    if V.periodic and any(lam < math.log(V.shape[0]) / V.shape[0] for lam in lambda_grid):
        warnings.warn("torus sweep: some lambda values are below log n / n", stacklevel=2)
    signing = "free"
    bd = constant_boundary(V, bd_level, signing, ceiling)
    rows = []
    if metric == "gap_exact":
        for lam in lambda_grid:
            m = ExactModel(bd, Params(beta, lam, allow_large_field=True), kernel=kernel)
            g = spectral_gap(m).gap
            rows.append(SweepRow(float(lam), 1 / g, 1 / g, 1 / g, window_id(lam, beta)))
    elif metric == "coupling_time":
        for lam in lambda_grid:
            res = simc.coupling_time(bd, Params(beta, lam, allow_large_field=True), None, n_reps, seed,
                                     kernel, t_max)
            med, lo, hi = _median_ci(res.times)
            rows.append(SweepRow(float(lam), med, lo, hi, window_id(lam, beta)))
    elif metric == "escape_time":
        T = simc.escape_time(bd, Params(beta, float(lambda_grid[0]), allow_large_field=True), bd_level,
                             escape_r, n_reps, lams=list(lambda_grid), seed=seed, kernel=kernel, t_max=t_max)
        for j, lam in enumerate(lambda_grid):
            x = T[:, j]
            m = float(np.mean(x))
            se = float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
            rows.append(SweepRow(float(lam), m, m - se, m + se, window_id(lam, beta)))
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return rows
