"""Spectral gaps, bottleneck ratios and canonical-path congestion of exact generators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numba
import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import csgraph
from scipy.sparse.linalg import LinearOperator, eigsh

from .enumeration import ExactModel, ResourceError

DENSE_CAP = 5_000
LANCZOS_CAP = 2_000_000


class ReducibleChainError(ArithmeticError):
    def __init__(self, classes):
        self.classes = classes
        super().__init__(f"reducible chain with {len(classes)} communicating classes "
                         f"(sizes {[len(c) for c in classes][:10]})")


@dataclass(frozen=True)
class GapResult:
    gap: float
    residual: float
    method: str


def _check_irreducible(L: sparse.csr_matrix) -> None:
    A = (abs(L) > 0).astype(np.int8)
    n, lab = csgraph.connected_components(A, directed=True, connection="strong")
    if n > 1:
        classes = [np.nonzero(lab == c)[0] for c in range(n)]
        raise ReducibleChainError(classes)


def symmetrized(model: ExactModel) -> sparse.csr_matrix:
    """D^{1/2} L D^{-1/2} with D = diag(mu); symmetric when L is reversible."""
    s = np.sqrt(model.pi)
    L = model.generator.tocoo()
    vals = L.data * s[L.row] / s[L.col]
    M = sparse.coo_matrix((vals, (L.row, L.col)), shape=L.shape).tocsr()
    return (M + M.T) * 0.5


def spectral_gap(model: ExactModel, dense_cap: int = DENSE_CAP, lanczos_cap: int = LANCZOS_CAP) -> GapResult:
    """Smallest nonzero eigenvalue of -L, from the symmetrized generator.

    The residual is |S u| for u = sqrt(mu), the known ground state.
    """
    S_ = len(model)
    if S_ == 1:
        return GapResult(math.inf, 0.0, "trivial")
    _check_irreducible(model.generator)
    M = symmetrized(model)
    u = np.sqrt(model.pi)
    residual = float(np.linalg.norm(M @ u))
    if S_ <= dense_cap:
        ev = np.linalg.eigvalsh(-M.toarray())
        return GapResult(float(ev[1]), residual, "dense")
    if S_ > lanczos_cap:
        raise ResourceError(f"{S_} states exceed the Lanczos cap {lanczos_cap}")
    # Lanczos on -M with the known ground state pushed far down the spectrum; a
    # shift-invert factorisation fills in badly on these many-dimensional grids
    u /= np.linalg.norm(u)
    c = 2.0 * float(abs(M).sum(axis=1).max())
    op = LinearOperator(M.shape, matvec=lambda x: M @ x - c * u * (u @ x), dtype=float)
    ev = eigsh(op, k=1, which="LA", tol=1e-12, maxiter=100 * S_, return_eigenvectors=False)
    return GapResult(float(-ev[0]), residual, "lanczos")


def raw_gap(model: ExactModel) -> float:
    """Gap from a dense eigensolve of the unsymmetrized generator (independent check)."""
    ev = np.linalg.eigvals(-model.generator.toarray())
    ev = np.sort(ev.real)
    return float(ev[1])


# ---------------------------------------------------------------------------
# bottleneck ratios


def bottleneck_ratio(model: ExactModel, A: np.ndarray) -> float:
    """Phi(A) = Q(A, A^c) / (mu(A) mu(A^c)), with Q(x, y) = mu(x) L(x, y)."""
    A = np.asarray(A, dtype=bool)
    if A.all() or not A.any():
        return math.inf
    mA = float(model.pi[A].sum())
    mB = float(model.pi[~A].sum())  # not 1 - mA, which cancels when A^c is tiny
    if mA <= 0 or mB <= 0:
        return math.inf
    Q = model.flow_matrix().tocoo()
    cut = float(Q.data[A[Q.row] & ~A[Q.col]].sum())
    return cut / (mA * mB)


def edge_flow(model: ExactModel, A: np.ndarray) -> tuple[float, float]:
    """(Q(A, A^c), Q(A^c, A)); equal for a reversible chain."""
    A = np.asarray(A, dtype=bool)
    Q = model.flow_matrix().tocoo()
    return float(Q.data[A[Q.row] & ~A[Q.col]].sum()), float(Q.data[~A[Q.row] & A[Q.col]].sum())


@numba.njit(cache=True)
def _gray_scan(m, mu):  # pragma: no cover - compiled
    # cut and masses are summed afresh for every set: incremental updates cancel
    # catastrophically when weights span many orders of magnitude
    n = len(mu)
    inA = np.zeros(n, dtype=np.bool_)
    best = np.inf
    best_code = 0
    code = 0
    # state 0 is kept outside A; Phi(A) = Phi(A^c)
    for k in range(1, 1 << (n - 1)):
        j = 0
        t = k
        while (t & 1) == 0:
            t >>= 1
            j += 1
        inA[j + 1] = not inA[j + 1]
        code ^= 1 << j
        ma = 0.0
        mb = 0.0
        for x in range(n):
            if inA[x]:
                ma += mu[x]
            else:
                mb += mu[x]
        cut = 0.0
        for x in range(n):
            if inA[x]:
                for y in range(n):
                    if not inA[y]:
                        cut += m[x, y]
        d = ma * mb
        if d > 0:
            r = cut / d
            if r < best:
                best = r
                best_code = code
    return best, best_code


def cheeger(model: ExactModel, family: str = "all_subsets", observable=None,
            sets: Sequence[np.ndarray] | None = None) -> tuple[float, np.ndarray]:
    """Minimum bottleneck ratio over a family of state sets.

    ``all_subsets`` scans every subset (at most 22 states) and returns the true
    Phi_*; ``level_sets`` scans the sublevel sets {f <= t} of ``observable``
    (an array over states or a function of the state array); ``given`` scans
    the boolean masks in ``sets``.  Sets of measure 0 or 1 are skipped.
    """
    S_ = len(model)
    if family == "all_subsets":
        if S_ > 22:
            raise ResourceError("all_subsets needs at most 22 states")
        if S_ < 2:
            return math.inf, np.zeros(S_, dtype=bool)
        m = model.flow_matrix().toarray()
        m = 0.5 * (m + m.T)
        best, code = _gray_scan(m, model.pi.copy())
        A = np.zeros(S_, dtype=bool)
        for j in range(S_ - 1):
            if code >> j & 1:
                A[j + 1] = True
        return float(best), A
    if family == "level_sets":
        f = observable(model.states) if callable(observable) else np.asarray(observable)
        order = np.argsort(f, kind="stable")
        vals = f[order]
        cuts = np.nonzero(np.diff(vals))[0]
        best, arg = math.inf, None
        for c in cuts:
            A = np.zeros(S_, dtype=bool)
            A[order[:c + 1]] = True
            r = bottleneck_ratio(model, A)
            if r < best:
                best, arg = r, A
        return best, arg
    if family == "given":
        best, arg = math.inf, None
        for A in sets or ():
            r = bottleneck_ratio(model, A)
            if r < best:
                best, arg = r, np.asarray(A, dtype=bool)
        return best, arg
    raise ValueError(f"unknown family {family!r}")


def cheeger_exact(model: ExactModel, tol: float = 1e-10, max_iter: int = 50,
                  time_limit: float = 600.0) -> tuple[float, np.ndarray]:
    """True Phi_* by Dinkelbach iterations over a mixed-integer program.

    Each step minimises Q(A, A^c) - theta mu(A) mu(A^c) over nonempty proper A,
    written with binary z (membership), e_xy >= |z_x - z_y| on transitions and
    d_xy <= z_x XOR z_y on all pairs.  Practical up to roughly a hundred states.
    """
    S_ = len(model)
    mu = model.pi
    F = model.flow_matrix().tocoo()
    E = {}
    for r, c, v in zip(F.row, F.col, F.data):
        if r != c:
            a, b = (r, c) if r < c else (c, r)
            E[(a, b)] = E.get((a, b), 0.0) + 0.5 * v  # symmetric flow, each edge seen twice
    edges = list(E)
    qe = np.array([E[e] for e in edges])
    iu, ju = np.triu_indices(S_, 1)
    pp = mu[iu] * mu[ju]
    nz, ne, nd = S_, len(edges), len(iu)
    nv = nz + ne + nd
    rows, cols, vals, lo, hi = [], [], [], [], []

    def add(row_entries, l, u):
        k = len(lo)
        for c, v in row_entries:
            rows.append(k)
            cols.append(c)
            vals.append(v)
        lo.append(l)
        hi.append(u)

    for k, (a, b) in enumerate(edges):
        add([(nz + k, 1.0), (a, -1.0), (b, 1.0)], 0, np.inf)
        add([(nz + k, 1.0), (a, 1.0), (b, -1.0)], 0, np.inf)
    for k in range(nd):
        a, b = iu[k], ju[k]
        add([(nz + ne + k, 1.0), (a, -1.0), (b, -1.0)], -np.inf, 0)
        add([(nz + ne + k, 1.0), (a, 1.0), (b, 1.0)], -np.inf, 2)
    add([(i, 1.0) for i in range(S_)], 1, S_ - 1)
    Acon = sparse.coo_matrix((vals, (rows, cols)), shape=(len(lo), nv)).tocsr()
    cons = LinearConstraint(Acon, np.array(lo), np.array(hi))
    integrality = np.zeros(nv)
    integrality[:nz] = 1
    lb = np.zeros(nv)
    ub = np.ones(nv)
    ub[0] = 0  # state 0 outside A, by complement symmetry
    bounds = Bounds(lb, ub)

    # start from the best level set of the energy
    theta, A = cheeger(model, "level_sets", observable=-model.log_weights)
    for _ in range(max_iter):
        c = np.concatenate([np.zeros(nz), qe, -theta * pp])
        res = milp(c, constraints=cons, integrality=integrality, bounds=bounds,
                   options={"time_limit": time_limit, "mip_rel_gap": 0.0})
        if res.x is None:
            raise ArithmeticError(f"MILP failed: {res.message}")
        z = res.x[:nz] > 0.5
        val = bottleneck_ratio(model, z)
        if res.fun >= -tol * max(theta, 1e-300) * pp.sum() or val >= theta * (1 - 1e-12):
            break
        theta, A = val, z
    return float(theta), A


# ---------------------------------------------------------------------------
# canonical paths


@numba.njit(cache=True)
def _congestion_load(states, order, lo, strides, pi, n_states):  # pragma: no cover - compiled
    N = states.shape[1]
    load = np.zeros((n_states, N, 2))
    for x in range(n_states):
        for y in range(n_states):
            if x == y:
                continue
            # path length
            length = 0
            for i in range(N):
                length += abs(int(states[x, i]) - int(states[y, i]))
            w = pi[x] * pi[y] * length
            cur = x
            for k in range(N):
                i = order[k]
                d = int(states[y, i]) - int(states[x, i])
                step = 1 if d > 0 else -1
                for _ in range(abs(d)):
                    load[cur, i, 0 if step > 0 else 1] += w
                    cur += step * strides[i]
    return load


def congestion(model: ExactModel, ordering: Sequence[int] | None = None, max_states: int = 5000) -> float:
    """Congestion of the coordinate-by-coordinate canonical paths (an upper bound on 1/gap).

    Paths fix the sites in ``ordering`` one after another, moving each height
    by unit steps.  The value is max over transitions e = (x, x') of
    (1 / (mu(x) L(x, x'))) * sum over paths through e of mu(a) mu(b) |path|.
    Only defined for the pm_one kernel, whose transitions are unit steps.
    """
    if model.kernel != "pm_one":
        raise ValueError("canonical paths use unit steps; build the model with the pm_one kernel")
    S_, N = model.states.shape
    if S_ > max_states:
        raise ResourceError(f"{S_} states exceed the congestion cap {max_states}")
    order = np.arange(N) if ordering is None else np.asarray(ordering, dtype=np.int64)
    load = _congestion_load(model.states.astype(np.int64), order, model.bd.floor.astype(np.int64),
                            model.strides, model.pi, S_)
    L = model.generator
    worst = 0.0
    xs, ii, dd = np.nonzero(load)
    for x, i, d in zip(xs, ii, dd):
        step = 1 if d == 0 else -1
        y = x + step * model.strides[i]
        q = model.pi[x] * L[x, y]
        worst = max(worst, load[x, i, d] / q)
    return float(worst)
