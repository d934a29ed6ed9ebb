"""Exhaustive enumeration of height fields, exact Gibbs measures and Glauber generators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from ..lattice import BoundaryData, GeometryError, Region, Site
from ..measure import Params

DEFAULT_STATE_CAP = 20_000_000


class ResourceError(RuntimeError):
    """A computation would exceed a configured size cap."""


def state_count(bd: BoundaryData) -> int:
    r = bd.int_ceiling() - bd.floor + 1
    if np.any(r <= 0):
        return 0
    return int(np.prod(r.astype(object)))


def enumerate_states(bd: BoundaryData, cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """All fields in the floor/ceiling band, as an (S, N) array in mixed-radix order.

    Site 0 is the fastest-varying digit, so the state with index s has
    phi_i = floor_i + (s // stride_i) % radix_i.
    """
    if not bd.finite_ceiling:
        raise GeometryError("enumeration needs a finite ceiling")
    S = state_count(bd)
    if S > cap:
        raise ResourceError(f"{S} states exceed the enumeration cap {cap}; raise the cap to at least {S}")
    lo = bd.floor.astype(np.int64)
    radix = bd.int_ceiling() - lo + 1
    strides = np.concatenate([[1], np.cumprod(radix)[:-1]]).astype(np.int64)
    idx = np.arange(S, dtype=np.int64)
    dtype = np.int8 if bd.int_ceiling().max(initial=0) < 127 else np.int32
    out = np.empty((S, len(radix)), dtype=dtype)
    for i in range(len(radix)):
        out[:, i] = lo[i] + (idx // strides[i]) % radix[i]
    return out


def strides_of(bd: BoundaryData) -> np.ndarray:
    radix = bd.int_ceiling() - bd.floor + 1
    return np.concatenate([[1], np.cumprod(radix)[:-1]]).astype(np.int64)


def energies(states: np.ndarray, bd: BoundaryData, p: Params, chunk: int = 1 << 20) -> np.ndarray:
    """H for every row of ``states`` (vectorised, chunked)."""
    V = bd.region
    e = V.edges
    slots = np.array([i for i, _, _ in V.outer_slots], dtype=np.int64)
    out = np.empty(len(states))
    for a in range(0, len(states), chunk):
        s = states[a:a + chunk].astype(np.int64)
        g = np.abs(s[:, e[:, 0]] - s[:, e[:, 1]]).sum(axis=1) if len(e) else 0
        if len(slots) and not V.periodic:
            g = g + np.abs(s[:, slots] - bd.phi[None, :]).sum(axis=1)
        out[a:a + chunk] = p.beta * g + p.lam * s.sum(axis=1)
    return out


def _local_terms(states: np.ndarray, v: int, bd: BoundaryData) -> list[np.ndarray]:
    """Heights seen by site v across its four bonds, one array (over states) per bond."""
    nb = bd.region.nbr[v]
    out = []
    for d in range(4):
        j = nb[d]
        if j == v:
            continue
        out.append(states[:, j].astype(np.int64) if j >= 0 else np.full(len(states), bd.bval[v, d]))
    return out


def local_energy_vec(states: np.ndarray, v: int, h: np.ndarray, bd: BoundaryData, p: Params) -> np.ndarray:
    tot = np.zeros(len(states))
    for w in _local_terms(states, v, bd):
        tot += np.abs(h - w)
    return p.beta * tot + p.lam * h


class ExactModel:
    """Exact SOS measure on a small region, with the generator of a Glauber kernel.

    Parameters
    ----------
    bd : BoundaryData
        Boundary heights, floors and (finite) ceilings.
    p : Params
    kernel : {"pm_one", "full_column"}
        ``pm_one``: every site rings at rate 1, picks a direction +1 or -1
        with probability 1/2 and resamples between its height and the
        neighbouring one from the conditional law.  ``full_column``: every
        site rings at rate 1 and resamples from its full conditional law.
    cap : int
        Maximum number of states.
    """

    def __init__(self, bd: BoundaryData, p: Params, kernel: str = "pm_one", cap: int = DEFAULT_STATE_CAP):
        if kernel not in ("pm_one", "full_column"):
            raise ValueError(f"unknown kernel {kernel!r}")
        self.bd = bd
        self.region: Region = bd.region
        self.p = p
        self.kernel = kernel
        self.states = enumerate_states(bd, cap)
        self.log_weights = -energies(self.states, bd, p)
        self.log_Z = float(logsumexp(self.log_weights))

    def __len__(self):
        return len(self.states)

    @cached_property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_Z)

    @cached_property
    def strides(self) -> np.ndarray:
        return strides_of(self.bd)

    def index_of(self, phi) -> int:
        phi = np.asarray(phi, dtype=np.int64)
        return int(((phi - self.bd.floor) * self.strides).sum())

    def expectation(self, f) -> float:
        """E_mu[f] where f maps the (S, N) state array to an (S,) array."""
        return float(np.dot(self.pi, f(self.states)))

    @cached_property
    def generator(self) -> sparse.csr_matrix:
        """Sparse generator L (rows sum to zero) of the selected kernel."""
        S, N = self.states.shape
        hi = self.bd.int_ceiling()
        lo = self.bd.floor
        rows, cols, vals = [], [], []
        base = np.arange(S, dtype=np.int64)
        for v in range(N):
            c = self.states[:, v].astype(np.int64)
            if self.kernel == "pm_one":
                e0 = local_energy_vec(self.states, v, c, self.bd, self.p)
                for step in (1, -1):
                    t = c + step
                    ok = (t >= lo[v]) & (t <= hi[v])
                    e1 = local_energy_vec(self.states, v, t, self.bd, self.p)
                    # heat-bath between c and c + step, chosen with probability 1/2
                    rate = 0.5 / (1.0 + np.exp(np.clip(e1 - e0, -700, 700)))
                    rows.append(base[ok])
                    cols.append(base[ok] + step * self.strides[v])
                    vals.append(rate[ok])
            else:
                hs = np.arange(lo[v], hi[v] + 1)
                E = np.stack([local_energy_vec(self.states, v, np.full(S, h), self.bd, self.p) for h in hs], 1)
                E -= E.min(axis=1, keepdims=True)
                P = np.exp(-E)
                P /= P.sum(axis=1, keepdims=True)
                for a, h in enumerate(hs):
                    ok = c != h
                    rows.append(base[ok])
                    cols.append(base[ok] + (h - c[ok]) * self.strides[v])
                    vals.append(P[ok, a])
        r = np.concatenate(rows)
        cidx = np.concatenate(cols)
        w = np.concatenate(vals)
        L = sparse.coo_matrix((w, (r, cidx)), shape=(S, S)).tocsr()
        L = L - sparse.diags(np.asarray(L.sum(axis=1)).ravel())
        return L.tocsr()

    def flow_matrix(self) -> sparse.csr_matrix:
        """Q(x, y) = mu(x) L(x, y) off the diagonal (symmetric for a reversible kernel)."""
        L = self.generator.tocoo()
        off = L.row != L.col
        return sparse.coo_matrix((self.pi[L.row[off]] * L.data[off], (L.row[off], L.col[off])),
                                 shape=L.shape).tocsr()

    def detailed_balance_error(self) -> float:
        Q = self.flow_matrix()
        D = abs(Q - Q.T)
        if D.nnz == 0:
            return 0.0
        return float(D.max() / max(abs(Q).max(), 1e-300))

    def marginal(self, window: Iterable[Site]) -> dict[tuple, float]:
        idx = [self.region.pos(s) for s in window]
        sub = self.states[:, idx].astype(np.int64)
        keys, inv = np.unique(sub, axis=0, return_inverse=True)
        m = np.bincount(inv.ravel(), weights=self.pi, minlength=len(keys))
        return {tuple(int(x) for x in k): float(w) for k, w in zip(keys, m)}


def enumerate_model(V: Region, bd: BoundaryData, p: Params, ceiling: int | None = None,
                    kernel: str = "pm_one", cap: int = DEFAULT_STATE_CAP) -> ExactModel:
    """Build an ExactModel, optionally lowering the ceiling to ``ceiling``."""
    if bd.region != V:
        raise GeometryError("boundary data belongs to a different region")
    if ceiling is not None:
        bd = bd.with_ceiling(ceiling)
    return ExactModel(bd, p, kernel=kernel, cap=cap)


def tv_marginal_distance(m1: ExactModel, m2: ExactModel, window: Iterable[Site]) -> float:
    """Exact total-variation distance between the window marginals of two models."""
    window = list(window)
    for m in (m1, m2):
        if not all(s in m.region for s in window):
            raise GeometryError("window is not contained in both regions")
    a, b = m1.marginal(window), m2.marginal(window)
    keys = set(a) | set(b)
    return 0.5 * math.fsum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)
