"""SOS Gibbs weights, energy differences and single-site conditional laws."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from .lattice import BoundaryData, Region

MOVE_SETS = ("pm_one", "full_column")


class ParameterError(ValueError):
    pass


class BandError(ValueError):
    """A height lies outside its floor/ceiling band."""


@dataclass(frozen=True)
class Params:
    """Inverse temperature and downward bulk field.

    Fields above 1 are rejected unless ``allow_large_field`` is set.
    """

    beta: float
    lam: float
    allow_large_field: bool = False

    def __post_init__(self):
        if not self.beta > 0:
            raise ParameterError("beta must be positive")
        if not self.lam >= 0:
            raise ParameterError("lambda must be nonnegative")
        if self.lam > 1 and not self.allow_large_field:
            raise ParameterError("lambda > 1 needs allow_large_field=True")

    def with_lam(self, lam: float) -> "Params":
        return Params(self.beta, lam, self.allow_large_field or lam > 1)


def check_band(phi: np.ndarray, bd: BoundaryData) -> None:
    if np.any(phi < bd.floor) or np.any(phi > bd.ceiling):
        bad = np.nonzero((phi < bd.floor) | (phi > bd.ceiling))[0]
        raise BandError(f"heights outside [floor, ceiling] at sites {[bd.region.sites[i] for i in bad[:5]]}")


def gradient_sum(phi: np.ndarray, V: Region, bd: BoundaryData) -> float:
    """Sum of |phi_v - phi_w| over internal edges and edges to the boundary."""
    phi = np.asarray(phi, dtype=np.int64)
    e = V.edges
    s = np.abs(phi[e[:, 0]] - phi[e[:, 1]]).sum() if len(e) else 0
    if not V.periodic and len(V.outer_slots):
        idx = np.array([i for i, _, _ in V.outer_slots])
        s += np.abs(phi[idx] - bd.phi).sum()
    return float(s)


def hamiltonian(phi: np.ndarray, bd: BoundaryData, p: Params) -> float:
    """beta * (sum of gradients, boundary edges included) + lambda * sum of heights."""
    phi = np.asarray(phi, dtype=np.int64)
    check_band(phi, bd)
    return p.beta * gradient_sum(phi, bd.region, bd) + p.lam * float(phi.sum())


def local_energy(phi: np.ndarray, v: int, h, bd: BoundaryData, p: Params):
    """Terms of the Hamiltonian that involve site v, evaluated at height(s) h."""
    h = np.asarray(h)
    nb = bd.region.nbr[v]
    tot = np.zeros(h.shape, dtype=float)
    for d in range(4):
        j = nb[d]
        w = phi[j] if j >= 0 else bd.bval[v, d]
        if j == v:
            continue
        tot = tot + np.abs(h - w)
    return p.beta * tot + p.lam * h


def local_delta(phi: np.ndarray, v: int, h_new: int, bd: BoundaryData, p: Params) -> float:
    """H(phi with phi_v = h_new) - H(phi), touching only the edges at v."""
    if h_new < bd.floor[v] or h_new > bd.ceiling[v]:
        raise BandError(f"height {h_new} outside band at site {bd.region.sites[v]}")
    if h_new == phi[v]:
        return 0.0
    return float(local_energy(phi, v, h_new, bd, p) - local_energy(phi, v, phi[v], bd, p))


def _column_cut(phi, v, bd: BoundaryData, p: Params) -> int:
    """Height above which every neighbour is exceeded and the tail is geometric."""
    nb = bd.region.nbr[v]
    vals = [phi[j] if j >= 0 else bd.bval[v, d] for d, j in enumerate(nb)]
    return int(max(max(vals), bd.floor[v]))


def site_conditional(phi: np.ndarray, v: int, bd: BoundaryData, p: Params, move_set: str = "pm_one",
                     tail_tol: float = 1e-14):
    """Candidate heights at site v and their heat-bath probabilities.

    ``pm_one`` uses the distinct heights among phi_v - 1, phi_v, phi_v + 1
    clipped to the band; ``full_column`` uses the whole band.  For an infinite
    ceiling the column is cut where the remaining geometric tail falls below
    ``tail_tol`` and that tail mass is folded into the probabilities by exact
    resummation (it is returned as the last entry's excess, see ``tail``).

    Returns
    -------
    heights : ndarray of int
    probs : ndarray of float
    """
    a, b = int(bd.floor[v]), bd.ceiling[v]
    if move_set == "pm_one":
        c = int(phi[v])
        hs = np.unique(np.clip([c - 1, c, c + 1], a, b).astype(np.int64))
    elif move_set == "full_column":
        if math.isfinite(b):
            hs = np.arange(a, int(b) + 1, dtype=np.int64)
        else:
            # past the largest neighbour height every extra unit costs 4*beta + lambda
            top = _column_cut(phi, v, bd, p)
            rate = 4 * p.beta + p.lam
            extra = max(1, int(math.ceil(-math.log(tail_tol) / rate)) + 1)
            hs = np.arange(a, top + extra + 1, dtype=np.int64)
    else:
        raise ValueError(f"unknown move set {move_set!r}")
    e = local_energy(phi, v, hs, bd, p)
    lw = -(e - e.min())
    w = np.exp(lw)
    if move_set == "full_column" and not math.isfinite(b):
        # exact geometric tail beyond the last listed height
        q = math.exp(-(4 * p.beta + p.lam))
        w[-1] = w[-1] / (1 - q)
    return hs, w / w.sum()


def ring_law(phi: np.ndarray, v: int, bd: BoundaryData, p: Params, move_set: str = "pm_one"):
    """Law of the new height at v after one ring of the site clock.

    For ``pm_one`` the ring picks a direction with probability 1/2 each and
    heat-baths between phi_v and its neighbour in that direction, which keeps
    the dynamics reversible.  For ``full_column`` it is ``site_conditional``.

    Returns
    -------
    heights : ndarray of int, increasing
    probs : ndarray of float
    """
    if move_set == "full_column":
        return site_conditional(phi, v, bd, p, "full_column")
    if move_set != "pm_one":
        raise ValueError(f"unknown move set {move_set!r}")
    c = int(phi[v])
    e0 = float(local_energy(phi, v, c, bd, p))
    pu = pd = 0.0
    if c + 1 <= bd.ceiling[v]:
        pu = 1.0 / (1.0 + math.exp(min(float(local_energy(phi, v, c + 1, bd, p)) - e0, 700.0)))
    if c - 1 >= bd.floor[v]:
        pd = 1.0 / (1.0 + math.exp(min(float(local_energy(phi, v, c - 1, bd, p)) - e0, 700.0)))
    hs = np.array([c - 1, c, c + 1], dtype=np.int64)
    pr = np.array([pd / 2, 1 - (pd + pu) / 2, pu / 2])
    keep = pr > 0
    return hs[keep], pr[keep]


def conditional_cdf(heights: np.ndarray, probs: np.ndarray, t) -> np.ndarray:
    """P(phi_v <= t) for the law given by (heights, probs)."""
    t = np.atleast_1d(t)
    return np.array([probs[heights <= tt].sum() for tt in t])


@dataclass(frozen=True)
class TailEstimate:
    estimate: float
    ci_low: float
    ci_high: float
    events: int
    n: int
    bound: float | None = None


def max_height_tail_check(samples: np.ndarray, k: int, base: int = 0, beta: float | None = None,
                          alpha: float = 0.05) -> TailEstimate:
    """Empirical probability that max_v phi_v >= base + k, with a Wilson interval.

    With no observed event the upper end is replaced by the rule-of-three bound 3/N.
    When ``beta`` is given the reference bound e^{-beta k} is attached.
    """
    samples = np.atleast_2d(samples)
    n = samples.shape[0]
    ev = int((samples.max(axis=1) >= base + k).sum())
    if ev == 0:
        lo, hi = 0.0, 3.0 / n
    else:
        lo, hi = proportion_confint(ev, n, alpha=alpha, method="wilson")
    return TailEstimate(ev / n, float(lo), float(hi), ev, n,
                        None if beta is None else math.exp(-beta * k))
