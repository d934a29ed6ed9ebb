"""Continuous-time Glauber chains, grand coupling and censoring.

Each site carries a rate-1 clock; we use one global clock of rate |V| with a
uniform site instead.  See :mod:`soslab.sim.kernels` for the update rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from ..lattice import OFFSETS6, BoundaryData, Region, Site
from ..measure import MOVE_SETS, Params, check_band
from . import kernels as K

SEED_BITS = 2**62
TAIL_K = 12  # heights kept above the top neighbour before the geometric tail


@lru_cache(maxsize=64)
def _geometry(V: Region):
    nbr6 = np.full((len(V), 6), -1, dtype=np.int64)
    for i, (x, y) in enumerate(V.sites):
        for d, (dx, dy) in enumerate(OFFSETS6):
            nbr6[i, d] = V._pos.get(V.wrap((x + dx, y + dy)), -1)
    sx = np.array([s[0] for s in V.sites], dtype=np.int64)
    sy = np.array([s[1] for s in V.sites], dtype=np.int64)
    return nbr6, sx, sy


def _band(bd: BoundaryData):
    floor = bd.floor.astype(np.int64)
    ceil = np.where(np.isfinite(bd.ceiling), bd.ceiling, K.BIG).astype(np.int64)
    return floor, ceil


def _kernel_code(kernel: str) -> int:
    if kernel not in MOVE_SETS:
        raise ValueError(f"unknown kernel {kernel!r}")
    return K.KERNEL_PM_ONE if kernel == "pm_one" else K.KERNEL_FULL


# ---------------------------------------------------------------------------
# Censoring schedules


@dataclass(frozen=True)
class Epoch:
    t_end: float
    sites: frozenset[Site] | None  # None = every site
    a: int
    b: int


@dataclass(frozen=True)
class CensorSchedule:
    """Epochs (t_end, V_i, a_i, b_i).  During epoch i only moves at sites of V_i
    between two heights of [a_i, b_i] are applied, so a site outside the band
    is frozen.  After the last epoch nothing is censored."""

    epochs: tuple[Epoch, ...]

    def __post_init__(self):
        ts = [e.t_end for e in self.epochs]
        if any(t1 <= t0 for t0, t1 in zip(ts, ts[1:])):
            raise ValueError("epoch end times must be strictly increasing")
        if any(e.a >= e.b for e in self.epochs):
            raise ValueError("each epoch needs a_i < b_i")

    @classmethod
    def from_list(cls, rows: Sequence) -> "CensorSchedule":
        """Build from ``[(t_end, sites or None, a, b), ...]``."""
        eps = []
        for t, s, a, b in rows:
            eps.append(Epoch(float(t), None if s is None else frozenset(map(tuple, s)), int(a), int(b)))
        return cls(tuple(eps))

    def to_list(self) -> list:
        return [[e.t_end, None if e.sites is None else sorted(map(list, e.sites)), e.a, e.b]
                for e in self.epochs]

    def arrays(self, V: Region):
        n = len(self.epochs)
        times = np.array([e.t_end for e in self.epochs], dtype=float)
        sites = np.zeros((n, len(V)), dtype=np.bool_)
        for i, e in enumerate(self.epochs):
            if e.sites is None:
                sites[i] = True
            else:
                for s in e.sites:
                    if s in V:
                        sites[i, V.pos(s)] = True
        lo = np.array([e.a for e in self.epochs], dtype=np.int64)
        hi = np.array([e.b for e in self.epochs], dtype=np.int64)
        return times, sites, lo, hi


def staircase_schedule(H: int, s: float, dt: float, sites=None, floor: int = 0) -> CensorSchedule:
    """Descending staircase: epoch i lasts dt, a_i = H - (i/2) s, b_i = a_i + s.

    Heights are rounded down to integers and a_i is clipped at ``floor``; the
    staircase stops after the first epoch that reaches the floor.
    """
    if s <= 0 or dt <= 0:
        raise ValueError("need s > 0 and dt > 0")
    eps = []
    i = 1
    while True:
        a = max(floor, int(math.floor(H - i * s / 2)))
        b = max(a + 1, int(math.floor(H - i * s / 2 + s)))
        eps.append(Epoch(i * dt, None if sites is None else frozenset(sites), a, b))
        if a <= floor:
            break
        i += 1
    return CensorSchedule(tuple(eps))


_EMPTY = (np.zeros(0), np.zeros((0, 1), dtype=np.bool_), np.zeros(0, dtype=np.int64),
          np.zeros(0, dtype=np.int64))


# ---------------------------------------------------------------------------
# Chains


@dataclass
class ChainState:
    """A height field together with its simulated time and random stream."""

    field: np.ndarray
    clock: float
    rng: np.random.Generator
    kernel: str
    bd: BoundaryData
    p: Params

    def copy(self) -> "ChainState":
        r = np.random.Generator(type(self.rng.bit_generator)())
        r.bit_generator.state = self.rng.bit_generator.state
        return replace(self, field=self.field.copy(), rng=r)


def initial_field(bd: BoundaryData, start="floor") -> np.ndarray:
    """``floor``, ``ceiling`` (finite ceilings only), an integer k (clipped to the band) or an array."""
    N = len(bd.region)
    if isinstance(start, str):
        if start == "floor":
            return bd.floor.astype(np.int64).copy()
        if start == "ceiling":
            return bd.int_ceiling().copy()
        raise ValueError(f"unknown start {start!r}")
    if np.ndim(start) == 0:
        return np.clip(np.full(N, int(start)), bd.floor, bd.ceiling).astype(np.int64)
    phi = np.asarray(start, dtype=np.int64).copy()
    check_band(phi, bd)
    return phi


def make_chain(bd: BoundaryData, p: Params, start="floor", seed=0, kernel: str = "pm_one") -> ChainState:
    _kernel_code(kernel)
    return ChainState(initial_field(bd, start), 0.0, np.random.default_rng(seed), kernel, bd, p)


def _drive(X, t0, t_end, bd, beta, lams, kernel, seed, censored=None, schedule=None,
           sample_dt=0.0, n_samples=0, stop=K.STOP_NONE, stop_level=0, stop_r=0, hit_times=None,
           max_events=2**62, order_pairs=None, bmix=0.0):
    V = bd.region
    nbr6, sx, sy = _geometry(V)
    floor, ceil = _band(bd)
    M = X.shape[0]
    if censored is None or schedule is None:
        censored = np.zeros(M, dtype=np.bool_)
        arr = (_EMPTY[0], np.zeros((0, len(V)), dtype=np.bool_), _EMPTY[2], _EMPTY[3])
    else:
        arr = schedule.arrays(V)
    if hit_times is None:
        hit_times = np.full(M, -1.0)
    samples = np.zeros((n_samples, M, len(V)), dtype=np.int64)
    pairs = np.zeros((0, 2), dtype=np.int64) if order_pairs is None else np.asarray(order_pairs, dtype=np.int64)
    t, nev, ns, stopped, viol = K.coupled_events(
        X, float(t0), float(t_end), V.nbr, bd.bval, nbr6, sx, sy, floor, ceil, float(beta),
        np.asarray(lams, dtype=float), _kernel_code(kernel), np.asarray(censored, dtype=np.bool_),
        arr[0], arr[1], arr[2], arr[3], int(seed), float(sample_dt), samples, int(max_events),
        int(stop), int(stop_level), int(stop_r), hit_times, TAIL_K, pairs, float(bmix))
    return t, nev, samples[:ns], stopped, hit_times, viol


def run(chain: ChainState, t_horizon: float) -> ChainState:
    """Advance a copy of ``chain`` to time ``t_horizon``."""
    out = chain.copy()
    if t_horizon <= chain.clock:
        return out
    X = out.field[None, :].copy()
    _drive(X, out.clock, t_horizon, out.bd, out.p.beta, [out.p.lam], out.kernel,
           out.rng.integers(SEED_BITS))
    out.field = X[0]
    out.clock = float(t_horizon)
    return out


def censored_run(chain: ChainState, schedule: CensorSchedule, t_horizon: float) -> ChainState:
    """Like :func:`run`, but moves forbidden by the schedule are discarded."""
    out = chain.copy()
    if t_horizon <= chain.clock:
        return out
    X = out.field[None, :].copy()
    _drive(X, out.clock, t_horizon, out.bd, out.p.beta, [out.p.lam], out.kernel,
           out.rng.integers(SEED_BITS), censored=np.ones(1, dtype=np.bool_), schedule=schedule)
    out.field = X[0]
    out.clock = float(t_horizon)
    return out


def sample_path(chain: ChainState, t_horizon: float, dt: float, schedule: CensorSchedule | None = None):
    """Run to ``t_horizon`` and return (final chain, sample times, fields at those times).

    With a ``schedule`` the run is censored as in :func:`censored_run`.
    """
    out = chain.copy()
    n = int(math.floor((t_horizon - chain.clock) / dt + 1e-9))
    X = out.field[None, :].copy()
    cen = None if schedule is None else np.ones(1, dtype=np.bool_)
    _, _, S, _, _, _ = _drive(X, out.clock, t_horizon, out.bd, out.p.beta, [out.p.lam], out.kernel,
                              out.rng.integers(SEED_BITS), cen, schedule, sample_dt=dt,
                              n_samples=max(n, 0))
    times = chain.clock + dt * np.arange(1, len(S) + 1)
    out.field = X[0]
    out.clock = float(t_horizon)
    return out, times, S[:, 0, :]


# ---------------------------------------------------------------------------
# Grand coupling


@dataclass
class GrandCoupling:
    """Chains on one region driven by one event stream.

    Chains share beta and the boundary data but may have their own field
    strength (``lams``); a smaller field with a higher start stays higher.
    ``censored`` marks chains that obey ``schedule``.
    """

    fields: np.ndarray  # (M, N)
    lams: np.ndarray
    clock: float
    rng: np.random.Generator
    kernel: str
    bd: BoundaryData
    beta: float
    schedule: CensorSchedule | None = None
    censored: np.ndarray | None = None

    @classmethod
    def build(cls, bd: BoundaryData, p: Params, starts: Sequence, seed=0, kernel="pm_one",
              lams=None, schedule=None, censored=None) -> "GrandCoupling":
        X = np.stack([initial_field(bd, s) for s in starts])
        lam = np.full(len(starts), p.lam) if lams is None else np.asarray(lams, dtype=float)
        if lam.shape != (len(starts),):
            raise ValueError("one field value per chain")
        _kernel_code(kernel)
        cen = None if censored is None else np.asarray(censored, dtype=np.bool_)
        return cls(X, lam, 0.0, np.random.default_rng(seed), kernel, bd, p.beta, schedule, cen)

    def coalesced(self) -> bool:
        return bool(np.all(self.fields == self.fields[0]))


def grand_run(coupling: GrandCoupling, t_horizon: float, sample_dt: float = 0.0):
    """Advance every chain of the coupling to ``t_horizon`` in place.

    Returns the fields at times clock + sample_dt, clock + 2 sample_dt, ...
    as an array (n_samples, M, N) when ``sample_dt`` > 0, else ``None``.
    """
    if t_horizon <= coupling.clock:
        return None
    n = int(math.floor((t_horizon - coupling.clock) / sample_dt + 1e-9)) if sample_dt > 0 else 0
    _, _, S, _, _, _ = _drive(coupling.fields, coupling.clock, t_horizon, coupling.bd, coupling.beta,
                           coupling.lams, coupling.kernel, coupling.rng.integers(SEED_BITS),
                           coupling.censored, coupling.schedule, sample_dt, n)
    coupling.clock = float(t_horizon)
    return S if sample_dt > 0 else None


def grand_events(coupling: GrandCoupling, n_events: int, order_pairs=None) -> int:
    """Advance the coupling by exactly ``n_events`` events (clock moves to the last one).

    ``order_pairs`` lists chain pairs (i, j) expected to satisfy X_i >= X_j; the
    number of sites found out of order after an event is returned.
    """
    t, _, _, _, _, viol = _drive(coupling.fields, coupling.clock, np.inf, coupling.bd, coupling.beta,
                                 coupling.lams, coupling.kernel, coupling.rng.integers(SEED_BITS),
                                 coupling.censored, coupling.schedule, max_events=n_events,
                                 order_pairs=order_pairs)
    coupling.clock = float(t)
    return int(viol)


# ---------------------------------------------------------------------------
# Coupling and hitting times


@dataclass(frozen=True)
class CouplingResult:
    """First meeting times of the top and bottom chains (inf if not met by ``t_max``)."""

    times: np.ndarray
    t_max: float

    @property
    def median(self) -> float:
        return float(np.median(self.times))

    def tv_proxy(self, t) -> np.ndarray:
        """P(top chain != bottom chain at time t), an upper bound on the distance to equilibrium
        of the worst start."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return (self.times[None, :] > t[:, None]).mean(axis=1)


def coupling_time(bd: BoundaryData, p: Params, ceiling: float | None = None, n_reps: int = 10,
                  seed=0, kernel="pm_one", t_max: float = 1e6, top=None) -> CouplingResult:
    """Coalescence times of the chains started from the ceiling and the floor.

    ``top`` overrides the upper start (needed when the ceiling is infinite).
    """
    if ceiling is not None:
        bd = bd.with_ceiling(ceiling)
    top = "ceiling" if top is None else top
    ss = np.random.SeedSequence(seed).spawn(n_reps)
    out = np.full(n_reps, np.inf)
    for r in range(n_reps):
        X = np.stack([initial_field(bd, top), initial_field(bd, "floor")])
        rs = np.random.default_rng(ss[r]).integers(SEED_BITS)
        t, _, _, stopped, _, _ = _drive(X, 0.0, t_max, bd, p.beta, [p.lam, p.lam], kernel, rs,
                                     stop=K.STOP_COALESCE)
        if stopped:
            out[r] = t
    return CouplingResult(out, t_max)


def escape_time(bd: BoundaryData, p: Params, k: int, r: int, n_reps: int = 10, lams=None,
                seed=0, kernel="pm_one", t_max: float = 1e6) -> np.ndarray:
    """First times a 6-connected droplet of {phi >= k+1} with bounding-box side >= r appears,
    starting from phi = k.

    With ``lams`` the field values are run as one grand coupling per replica
    (paired seeds).  Returns an array (n_reps, len(lams)); inf marks no hit by ``t_max``.
    """
    lam = np.array([p.lam] if lams is None else lams, dtype=float)
    ss = np.random.SeedSequence(seed).spawn(n_reps)
    out = np.full((n_reps, len(lam)), np.inf)
    for i in range(n_reps):
        X = np.stack([initial_field(bd, k)] * len(lam))
        ht = np.full(len(lam), -1.0)
        rs = np.random.default_rng(ss[i]).integers(SEED_BITS)
        _drive(X, 0.0, t_max, bd, p.beta, lam, kernel, rs, stop=K.STOP_ESCAPE,
               stop_level=k + 1, stop_r=r, hit_times=ht)
        out[i] = np.where(ht >= 0, ht, np.inf)
    return out


# ---------------------------------------------------------------------------
# Autocorrelation


class InsufficientSamplesError(ValueError):
    def __init__(self, need: float):
        super().__init__(f"too few samples for the autocorrelation estimate; use t_sample >= {need:g}")
        self.need = need


def mean_height(phi: np.ndarray) -> np.ndarray:
    return np.asarray(phi).mean(axis=-1)


OBSERVABLES: dict[str, Callable] = {
    "mean_height": mean_height,
    "max_height": lambda phi: np.asarray(phi).max(axis=-1).astype(float),
    "frac_positive": lambda phi: (np.asarray(phi) > 0).mean(axis=-1),
}


def batch_means(x: np.ndarray, n_batches: int = 20):
    """Mean and batch-means standard error of a time series."""
    x = np.asarray(x, dtype=float)
    m = len(x) // n_batches
    if m < 1:
        raise InsufficientSamplesError(n_batches)
    b = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(x.mean()), float(b.std(ddof=1) / math.sqrt(n_batches))


@dataclass(frozen=True)
class AutocorrResult:
    tau_int: float
    tau_int_err: float
    tau_exp: float
    mean: float
    mean_err: float
    dt: float
    acf: np.ndarray


def _acf(x: np.ndarray, nlags: int) -> np.ndarray:
    x = x - x.mean()
    n = len(x)
    f = np.fft.rfft(x, 2 * n)
    c = np.fft.irfft(f * np.conj(f))[: nlags + 1]
    return c / c[0] if c[0] > 0 else np.zeros(nlags + 1)


def autocorrelation_gap(chain: ChainState, observable="mean_height", t_burn: float = 100.0,
                        t_sample: float = 1e4, dt: float = 0.1, n_batches: int = 20) -> AutocorrResult:
    """Integrated and exponential autocorrelation times of an observable.

    The integrated time uses Sokal's self-consistent window (c = 6); its error
    is the batch-means spread of per-batch estimates.  The exponential time is
    read off the decay of the autocorrelation function between 0.5 and 0.05.
    """
    f = OBSERVABLES[observable] if isinstance(observable, str) else observable
    c0 = run(chain, chain.clock + t_burn)
    _, _, S = sample_path(c0, c0.clock + t_sample, dt)
    x = np.asarray(f(S), dtype=float)
    need = n_batches * 50
    if len(x) < need:
        raise InsufficientSamplesError(need * dt)
    nl = len(x) // n_batches

    def tau_of(y):
        rho = _acf(y, nl - 1)
        s = 0.5
        for w in range(1, len(rho)):
            s += rho[w]
            if w >= 6 * s:
                break
        return s * dt, rho

    tau, rho = tau_of(x)
    per = [tau_of(b)[0] for b in x[: nl * n_batches].reshape(n_batches, nl)]
    tau_err = float(np.std(per, ddof=1) / math.sqrt(n_batches))
    lags = np.arange(len(rho)) * dt
    first_bad = np.argmax(rho <= 0.05) if np.any(rho <= 0.05) else len(rho)
    sel = (rho < 0.5) & (np.arange(len(rho)) < first_bad) & (rho > 0.05)
    if sel.sum() >= 3:
        slope = np.polyfit(lags[sel], np.log(rho[sel]), 1)[0]
        tau_exp = -1.0 / slope if slope < 0 else np.inf
    else:
        tau_exp = tau
    m, me = batch_means(x, n_batches)
    return AutocorrResult(float(tau), tau_err, float(tau_exp), m, me, dt, rho[: min(len(rho), 2000)])
