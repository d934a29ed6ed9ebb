"""Row transfer matrices for log partition functions of small-width regions."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import logsumexp

from ..lattice import BoundaryData
from ..measure import Params
from .enumeration import ResourceError

ROW_STATE_CAP = 5000


def _row_states(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    if np.any(hi < lo):
        return np.zeros((0, len(lo)), dtype=np.int64)
    return np.array(list(itertools.product(*[range(a, b + 1) for a, b in zip(lo, hi)])),
                    dtype=np.int64).reshape(-1, len(lo))


def log_partition(bd: BoundaryData, p: Params, row_cap: int = ROW_STATE_CAP) -> float:
    """log of the sum of e^{-H} over the band, by a row-by-row transfer matrix.

    Works for any (non-periodic) region with finite ceilings; the cost is
    driven by the number of configurations of the widest row.
    """
    V = bd.region
    if V.periodic:
        raise ValueError("transfer matrices here handle open regions only")
    if len(V) == 0:
        return 0.0
    hi_all = bd.int_ceiling()
    lo_all = bd.floor.astype(np.int64)
    rows = {}
    for i, (x, y) in enumerate(V.sites):
        rows.setdefault(y, []).append(i)
    ys = sorted(rows)
    logv = None
    prev_idx = None
    prev_states = None
    for y in ys:
        idx = sorted(rows[y], key=lambda i: V.sites[i][0])
        lo, hi = lo_all[idx], hi_all[idx]
        n_states = int(np.prod((hi - lo + 1).clip(min=0)))
        if n_states > row_cap:
            raise ResourceError(f"row with {n_states} states exceeds the transfer cap {row_cap}")
        st = _row_states(lo, hi)
        if len(st) == 0:
            return -np.inf
        pos = {i: a for a, i in enumerate(idx)}
        # energy of the row on its own: field, horizontal bonds, and bonds to the boundary
        e = p.lam * st.sum(axis=1).astype(float)
        for a, i in enumerate(idx):
            for d in range(4):
                j = V.nbr[i, d]
                if j < 0:
                    e += p.beta * np.abs(st[:, a] - bd.bval[i, d])
                elif j in pos and j > i:
                    e += p.beta * np.abs(st[:, a] - st[:, pos[j]])
        if logv is None:
            logv = -e
        else:
            # vertical bonds to the previous row
            pairs = [(pa, pos[V.nbr[i, 2]]) for pa, i in enumerate(prev_idx)
                     if V.nbr[i, 2] >= 0 and V.nbr[i, 2] in pos]
            if pairs:
                cost = np.zeros((len(prev_states), len(st)))
                for pa, b in pairs:
                    cost += np.abs(prev_states[:, pa][:, None] - st[:, b][None, :])
                logv = logsumexp(logv[:, None] - p.beta * cost, axis=0) - e
            else:
                logv = logsumexp(logv) - e
        prev_idx, prev_states = idx, st
    return float(logsumexp(logv))
