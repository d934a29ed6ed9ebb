import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from soslab.exact import ExactModel
from soslab.lattice import boundary_from_mapping, build_box, constant_boundary, general_region
from soslab.measure import (BandError, ParameterError, Params, conditional_cdf, hamiltonian, local_delta,
                            max_height_tail_check, ring_law, site_conditional)

SITE = general_region([(0, 0)])


def single_site(nbrs=(0, 0, 0, 0), floor=0, ceiling=math.inf):
    phi = {out: h for (_, _, out), h in zip(SITE.outer_slots, nbrs)}
    return boundary_from_mapping(SITE, phi, floor=floor, ceiling=ceiling)


def test_params_validation():
    with pytest.raises(ParameterError):
        Params(0.0, 0.1)
    with pytest.raises(ParameterError):
        Params(1.0, -0.1)
    with pytest.raises(ParameterError):
        Params(1.0, 1.5)
    assert Params(1.0, 1.5, allow_large_field=True).lam == 1.5


@pytest.mark.parametrize("beta,lam", [(1.0, 0.0), (2.0, 0.3), (0.7, 1.0)])
def test_hamiltonian_examples(beta, lam):
    bd = constant_boundary(build_box(1), 0)
    p = Params(beta, lam)
    assert hamiltonian(np.zeros(4, int), bd, p) == 0
    assert hamiltonian(np.ones(4, int), bd, p) == pytest.approx(8 * beta + 4 * lam)
    assert hamiltonian(np.array([1, 0, 0, 0]), bd, p) == pytest.approx(4 * beta + lam)


def test_hamiltonian_band_violation():
    bd = constant_boundary(build_box(1), 0, ceiling=1)
    with pytest.raises(BandError):
        hamiltonian(np.array([2, 0, 0, 0]), bd, Params(1, 0))


def test_local_delta_examples():
    p = Params(1.3, 0.4)
    bd = constant_boundary(build_box(2), 0)
    phi = np.zeros(9, int)
    c = bd.region.pos((0, 0))
    assert local_delta(phi, c, 0, bd, p) == 0
    assert local_delta(phi, c, 1, bd, p) == pytest.approx(4 * p.beta + p.lam)
    bd1 = constant_boundary(build_box(2), 1)
    assert local_delta(np.ones(9, int), c, 0, bd1, p) == pytest.approx(4 * p.beta - p.lam)


@given(st.integers(0, 2**32 - 1))
def test_local_delta_consistency(seed):
    rng = np.random.default_rng(seed)
    V = build_box(3)
    bd = constant_boundary(V, int(rng.integers(0, 3)), ceiling=6)
    p = Params(float(rng.uniform(0.2, 3)), float(rng.uniform(0, 1)))
    phi = rng.integers(0, 7, len(V))
    v = int(rng.integers(len(V)))
    h = int(rng.integers(0, 7))
    new = phi.copy()
    new[v] = h
    d = hamiltonian(new, bd, p) - hamiltonian(phi, bd, p)
    assert local_delta(phi, v, h, bd, p) == pytest.approx(d, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("beta,lam", [(1.0, 0.2), (2.0, 0.0), (0.5, 0.9)])
def test_site_conditional_single_site(beta, lam):
    p = Params(beta, lam)
    hs, pr = site_conditional(np.zeros(1, int), 0, single_site(ceiling=1), p)
    w = math.exp(-4 * beta - lam)
    assert list(hs) == [0, 1]
    assert pr[1] == pytest.approx(w / (1 + w), rel=1e-12)
    assert pr.sum() == pytest.approx(1, abs=1e-12)


def test_stay_probability_low_temperature():
    bd = single_site((3, 3, 3, 3))
    hs, pr = site_conditional(np.array([3]), 0, bd, Params(40.0, 0.0))
    assert pr[list(hs).index(3)] > 1 - 1e-12


def test_full_column_geometric():
    beta = 0.6
    hs, pr = site_conditional(np.zeros(1, int), 0, single_site(), Params(beta, 0.0), "full_column")
    q = math.exp(-4 * beta)
    exact = (1 - q) * q ** hs
    assert np.allclose(pr[:-1], exact[:-1], rtol=1e-12)
    # last entry carries the folded tail
    assert pr[-1] == pytest.approx(q ** hs[-1], rel=1e-9)
    assert pr.sum() == pytest.approx(1, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["pm_one", "full_column"]))
def test_conditional_normalised(seed, move_set):
    rng = np.random.default_rng(seed)
    nb = rng.integers(0, 6, 4)
    ceiling = math.inf if rng.random() < 0.5 else int(rng.integers(2, 8))
    bd = single_site(tuple(nb), ceiling=ceiling)
    phi = np.array([int(rng.integers(0, min(ceiling, 7) + 1))])
    hs, pr = site_conditional(phi, 0, bd, Params(float(rng.uniform(0.1, 3)), float(rng.uniform(0, 1))), move_set)
    assert np.all((pr >= 0) & (pr <= 1))
    assert pr.sum() == pytest.approx(1, abs=1e-12)
    hs, pr = ring_law(phi, 0, bd, Params(1.0, 0.3), move_set)
    assert pr.sum() == pytest.approx(1, abs=1e-12)


def _dominance_pair(rng):
    beta = float(rng.uniform(0.1, 3.0))
    lam = float(rng.uniform(0, 1))
    lam2 = float(rng.uniform(0, lam))
    nb = rng.integers(0, 5, 4)
    nb2 = nb + rng.integers(0, 3, 4)
    a = int(rng.integers(0, 3))
    a2 = a + int(rng.integers(0, 2))
    b = a2 + int(rng.integers(1, 5))
    b2 = b + int(rng.integers(0, 3))
    if rng.random() < 0.3:
        b, b2 = b, math.inf
    return (Params(beta, lam), single_site(tuple(nb), a, b)), (Params(beta, lam2), single_site(tuple(nb2), a2, b2))


def count_dominance_violations(n, seed):
    """Single-site CDF dominance of the primed (higher) law over the unprimed one."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n):
        (p, bd), (p2, bd2) = _dominance_pair(rng)
        ts = np.arange(0, 20)
        h1, q1 = site_conditional(np.array([bd.floor[0]]), 0, bd, p, "full_column")
        h2, q2 = site_conditional(np.array([bd2.floor[0]]), 0, bd2, p2, "full_column")
        bad += int(np.any(conditional_cdf(h2, q2, ts) > conditional_cdf(h1, q1, ts) + 1e-12))
        c = int(bd2.floor[0])  # a common current height inside both bands
        if c <= bd.ceiling[0]:
            h1, q1 = ring_law(np.array([c]), 0, bd, p)
            h2, q2 = ring_law(np.array([c]), 0, bd2, p2)
            bad += int(np.any(conditional_cdf(h2, q2, ts) > conditional_cdf(h1, q1, ts) + 1e-12))
    return bad


def test_cdf_dominance_small():
    assert count_dominance_violations(500, 7) == 0


@pytest.mark.parametrize("region,H", [("site", 1), ("site", 3), ("box1", 1), ("box1", 2)])
def test_detailed_balance(region, H):
    V = SITE if region == "site" else build_box(1)
    m = ExactModel(constant_boundary(V, 0, ceiling=H), Params(1.1, 0.3))
    assert m.detailed_balance_error() < 1e-10


def test_tail_check_rule_of_three():
    s = np.zeros((200, 5), int)
    t = max_height_tail_check(s, 4, beta=2.0)
    assert t.estimate == 0 and t.ci_high == pytest.approx(3 / 200)
    assert t.bound == pytest.approx(math.exp(-8))


def test_tail_check_single_site_exact():
    p = Params(0.4, 0.1)
    bd = single_site(ceiling=6)
    m = ExactModel(bd, p)
    exact = float(m.pi[m.states[:, 0] >= 2].sum())
    q = math.exp(-4 * p.beta - p.lam)
    closed = (q ** 2 - q ** 7) / (1 - q ** 7)
    assert exact == pytest.approx(closed, rel=1e-12)
    rng = np.random.default_rng(3)
    draws = rng.choice(m.states[:, 0], size=20000, p=m.pi)[:, None]
    t = max_height_tail_check(draws, 2)
    assert t.ci_low <= exact <= t.ci_high
