import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse
from scipy.special import logsumexp

from soslab.contours import UP, NonElemCluster, contour_of
from soslab.exact import (ExactModel, ReducibleChainError, ResourceError, bottleneck_ratio, cheeger,
                          cheeger_exact, cluster_bound_log, cluster_expansion_check, cluster_weight,
                          congestion, elementary_partition_function, enumerate_model, enumerate_states,
                          log_partition, partition_function, raw_gap, renormalized_bruteforce,
                          renormalized_partition_function, renormalized_weight, spectral_gap,
                          state_count, truncated_weight, tv_marginal_distance, two_contour_clusters)
from soslab.exact.enumeration import energies
from soslab.exact.spectral import _check_irreducible, edge_flow
from soslab.lattice import boundary_from_mapping, build_box, constant_boundary, general_region
from soslab.measure import Params

SITE = general_region([(0, 0)])


def test_enumeration_counts():
    assert len(enumerate_states(constant_boundary(SITE, 0, ceiling=1))) == 2
    bd = constant_boundary(build_box(1), 0, ceiling=1)
    assert state_count(bd) == 16
    assert len(enumerate_states(bd)) == 16
    with pytest.raises(ResourceError):
        enumerate_states(constant_boundary(build_box(3), 0, ceiling=3), cap=1000)


@pytest.mark.parametrize("beta,lam", [(1.0, 0.1), (2.0, 0.5), (0.5, 0.0)])
def test_single_site_measure(beta, lam):
    m = ExactModel(constant_boundary(SITE, 0, ceiling=1), Params(beta, lam))
    q = math.exp(-4 * beta - lam)
    assert m.pi[0] == pytest.approx(1 / (1 + q))
    assert m.log_Z == pytest.approx(math.log1p(q))


@pytest.mark.parametrize("beta,lam", [(1.0, 0.1), (2.0, 0.5)])
def test_single_site_signings(beta, lam):
    p = Params(beta, lam)
    q = math.exp(-4 * beta - lam)
    assert partition_function(SITE, "plus", 1, p, 2).log == pytest.approx(-lam + math.log1p(q))
    assert partition_function(SITE, "minus", 1, p, 2).log == pytest.approx(
        math.log(math.exp(-lam) + math.exp(-4 * beta)))
    assert partition_function(SITE, "pinned", 1, p, 2).log == pytest.approx(-lam)
    assert partition_function(SITE, "free", 0, p, 3).log == pytest.approx(math.log1p(q + q * q + q ** 3))


def test_ceiling_tail_bound():
    p = Params(1.5, 0.1)
    V = build_box(1)
    lo = partition_function(V, "free", 0, p, 2)
    ref = partition_function(V, "free", 0, p, 6).log
    assert lo.log <= ref <= lo.log_upper
    assert lo.tail_bound >= math.expm1(ref - lo.log)


def test_transfer_matches_enumeration():
    V = build_box(2)
    outer = {o: (i % 3) for i, (_, _, o) in enumerate(V.outer_slots)}
    bd = boundary_from_mapping(V, outer, floor=0, ceiling=2)
    p = Params(0.9, 0.2)
    st_ = enumerate_states(bd)
    assert log_partition(bd, p) == pytest.approx(float(logsumexp(-energies(st_, bd, p))), rel=1e-12)


@pytest.mark.parametrize("V", [SITE, build_box(1), general_region([(0, 0), (1, 0), (1, 1)])])
@pytest.mark.parametrize("signing,h", [("plus", 0), ("free", 1), ("plus", 1), ("minus", 1), ("pinned", 1)])
def test_renormalized_equals_plain(V, signing, h):
    p = Params(2.0, 0.3)
    plain = partition_function(V, signing, h, p, 4).log
    rn = renormalized_partition_function(V, signing, h, p, 4, "rn").log
    assert rn == pytest.approx(plain, abs=1e-9)


def test_renormalized_bruteforce_agrees():
    p = Params(1.5, 0.2)
    V = build_box(1)
    for signing, h in (("plus", 0), ("free", 1)):
        a = renormalized_partition_function(V, signing, h, p, 3, "rn").log
        assert renormalized_bruteforce(V, signing, h, p, 3, "rn") == pytest.approx(a, abs=1e-10)


def test_singleton_weight():
    p = Params(2.0, 0.3)
    lw = renormalized_weight(frozenset({(0, 0)}), 0, p, 40)
    assert lw == pytest.approx(-4 * 2.0 - 0.3, abs=1e-9)
    # down weight at height 1: -4 beta + log Z_{-,0}/Z_{-,1} on a single site
    lw = renormalized_weight(contour_of([(0, 0)], "down", 0), 1, p, 40)
    z1 = math.exp(-0.3) + math.exp(-8.0)
    assert lw == pytest.approx(-8.0 - math.log(z1), abs=1e-9)


def test_truncation_inactive_at_large_beta():
    p = Params(7.0, 0.1)
    V = build_box(1)
    for I in ([(0, 0)], [(0, 0), (1, 0)], V.sites):
        I = frozenset(I)
        assert truncated_weight(I, 0, p, 4) == renormalized_weight(I, 0, p, 4)
    a = renormalized_partition_function(V, "plus", 0, p, 4, "tr").log
    b = renormalized_partition_function(V, "plus", 0, p, 4, "rn").log
    assert a == pytest.approx(b, abs=1e-12)
    for beta in (1.0, 5.5, 9.0):
        p = Params(beta, 0.1)
        lw = truncated_weight(frozenset({(0, 0)}), 0, p, 4)
        assert lw == min(renormalized_weight(frozenset({(0, 0)}), 0, p, 4), -(beta - 5) * 4)


def test_elementary_equals_renormalized_elementary():
    # lambda = 0.6: every contour of diameter >= 2 is non-elementary; box(1) with plus signing
    p = Params(1.2, 0.6)
    V = build_box(1)
    el = elementary_partition_function(V, "plus", 0, p, 4).log
    rel = renormalized_partition_function(V, "plus", 0, p, 4, "rn_elem").log
    assert rel == pytest.approx(el, abs=1e-9)
    assert el < partition_function(V, "plus", 0, p, 4).log


@pytest.mark.parametrize("V,signing,h", [(build_box(1), "plus", 0), (build_box(1), "free", 1),
                                         (general_region([(0, 0), (1, 0), (2, 0), (1, 1)]), "plus", 1)])
def test_cluster_expansion_exact(V, signing, h):
    p = Params(1.0, 0.6)
    chk = cluster_expansion_check(V, signing, h, p, 3)
    assert chk.max_group_error < 1e-9
    assert chk.log_Z_expansion == pytest.approx(chk.log_Z, abs=1e-9)
    assert chk.log_Z_b2 == pytest.approx(chk.log_Z, abs=1e-9)
    assert chk.log_Z == pytest.approx(partition_function(V, signing, h, p, 3).log, abs=1e-9)


def test_single_contour_cluster_weight():
    # one non-elementary up contour around box(1): weight -beta|g| + log Z^el_{+,1,Int} - log Z^rn.el_{0,Int}
    p = Params(1.0, 0.6)
    V = build_box(1)
    g = contour_of(V.sites, UP, 1)
    cl = NonElemCluster(g, [g], {g: []}, {g: g.interior})
    ref = (-8.0 + elementary_partition_function(V, "plus", 1, p, 3).log
           - renormalized_partition_function(V, "plus", 0, p, 3, "rn_elem").log)
    assert cluster_weight(cl, 0, p, 3) == pytest.approx(ref, abs=1e-9)


def test_cluster_bound_holds():
    p = Params(2.5, 0.6)
    V = general_region([(x, y) for x in range(3) for y in range(2)])
    cls = two_contour_clusters(V, 1, p)
    assert cls
    for cl in cls:
        assert cluster_weight(cl, 1, p, 4) <= cluster_bound_log(cl, 1, p) + 1e-12


def small_models():
    p = Params(1.0, 0.2)
    out = []
    for kernel in ("pm_one", "full_column"):
        out.append(ExactModel(constant_boundary(build_box(1), 0, ceiling=2), p, kernel))
        out.append(ExactModel(constant_boundary(general_region([(0, 0), (1, 0), (1, 1)]), 1, ceiling=2),
                              Params(0.7, 0.5), kernel))
    return out


@pytest.mark.parametrize("m", small_models(), ids=lambda m: f"{m.kernel}-{len(m)}")
def test_reversibility_and_gap(m):
    assert m.detailed_balance_error() < 1e-12
    assert abs(m.pi @ m.generator.toarray()).max() < 1e-14
    g = spectral_gap(m)
    assert g.residual < 1e-12
    assert g.gap == pytest.approx(raw_gap(m), rel=1e-8)
    A = m.states[:, 0] > 0
    a, b = edge_flow(m, A)
    assert a == pytest.approx(b, rel=1e-12)


def test_gap_relabeling_invariant():
    p = Params(1.0, 0.3)
    V1 = build_box(1)
    V2 = general_region([(x + 5, y - 3) for x, y in V1.sites])
    g1 = spectral_gap(ExactModel(constant_boundary(V1, 0, ceiling=2), p)).gap
    g2 = spectral_gap(ExactModel(constant_boundary(V2, 0, ceiling=2), p)).gap
    assert g1 == pytest.approx(g2, rel=1e-10)


@pytest.mark.parametrize("kernel", ["pm_one", "full_column"])
def test_sparse_gap_matches_dense(kernel):
    m = ExactModel(constant_boundary(build_box(2), 0, ceiling=1), Params(3.0, 0.01), kernel)
    g = spectral_gap(m, dense_cap=0)
    assert g.method == "lanczos"
    assert g.gap == pytest.approx(spectral_gap(m).gap, rel=1e-10)


def test_sparse_gap_large_instance():
    # 3^9 states: must stay cheap (a sparse LU of this generator does not)
    m = ExactModel(constant_boundary(build_box(2), 0, ceiling=2), Params(2.0, 0.1))
    g = spectral_gap(m)
    assert g.method == "lanczos" and 0 < g.gap < 1


@pytest.mark.parametrize("kernel,phi", [("full_column", 1.0), ("pm_one", 0.5)])
def test_two_state_bottleneck(kernel, phi):
    m = ExactModel(constant_boundary(SITE, 0, ceiling=1), Params(1.0, 0.4), kernel)
    best, A = cheeger(m)
    assert best == pytest.approx(phi)
    assert spectral_gap(m).gap == pytest.approx(phi)
    assert bottleneck_ratio(m, np.array([True, True])) == math.inf


@pytest.mark.parametrize("m", small_models()[:2], ids=["box1", "bent"])
def test_cheeger_inequalities(m):
    gap = spectral_gap(m).gap
    best, A = cheeger(m) if len(m) <= 22 else cheeger_exact(m)
    N = len(m.region)
    assert gap <= best + 1e-12
    assert gap >= best ** 2 / (8 * N)
    lv, _ = cheeger(m, "level_sets", observable=lambda s: s.sum(axis=1))
    assert lv >= best - 1e-12


def test_cheeger_exact_matches_scan():
    m = ExactModel(constant_boundary(general_region([(0, 0), (1, 0)]), 0, ceiling=3), Params(1.0, 0.3))
    assert len(m) == 16
    a, _ = cheeger(m)
    b, _ = cheeger_exact(m)
    assert b == pytest.approx(a, rel=1e-8)


def test_congestion_bounds_relaxation_time():
    for m in small_models():
        if m.kernel == "pm_one":
            assert congestion(m) >= 1 / spectral_gap(m).gap - 1e-9


def test_congestion_rejects_full_column():
    with pytest.raises(ValueError):
        congestion(small_models()[2])


def test_tv_marginal_distance():
    V = build_box(1)
    p = Params(1.0, 0.2)
    m0 = enumerate_model(V, constant_boundary(V, 0, ceiling=2), p)
    m1 = enumerate_model(V, constant_boundary(V, 1, ceiling=2), p)
    w = [(0, 0)]
    assert tv_marginal_distance(m0, m0, w) == 0.0
    a, b = m0.marginal(w), m1.marginal(w)
    ref = 0.5 * sum(abs(a.get((h,), 0) - b.get((h,), 0)) for h in range(3))
    assert tv_marginal_distance(m0, m1, w) == pytest.approx(ref)
    assert 0 < ref < 1


def test_reducible_detected():
    L = sparse.csr_matrix(np.array([[-1.0, 1.0, 0], [1.0, -1.0, 0], [0, 0, 0.0]]))
    with pytest.raises(ReducibleChainError):
        _check_irreducible(L)


@settings(max_examples=15)
@given(st.floats(0.3, 3.0), st.floats(0.0, 1.0), st.integers(0, 2))
def test_transfer_matches_enumeration_property(beta, lam, k):
    bd = constant_boundary(build_box(2), k, ceiling=k + 1)
    p = Params(beta, lam)
    ref = float(logsumexp(-energies(enumerate_states(bd), bd, p)))
    assert log_partition(bd, p) == pytest.approx(ref, rel=1e-10, abs=1e-10)
