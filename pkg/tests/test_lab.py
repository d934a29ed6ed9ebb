import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from soslab.exact import ExactModel, spectral_gap
from soslab.lab import (SWEEP_HEADER, BracketError, CriticalTable, LambdaC, bottleneck_radius,
                        bottleneck_set, component_sizes, distances, estimate_lambda_c, fe_difference,
                        gap_interval, lambda_sweep, layer_report, phi_star_scan, sampled_fe_difference,
                        window, window_id)
from soslab.lattice import build_box, build_torus, constant_boundary, general_region
from soslab.measure import Params


def test_window_examples():
    assert window(0, 1.0) == pytest.approx((math.exp(-2), math.exp(-1)))
    lo, hi = window(3, 4.0)
    assert lo == pytest.approx(math.exp(-56)) and hi == pytest.approx(math.exp(-52))
    with pytest.raises(ValueError):
        window(-1, 1.0)


@given(st.floats(0.3, 5.0), st.integers(0, 6))
def test_windows_disjoint_and_ordered(beta, i):
    lo0, hi0 = window(i, beta)
    lo1, hi1 = window(i + 1, beta)
    assert hi1 < lo0 < hi0
    a, b = gap_interval(i, beta)
    assert a == hi1 and b == lo0


def test_window_id():
    beta = 1.0
    assert window_id(math.exp(-1.5), beta) == 0
    assert window_id(math.exp(-5.5), beta) == 1
    assert window_id(math.exp(-3.0), beta) == -1
    assert window_id(0.9, beta) == -1


def test_distances():
    d = distances(0.5, [0.1, 0.7])
    assert d == pytest.approx((0.2, 0.4, 0.2))
    assert distances(0.05, [0.1, 0.7])[1] == math.inf
    assert distances(0.9, [0.1, 0.7])[0] == math.inf
    table = CriticalTable(1.0, 2, [LambdaC(0, 0.2, "exact_fe", 0.0)])
    assert distances(0.3, table) == pytest.approx((math.inf, 0.1, 0.1))
    with pytest.raises(ValueError):
        distances(0.1, [])


def test_fe_difference_sign_change():
    V = build_box(2)
    lo, hi = window(1, 3.0)[0], window(0, 3.0)[1]
    # the raised layer wins at small field and loses at large field
    assert fe_difference(V, 0, lo, 3.0, 4) > 0 > fe_difference(V, 0, hi, 3.0, 4)


def test_lambda_c_inside_gap_interval():
    est = estimate_lambda_c(0, 3.0, sizes=(1, 2))
    a, b = gap_interval(0, 3.0)
    assert a < est.value < b
    assert est.slope == pytest.approx(1.0, abs=0.05)
    assert est.err >= 0 and len(est.per_size) == 2


def test_bracket_error():
    with pytest.raises(BracketError):
        estimate_lambda_c(0, 3.0, sizes=(1,), bracket=(0.5, 0.9))


def test_sampled_fe_close_to_exact():
    V = build_box(1)
    p = Params(1.0, 0.05)
    est, se, qerr = sampled_fe_difference(V, 0, p, ceiling=4, t_sample=4000, seed=1)
    ref = fe_difference(V, 0, 0.05, 1.0, 4)
    assert abs(est - ref) < 4 * se + qerr + 1e-3


def test_bottleneck_trivial_cases():
    V = build_box(4)
    flat = np.zeros(len(V), int)
    m = bottleneck_set(flat, V, 1, 0)
    assert m.in_A and m.largest_ge == 0 and m.in_A_prime is None
    assert not bottleneck_set(flat + 1, V, 1, 24).in_A
    assert bottleneck_set(flat + 1, V, 1, 25).in_A
    one = flat.copy()
    one[3] = 1
    assert bottleneck_set(one, V, 1, 1).in_A and not bottleneck_set(one, V, 1, 0).in_A


def test_bottleneck_connectivity_pairing():
    T = build_torus(8)
    x = np.array([s[0] for s in T.sites])
    y = np.array([s[1] for s in T.sites])
    cheq = ((x + y) % 2).astype(int)
    m = bottleneck_set(cheq, T, 1, 1, geometry="torus")
    # 4-components of the ones are single sites, but the zeros form one 8-component
    assert m.in_A and not m.in_A_prime
    assert m.largest_le == 32


def test_torus_sets_disjoint(rng):
    n, r = 16, 2
    T = build_torus(n)
    for _ in range(300):
        phi = rng.integers(0, 3, len(T))
        m = bottleneck_set(phi, T, 1, r, geometry="torus")
        assert not (m.in_A and m.in_A_prime)


def test_component_sizes_wrap():
    T = build_torus(4)
    mask = np.array([s[0] in (0, 3) for s in T.sites])
    # the columns x = 0 and x = 3 touch across the seam
    assert sorted(component_sizes(T, mask, 4)) == [8]


def test_bottleneck_radius():
    assert bottleneck_radius(16, 0.0) == 2.0
    assert bottleneck_radius(16, 0.25) == 0.5


def test_phi_star_scan_single_site():
    V = general_region([(0, 0)])
    m = ExactModel(constant_boundary(V, 0, ceiling=1), Params(1.0, 0.3))
    sc = phi_star_scan(m, 1, [0, 1])
    assert sc.phi[0] == pytest.approx(0.5) and sc.phi[1] == math.inf
    assert sc.phi_star == pytest.approx(0.5) and sc.gap == pytest.approx(0.5)
    assert sc.cheeger_ok()


def test_phi_star_scan_box1():
    m = ExactModel(constant_boundary(build_box(1), 0, ceiling=1), Params(1.0, 0.2))
    sc = phi_star_scan(m, 1, [0, 1, 2, 4])
    assert sc.phi_star <= min(sc.phi) + 1e-12
    assert sc.gap <= sc.phi_star + 1e-12
    assert sc.mass[-1] == pytest.approx(1.0) and sc.phi[-1] == math.inf
    assert list(sc.mass) == sorted(sc.mass)


def test_layer_report_sums(rng):
    V = build_box(6)
    phi = rng.integers(0, 3, len(V))
    rep = layer_report(phi, V, 1)
    assert rep.fractions.sum() == pytest.approx(1.0)
    assert rep.ge_components.sum() == (phi >= 1).sum()
    assert rep.le_components.sum() == (phi <= 0).sum()
    assert len(rep.ge_diameters) == len(rep.ge_components)
    flat = layer_report(np.ones(len(V), int), V, 1)
    assert flat.modal_height == 1 and flat.loops["eq_k"].length == 24
    assert flat.loops["eq_k"].dist_to_boundary == 1


def test_sweep_continuity():
    V = build_box(1)
    grid = np.linspace(0.01, 0.5, 50)
    rows = lambda_sweep(V, 1.0, grid, "gap_exact", ceiling=2)
    vals = np.array([r.metric for r in rows])
    assert np.all(np.isfinite(vals)) and np.all(vals > 0)
    assert np.max(np.abs(np.diff(np.log(vals)))) < 0.1
    assert [r.window_id for r in rows] == [window_id(x, 1.0) for x in grid]


def test_sweep_schema_and_metrics():
    assert SWEEP_HEADER == ("lambda", "metric", "err_lo", "err_hi", "window_id")
    V = build_box(2)
    rows = lambda_sweep(V, 1.0, [0.05, 0.2], "coupling_time", ceiling=2, n_reps=9, seed=0)
    assert all(r.err_lo <= r.metric <= r.err_hi for r in rows)
    rows = lambda_sweep(V, 1.0, [0.05, 0.2], "escape_time", ceiling=2, n_reps=9, escape_r=1, seed=0)
    assert rows[0].metric <= rows[1].metric
    with pytest.raises(ValueError):
        lambda_sweep(V, 1.0, [0.1], "nope")


def test_torus_sweep_warns():
    with pytest.warns(UserWarning):
        lambda_sweep(build_torus(4), 1.0, [0.01], "coupling_time", ceiling=1, n_reps=2, t_max=50)
