import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrlace.kernels import LongRangeParams, build_kernel
from lrlace.lattice import BoxSpec, LatticeField
from lrlace.models import (IsingConfig, PercConfig, bell_number, bubble_triangle, critical_green_spectrum,
                           ising_two_point_exact, partition_weight, percolation_two_point, periodize,
                           saw_enumerate, saw_enumerate_dfs, saw_two_point, set_partitions, torus_kernel_matrix)


def _kernel(d, M, variant="DirectPowerLaw", L=1.0, alpha=1.0):
    D, _ = build_kernel(LongRangeParams(d, alpha, L, variant), BoxSpec(d, M))
    return D


@pytest.mark.parametrize("n", range(7))
def test_set_partitions_count(n):
    parts = list(set_partitions(n))
    assert len(parts) == bell_number(n) == len(set(parts))


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_mobius_weights_sum(n):
    # sum over partitions of mu(partition, top) is zero for n >= 2
    assert sum(partition_weight(p) for p in set_partitions(n)) == 0


@pytest.mark.parametrize("variant", ["DirectPowerLaw", "CompoundZeta"])
@pytest.mark.parametrize("d,M,N", [(1, 2, 5), (2, 1, 4)])
def test_saw_matches_depth_first_search(variant, d, M, N):
    D = _kernel(d, max(M, 2), variant)
    box = BoxSpec(d, M, torus=True)
    series = saw_enumerate(D, N, box)
    ref = saw_enumerate_dfs(D, N, box)
    np.testing.assert_allclose(series.coefficients, ref.reshape(series.coefficients.shape), atol=1e-14)


def test_saw_three_site_torus():
    D = LatticeField(BoxSpec(1, 1), np.array([0.5, 0.0, 0.5]))
    series = saw_enumerate(D, 3, BoxSpec(1, 1, torus=True))
    c = series.coefficients
    np.testing.assert_allclose(c[0], [0, 1, 0])
    np.testing.assert_allclose(c[1], [0.5, 0, 0.5])
    np.testing.assert_allclose(c[2], [0.25, 0, 0.25])
    np.testing.assert_allclose(c[3], [0, 0, 0], atol=1e-15)


def test_two_step_total_double_loop():
    D = _kernel(2, 2)
    box = BoxSpec(2, 2, torus=True)
    A = torus_kernel_matrix(periodize(D, 2))
    o = int(np.ravel_multi_index((2, 2), box.shape))
    ref = sum(A[o, y] * A[y, z] for y in range(A.shape[0]) for z in range(A.shape[0])
              if y != o and z != o and z != y)
    assert saw_enumerate(D, 2, box).coefficients[2].sum() == pytest.approx(ref, rel=1e-13)


def test_saw_two_point_checks():
    D = _kernel(2, 3)
    series = saw_enumerate(D, 4, BoxSpec(2, 3, torus=True))
    tp = saw_two_point(series, 0.4)
    assert all(v for k, v in tp.checks.items() if k != "truncation_fraction")
    np.testing.assert_allclose(saw_two_point(series, 0.0).field.values, series.coefficients[0])


def test_saw_rejects_intractable():
    with pytest.raises(ValueError):
        saw_enumerate(_kernel(2, 3), 7, BoxSpec(2, 3, torus=True))


def _three_cycle():
    return LatticeField(BoxSpec(1, 1), np.array([0.5, 0.0, 0.5]))


def test_percolation_three_cycle_closed_form():
    p, S = 1.0, 4000
    tp = percolation_two_point(_three_cycle(), PercConfig(BoxSpec(1, 1), p, S, seed=11))
    q = p / 2
    exact = q + (1 - q) * q * q
    est = tp.field.at((1,))
    assert abs(est - exact) <= 3 * tp.stderr[2] + 1e-12
    assert tp.field.at((0,)) == 1.0


def test_percolation_p_zero_is_delta():
    tp = percolation_two_point(_kernel(2, 3), PercConfig(BoxSpec(2, 3), 0.0, 10))
    expected = np.zeros((7, 7))
    expected[3, 3] = 1
    np.testing.assert_array_equal(tp.field.values, expected)


def test_percolation_seed_determinism():
    D = _kernel(2, 3)
    a = percolation_two_point(D, PercConfig(BoxSpec(2, 3), 0.8, 50, seed=5)).field.values
    b = percolation_two_point(D, PercConfig(BoxSpec(2, 3), 0.8, 50, seed=5)).field.values
    c = percolation_two_point(D, PercConfig(BoxSpec(2, 3), 0.8, 50, seed=6)).field.values
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(0.05, 0.9), st.integers(0, 2**32))
def test_percolation_coupling_monotone(p1, p2, seed):
    lo, hi = sorted((p1, p2))
    D = _kernel(1, 4)
    box = BoxSpec(1, 4)
    a = percolation_two_point(D, PercConfig(box, lo, 20, seed)).field.values
    b = percolation_two_point(D, PercConfig(box, hi, 20, seed)).field.values
    assert np.all(a <= b)


def test_percolation_rejects_large_p():
    D = _kernel(1, 1)
    with pytest.raises(ValueError):
        percolation_two_point(D, PercConfig(BoxSpec(1, 1), 3.0, 1))


def test_ising_beta_zero_is_delta():
    vol = [(0,), (1,), (2,)]
    J = np.ones((3, 3)) - np.eye(3)
    np.testing.assert_array_equal(ising_two_point_exact(IsingConfig(vol, 0.0, J)), [1, 0, 0])


@pytest.mark.parametrize("beta", [0.1, 0.7, 2.0])
def test_ising_two_spins(beta):
    J = np.array([[0, 1.3], [1.3, 0]])
    g = ising_two_point_exact(IsingConfig([(0,), (1,)], beta, J))
    assert g[1] == pytest.approx(np.tanh(beta * 1.3), rel=1e-14)


def test_ising_griffiths_monotone():
    D = _kernel(2, 2)
    vol = list(itertools.product(range(-1, 2), repeat=2))
    vol.remove((0, 0))
    vol = [(0, 0)] + vol
    prev = None
    for beta in (0.2, 0.5, 1.0):
        g = ising_two_point_exact(IsingConfig.from_kernel(D, 0.9, beta, vol))
        assert np.all(g >= 0) and g[0] == 1.0
        if prev is not None:
            assert np.all(g >= prev - 1e-14)
        prev = g


def test_ising_kernel_coupling_relation():
    D = _kernel(1, 2)
    cfg = IsingConfig.from_kernel(D, 0.5, 0.8, [(0,), (1,)])
    assert np.tanh(cfg.beta * cfg.couplings[0, 1]) == pytest.approx(0.5 * D.at((1,)))
    assert ising_two_point_exact(cfg)[1] == pytest.approx(0.5 * D.at((1,)), rel=1e-13)


def test_ising_rejects_large_volume():
    with pytest.raises(ValueError):
        IsingConfig(np.arange(25)[:, None], 1.0, np.zeros((25, 25)))


def test_bubble_triangle_of_delta():
    G = LatticeField.delta(BoxSpec(3, 2, torus=True))
    bt = bubble_triangle(G)
    assert bt.bubble == pytest.approx(1.0) and bt.triangle == pytest.approx(1.0)


def test_bubble_spectral_matches_space():
    rng = np.random.default_rng(2)
    orth = rng.random((4, 4))
    G = LatticeField(BoxSpec(2, 3, torus=True), orth, symmetric=True)
    from lrlace.spectral import fourier_transform
    a, b = bubble_triangle(G), bubble_triangle(fourier_transform(G))
    assert a.bubble == pytest.approx(b.bubble, rel=1e-12)
    assert a.triangle == pytest.approx(b.triangle, rel=1e-12)


def test_critical_spectrum_pole():
    F = critical_green_spectrum(_kernel(2, 4))
    assert np.isinf(F.at_zero()) and np.all(np.real(F.values[np.isfinite(F.values)]) > 0)
