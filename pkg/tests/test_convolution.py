import numpy as np
import pytest

from lrlace.convolution import (ConvolutionPlan, Method, audit_assumption_Dn, convolve, leakage_bound,
                                n_step)
from lrlace.kernels import LongRangeParams, build_kernel, nearest_neighbor_kernel
from lrlace.lattice import BoxSpec, LatticeField


def test_two_step_nearest_neighbor_one_dim():
    D = nearest_neighbor_kernel(BoxSpec(1, 3)).to_full()
    D2 = n_step(D, 2, ConvolutionPlan(D.box, padding=0))
    expected = np.array([0, 0.25, 0, 0.5, 0, 0.25, 0])
    np.testing.assert_allclose(D2.values, expected, atol=1e-15)


def test_n_step_zero_is_delta():
    D, _ = build_kernel(LongRangeParams(2, 1.0, 1.0), BoxSpec(2, 3))
    D0 = n_step(D, 0)
    assert D0.at((0, 0)) == 1.0 and D0.total() == 1.0


@pytest.mark.parametrize("n", [1, 2, 3])
def test_direct_and_spectral_agree(n):
    D, _ = build_kernel(LongRangeParams(2, 1.5, 1.0), BoxSpec(2, 3), symmetric=False)
    plan_s = ConvolutionPlan(D.box, padding=3 * n, method=Method.Spectral)
    plan_d = ConvolutionPlan(D.box, padding=3 * n, method=Method.Direct)
    a, b = n_step(D, n, plan_s), n_step(D, n, plan_d)
    np.testing.assert_allclose(a.values, b.values, atol=1e-14)


def test_direct_small_oracle():
    # D(+-1)=1/2 on a padded window: D^{*3} is binomial, reported on the box -1..1
    D = LatticeField(BoxSpec(1, 1), np.array([0.5, 0.0, 0.5]))
    D3 = n_step(D, 3, ConvolutionPlan(D.box, padding=2, method=Method.Direct))
    np.testing.assert_allclose(D3.values, [3 / 8, 0, 3 / 8], atol=1e-15)


def test_torus_convolution_conserves_mass():
    D, _ = build_kernel(LongRangeParams(3, 2.0, 2.0), BoxSpec(3, 5))
    D4 = n_step(D, 4, ConvolutionPlan.torus(D.box))
    assert D4.total() == pytest.approx(1.0, abs=1e-13)
    assert D4.min() >= 0


def test_convolve_commutes():
    rng = np.random.default_rng(3)
    box = BoxSpec(2, 4, torus=True)
    f, g = LatticeField(box, rng.random(box.shape)), LatticeField(box, rng.random(box.shape))
    np.testing.assert_allclose(convolve(f, g).values, convolve(g, f).values, atol=1e-12)


def test_leakage_bound_monotone_in_padding():
    D, _ = build_kernel(LongRangeParams(2, 1.0, 2.0), BoxSpec(2, 8))
    b = [leakage_bound(D, 4, 8 + pad) for pad in (0, 8, 32)]
    assert b[0] >= b[1] >= b[2]


def test_plan_rejects_padding_on_torus():
    with pytest.raises(ValueError):
        ConvolutionPlan(BoxSpec(2, 3, torus=True), padding=1)


def test_nearest_neighbor_fails_long_range_form():
    params = LongRangeParams(2, 2.0, 1.0, "NearestNeighbor")
    D = nearest_neighbor_kernel(BoxSpec(2, 16))
    report = audit_assumption_Dn(D, params, n_max=4, grid_M=16)
    assert not report.passed
