import numpy as np
import pytest

from lrlace.green import GreenMethod, GreenSpec, green_function, resolvent_residual
from lrlace.kernels import LongRangeParams, build_kernel
from lrlace.lattice import BoxSpec


@pytest.fixture(scope="module")
def kernel2d():
    params = LongRangeParams(2, 1.5, 2.0)
    D, _ = build_kernel(params, BoxSpec(2, 12))
    return params, D


def test_p_zero_is_delta(kernel2d):
    params, D = kernel2d
    S = green_function(D, GreenSpec(0.0, GreenMethod.FourierInversion, params))
    assert S.at((0, 0)) == pytest.approx(1.0) and S.total() == pytest.approx(1.0)
    assert np.count_nonzero(np.abs(S.values) > 1e-14) == 1


@pytest.mark.parametrize("p", [0.3, 0.9])
def test_resolvent_and_total(kernel2d, p):
    params, D = kernel2d
    S = green_function(D, GreenSpec(p, GreenMethod.FourierInversion, params))
    assert resolvent_residual(S, D, p)["relative"] < 1e-12
    assert S.total() == pytest.approx(1 / (1 - p), rel=1e-12)
    assert S.min() >= 0


@pytest.mark.parametrize("method", [GreenMethod.NeumannSeries, GreenMethod.SplitSeries])
def test_methods_agree(kernel2d, method):
    params, D = kernel2d
    ref = green_function(D, GreenSpec(0.7, GreenMethod.FourierInversion, params))
    S = green_function(D, GreenSpec(0.7, method, params))
    np.testing.assert_allclose(S.values, ref.values, atol=1e-12)


@pytest.mark.parametrize("d,alpha", [(2, 2.0), (1, 1.0), (2, 3.0)])
def test_p_one_rejected_below_critical_dimension(d, alpha):
    with pytest.raises(ValueError):
        GreenSpec(1.0, GreenMethod.FourierInversion, LongRangeParams(d, alpha, 1.0))


def test_neumann_rejected_at_p_one():
    with pytest.raises(ValueError):
        GreenSpec(1.0, GreenMethod.NeumannSeries, LongRangeParams(3, 1.0, 1.0))


@pytest.mark.parametrize("p", [-0.1, 1.1])
def test_p_out_of_range(p):
    with pytest.raises(ValueError):
        GreenSpec(p, GreenMethod.FourierInversion, LongRangeParams(3, 1.0, 1.0))


def test_critical_green_function_positive_and_decreasing():
    params = LongRangeParams(4, 2.0, 3.0)
    D, _ = build_kernel(params, BoxSpec(4, 16))
    S = green_function(D, GreenSpec(1.0, GreenMethod.FourierInversion, params))
    axis = [S.at((r, 0, 0, 0)) for r in range(1, 9)]
    assert S.at((0, 0, 0, 0)) > 1
    assert all(a > b > 0 for a, b in zip(axis, axis[1:]))
