import math

import numpy as np
import pytest

from lrlace.kernels import (KernelVariant, LongRangeParams, build_compound_zeta_kernel, build_kernel,
                            kernel_audit, nearest_neighbor_kernel, power_law_lattice_sum)
from lrlace.lattice import BoxSpec, HALF_PI, reg_norm


@pytest.mark.parametrize("variant", ["DirectPowerLaw", "CompoundZeta"])
@pytest.mark.parametrize("d,alpha,L,M", [(1, 1.5, 2, 10), (2, 2.0, 3, 12), (3, 0.8, 1, 6)])
def test_kernel_normalized_nonnegative(variant, d, alpha, L, M):
    D, tail = build_kernel(LongRangeParams(d, alpha, L, variant), BoxSpec(d, M))
    assert D.total() == pytest.approx(1.0, abs=1e-13)
    assert D.min() >= 0
    assert 0 <= tail.truncated_mass < 0.5
    assert kernel_audit(D).passed


def test_power_law_values_hand_formula():
    p = LongRangeParams(2, 2.0, 2.0)
    D, _ = build_kernel(p, BoxSpec(2, 3), symmetric=False)
    raw = {x: 0.0 if x == (0, 0) else reg_norm(x, 2.0) ** -4 for x in
           [(i, j) for i in range(-3, 4) for j in range(-3, 4)]}
    Z = sum(raw.values())
    for x, v in raw.items():
        assert D.at(x) == pytest.approx(v / Z, rel=1e-13)
    assert D.at((0, 0)) == 0.0


def test_power_law_lattice_sum_one_dim():
    # d=1, alpha=1, L=1: sum_{x != 0} (pi/2 |x|)^{-2} = 2 (2/pi)^2 zeta(2)
    ref = 2 * (2 / math.pi) ** 2 * math.pi**2 / 6
    assert power_law_lattice_sum(1, 1.0, 1.0) == pytest.approx(ref, rel=1e-6)


def test_compound_zeta_direct_oracle():
    # d=1, L=1 uniform profile: U = (delta_{-1} + delta_{1}) / 2; D = sum_t t^{-s} U^{*t} / zeta(s)
    p = LongRangeParams(1, 2.0, 1.0, KernelVariant.CompoundZeta, t_max=40)
    M = 6
    D, tail = build_compound_zeta_kernel(p, BoxSpec(1, M), symmetric=False, pad=60)
    s = 2.0
    width = 2 * 41 + 1
    walk = np.zeros(width)
    walk[41] = 1.0
    acc = np.zeros(width)
    U = np.array([0.5, 0.0, 0.5])
    for t in range(1, 41):
        walk = np.convolve(walk, U, mode="same")
        acc += walk / t**s
    box = acc[41 - M:41 + M + 1]
    np.testing.assert_allclose(D.values, box / box.sum(), rtol=1e-11, atol=1e-15)


def test_nearest_neighbor_kernel():
    D = nearest_neighbor_kernel(BoxSpec(3, 2))
    assert D.total() == pytest.approx(1.0)
    assert D.at((0, 1, 0)) == pytest.approx(1 / 6)
    assert D.at((1, 1, 0)) == 0.0


@pytest.mark.parametrize("kw", [dict(alpha=0), dict(L=0.5), dict(d=0), dict(profile="nope")])
def test_params_validation(kw):
    args = dict(d=2, alpha=2.0, L=2.0)
    args.update(kw)
    with pytest.raises(ValueError):
        LongRangeParams(**args)


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        build_kernel(LongRangeParams(2, 2.0, 1.0), BoxSpec(2, 0))


def test_low_resolution_flag():
    assert LongRangeParams(2, 2.0, 2.0).low_resolution
    assert not LongRangeParams(2, 2.0, 3.0).low_resolution
