import itertools
import math

import numpy as np
import pytest

from lrlace import spectral
from lrlace.kernels import LongRangeParams, build_kernel, nearest_neighbor_kernel
from lrlace.lattice import BoxSpec, LatticeField


def _direct_dft(values, M):
    d = values.ndim
    side = 2 * M + 1
    out = np.zeros(values.shape, dtype=complex)
    sites = list(itertools.product(range(-M, M + 1), repeat=d))
    for n in sites:
        k = 2 * np.pi * np.array(n) / side
        acc = 0j
        for x in sites:
            acc += np.exp(1j * np.dot(k, x)) * values[tuple(np.array(x) + M)]
        out[tuple(np.array(n) + M)] = acc
    return out


@pytest.mark.parametrize("d,M", [(1, 3), (2, 2)])
def test_fourier_matches_direct_sum(d, M):
    rng = np.random.default_rng(d)
    vals = rng.random((2 * M + 1,) * d)
    F = spectral.fourier_transform(LatticeField(BoxSpec(d, M), vals))
    np.testing.assert_allclose(F.values, _direct_dft(vals, M), atol=1e-12)


@pytest.mark.parametrize("d,M", [(1, 4), (2, 3), (3, 2)])
def test_symmetric_transform_matches_full(d, M):
    rng = np.random.default_rng(7)
    orth = rng.random((M + 1,) * d)
    f = LatticeField(BoxSpec(d, M), orth, symmetric=True)
    Fs = spectral.fourier_transform(f)
    Ff = spectral.fourier_transform(f.to_full())
    for n in itertools.product(range(M + 1), repeat=d):
        assert Fs.at(n) == pytest.approx(np.real(Ff.at(n)), abs=1e-12)
    back = spectral.inverse_fourier_transform(Fs)
    np.testing.assert_allclose(back.values, orth, atol=1e-13)


def test_padded_transform_total_is_mass():
    D, _ = build_kernel(LongRangeParams(2, 1.0, 2.0), BoxSpec(2, 6))
    F = spectral.fourier_transform(D, grid_M=15)
    assert F.at_zero() == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.abs(F.values) <= 1 + 1e-13)


@pytest.mark.parametrize("d,alpha,expected", [
    (3, 2.0, 1 / (4 * math.pi)),
    (4, 2.0, 1 / (4 * math.pi**2)),
    (3, 1.0, math.gamma(1.0) / (2 * math.pi**1.5 * math.gamma(0.5))),
])
def test_compute_gamma(d, alpha, expected):
    assert spectral.compute_gamma(d, alpha) == pytest.approx(expected, rel=1e-14)


def test_compute_gamma_rejects_low_dimension():
    with pytest.raises(ValueError):
        spectral.compute_gamma(2, 2.0)


def test_nearest_neighbor_symbol_closed_form():
    D = nearest_neighbor_kernel(BoxSpec(2, 3))
    k = np.array([0.1, 0.5, 1.3])
    np.testing.assert_allclose(spectral.box_axis_symbol(D, k), (1 - np.cos(k)) / 2, atol=1e-14)


def test_analytic_v2_matches_fit():
    params = LongRangeParams(4, 2.0, 5.0)
    fit = spectral.estimate_v(None, params)
    assert fit.v_alpha == pytest.approx(spectral.analytic_v2(params), rel=1e-3)


@pytest.mark.parametrize("variant", ["DirectPowerLaw", "CompoundZeta"])
def test_assumption_audit_passes_on_long_range(variant):
    params = LongRangeParams(3, 1.0, 3.0, variant)
    D, _ = build_kernel(params, BoxSpec(3, 24))
    audit = spectral.audit_assumption_hatD(D, params)
    assert audit.report.passed, audit.report.metrics
