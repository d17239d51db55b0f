import numpy as np
import pytest

from lrlace.green import GreenMethod, GreenSpec, green_function
from lrlace.kernels import LongRangeParams, build_kernel
from lrlace.lace import (EffectiveStep, LaceModel, effective_step, extract_pi, reconstruct_green,
                         resum_pi_series, verify_green_identity)
from lrlace.lattice import BoxSpec, LatticeField
from lrlace.models import periodize, saw_enumerate, saw_two_point
from lrlace.reports import AuditReport

PARAMS = LongRangeParams(2, 1.0, 1.0)


@pytest.fixture(scope="module")
def kernel():
    D, _ = build_kernel(PARAMS, BoxSpec(2, 6))
    return D


@pytest.fixture(scope="module")
def saw(kernel):
    box = BoxSpec(2, 6, torus=True)
    G = saw_two_point(saw_enumerate(kernel, 4, box), 0.5).field
    return G, periodize(kernel, 6)


@pytest.mark.parametrize("p", [0.0, 0.4, 0.9])
def test_random_walk_has_trivial_pi(kernel, p):
    S = green_function(kernel, GreenSpec(p, GreenMethod.FourierInversion, PARAMS))
    ex = extract_pi(S, kernel, p)
    delta = LatticeField.delta(ex.Pi.box, symmetric=ex.Pi.symmetric)
    assert (ex.Pi - delta).abs_total() < 1e-12


def test_round_trip(saw):
    G, D = saw
    ex = extract_pi(G, D, 0.5)
    back = reconstruct_green(ex, D)
    np.testing.assert_allclose(back.values, G.values, atol=1e-14)


def test_saw_pi_leading_loop(kernel):
    # leading correction at the origin is -p^2 sum_x D(x) D(-x)
    p = 0.02
    box = BoxSpec(2, 6, torus=True)
    D = periodize(kernel, 6)
    G = saw_two_point(saw_enumerate(kernel, 4, box), p).field
    ex = extract_pi(G, D, p)
    loop = float(np.sum(D.values * D.values[::-1, ::-1]))
    assert (1 - ex.Pi.at((0, 0))) / p**2 == pytest.approx(loop, rel=0.05)
    assert ex.pi_hat_zero < 1


@pytest.mark.parametrize("c,q", [(0.1, 0.2), (-0.2, 0.3), (0.0, 0.5)])
def test_resum_scalar_saw(c, q):
    box = BoxSpec(1, 3, torus=True)
    pi = LatticeField.delta(box).scaled(c)
    Pi = resum_pi_series(pi, q, 1.0, LaceModel.SAW)
    assert Pi.at((0,)) == pytest.approx(1 / (1 + q - c), rel=1e-13)
    assert Pi.abs_total() == pytest.approx(abs(Pi.at((0,))), rel=1e-13)


@pytest.mark.parametrize("c,q", [(0.3, 0.5), (0.6, 0.9)])
def test_resum_scalar_perc_ising(c, q):
    pi = LatticeField.delta(BoxSpec(2, 2, torus=True)).scaled(c)
    Pi = resum_pi_series(pi, q, 1.0, LaceModel.PercIsing)
    assert Pi.at((0, 0)) == pytest.approx(c / (1 + q * c), rel=1e-13)


def test_perc_ising_without_self_step_is_identity():
    rng = np.random.default_rng(0)
    pi = LatticeField(BoxSpec(2, 2, torus=True), rng.random((5, 5)) * 0.1)
    Pi = resum_pi_series(pi, 0.0, 0.7, LaceModel.PercIsing)
    np.testing.assert_array_equal(Pi.values, pi.values)


def test_resum_convolution_series():
    # SAW with q = 0: Pi^ = 1 / (1 - pi^) pointwise
    rng = np.random.default_rng(4)
    vals = rng.random((7,)) * 0.05
    pi = LatticeField(BoxSpec(1, 3, torus=True), vals)
    Pi = resum_pi_series(pi, 0.0, 1.0, LaceModel.SAW)
    np.testing.assert_allclose(np.fft.fft(np.fft.ifftshift(Pi.values)),
                               1 / (1 - np.fft.fft(np.fft.ifftshift(vals))), atol=1e-13)


@pytest.mark.parametrize("model,c,q", [(LaceModel.SAW, 0.7, 0.4), (LaceModel.PercIsing, 2.0, 0.6)])
def test_resum_rejects_divergent(model, c, q):
    pi = LatticeField.delta(BoxSpec(1, 2, torus=True)).scaled(c)
    with pytest.raises(ValueError):
        resum_pi_series(pi, q, 1.0, model)


def test_effective_step_of_delta_is_kernel(kernel):
    D = periodize(kernel, 6)
    eff = effective_step(LatticeField.delta(D.box), D, p=0.5)
    np.testing.assert_allclose(eff.kernel.values, D.values, atol=1e-15)
    assert eff.fugacity_eff == pytest.approx(0.5)
    assert eff.report.passed


def test_effective_step_rejects_nonpositive_mass(kernel):
    D = periodize(kernel, 6)
    with pytest.raises(ValueError):
        effective_step(LatticeField.delta(D.box).scaled(-1.0), D)


def test_green_identity_and_susceptibility(saw):
    G, D = saw
    ex = extract_pi(G, D, 0.5)
    eff = effective_step(ex.Pi, D, p=0.5)
    rep = verify_green_identity(G, ex, eff, PARAMS)
    assert rep.passed, rep.metrics
    assert rep.metrics["chi_direct"] == pytest.approx(rep.metrics["chi_lace"], rel=1e-12)


def test_identity_rejects_critical_fugacity(saw):
    G, D = saw
    ex = extract_pi(G, D, 0.5)
    eff = EffectiveStep(D, 1.0, AuditReport("effective_step", "PASS", {}))
    with pytest.raises(ValueError):
        verify_green_identity(G, ex, eff, PARAMS)


def test_extraction_rejects_vanishing_denominator(kernel):
    D = periodize(kernel, 6)
    G = LatticeField.delta(D.box).scaled(-2.0)
    with pytest.raises(ValueError):
        extract_pi(G, D, 0.5)


def test_fields_must_share_torus(kernel):
    D = periodize(kernel, 6)
    with pytest.raises(ValueError):
        extract_pi(LatticeField.delta(BoxSpec(2, 5, torus=True)), D, 0.5)
