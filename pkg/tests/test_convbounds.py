import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrlace.convbounds import (ExponentTuple, Regime, brute_force_lhs, canonical_tuple, classify_regime,
                               default_samples, envelope, lhs_parts, tail_integral, verify_bound)
from lrlace.lattice import BoxSpec


def _bracket(r, L):
    return math.pi / 2 * max(r, L)


def _hand_sum(t, x, M, ball=False):
    total = 0.0
    for y in itertools.product(range(-M, M + 1), repeat=t.d):
        ry = math.sqrt(sum(c * c for c in y))
        if ball and ry > M:
            continue
        rxy = math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)))
        ex, ey = _bracket(rxy, t.L), _bracket(ry, t.L)
        term = ex ** -t.a1 * ey ** -t.b1
        if t.a2:
            term *= math.log(ex / t.L) ** -t.a2
        if t.b2:
            term *= math.log(ey / t.L) ** -t.b2
        total += term
    return total


@pytest.mark.parametrize("a1,a2,b1,b2,d,regime", [
    (6, 0, 2, 0, 4, Regime.A1_gt_d),
    (4, 1, 2, 1, 4, Regime.A1_eq_d_A2_eq_1),
    (4, 0, 2, 0, 4, Regime.A1_eq_d_A2_ne_1),
    (4, 2, 1, 0, 4, Regime.A1_eq_d_A2_ne_1),
    (3, 0, 2, 0, 4, Regime.Interior),
    (2, 1, 2, 1, 4, Regime.Boundary),
    (1.5, 0.6, 1.5, 0.5, 3, Regime.Boundary),
])
def test_classify(a1, a2, b1, b2, d, regime):
    assert classify_regime(ExponentTuple(a1, a2, b1, b2, d)) is regime


def test_classify_rejects_uncovered_tuple():
    with pytest.raises(ValueError):
        classify_regime(ExponentTuple(2, 0.5, 2, 0.5, 4))


@pytest.mark.parametrize("args", [(1, 0, 2, 0, 2), (2, -1, 1, 0, 2), (1, 0, 0.5, 0, 2),
                                  (2, 0, 2, 1, 2), (2, 0, 1, 0, 2, 0.5)])
def test_tuple_validation(args):
    with pytest.raises(ValueError):
        ExponentTuple(*args)


@pytest.mark.parametrize("x,M", [((0, 0), 2), ((1, 0), 3), ((1, 1), 6), ((0, -2), 6)])
def test_cube_sum_matches_hand_loop(x, M):
    t = ExponentTuple(3.0, 0.5, 2.0, 1.0, 2, 1.0)
    got = lhs_parts(t, x, BoxSpec(2, M), tail=False, region="cube")
    assert got.near + got.far == pytest.approx(_hand_sum(t, x, M), rel=1e-12)


@pytest.mark.parametrize("d,r,M", [(2, 2, 8), (3, 1, 5)])
def test_ball_sum_matches_hand_loop(d, r, M):
    t = ExponentTuple(d + 1.0, 0.0, 2.0, 1.0, d, 1.5)
    x = (r,) + (0,) * (d - 1)
    got = lhs_parts(t, x, BoxSpec(d, M), tail=False, region="ball")
    assert got.near + got.far == pytest.approx(_hand_sum(t, x, M, ball=True), rel=1e-12)


def test_near_far_split():
    t = ExponentTuple(3.0, 0.0, 2.0, 0.0, 2, 1.0)
    x = (2, 0)
    parts = lhs_parts(t, x, BoxSpec(2, 6), tail=False, region="cube")
    near = 0.0
    for y in itertools.product(range(-6, 7), repeat=2):
        if math.dist(x, y) <= math.hypot(*y):
            near += _bracket(math.dist(x, y), 1) ** -3 * _bracket(math.hypot(*y), 1) ** -2
    assert parts.near == pytest.approx(near, rel=1e-12)


def test_reflection_symmetry():
    t = ExponentTuple(4.0, 0.0, 2.0, 0.0, 3, 1.0)
    box = BoxSpec(3, 9)
    a = brute_force_lhs(t, (3, 0, 0), box, region="cube")
    b = brute_force_lhs(t, (-3, 0, 0), box, region="cube")
    c = brute_force_lhs(t, (0, 0, 3), box)
    assert a == pytest.approx(b, rel=1e-13)
    assert c == pytest.approx(brute_force_lhs(t, (3, 0, 0), box), rel=1e-13)


def test_box_too_small_rejected():
    with pytest.raises(ValueError):
        lhs_parts(ExponentTuple(3, 0, 2, 0, 2), (3, 0), BoxSpec(2, 8))


def test_ball_needs_axis_point():
    with pytest.raises(ValueError):
        lhs_parts(ExponentTuple(3, 0, 2, 0, 2), (1, 1), BoxSpec(2, 9), region="ball")


@settings(max_examples=20, deadline=None)
@given(st.floats(2.5, 5.0), st.floats(0.1, 2.0))
def test_monotone_in_a1(a1, extra):
    box = BoxSpec(2, 9)
    lo = brute_force_lhs(ExponentTuple(a1, 0, 2, 0, 2), (3, 0), box)
    hi = brute_force_lhs(ExponentTuple(a1 + extra, 0, 2, 0, 2), (3, 0), box)
    assert hi < lo


def test_tail_integral_closed_form():
    t = ExponentTuple(3.0, 0.0, 2.0, 0.0, 2, 1.0)
    R = 7.3
    expected = 2 * math.pi * (math.pi / 2) ** -5 * R ** -3 / 3
    assert tail_integral(t, R) == pytest.approx(expected, rel=1e-9)


def test_origin_collapse():
    # at x = o the two factors merge into one radial power
    t = ExponentTuple(3.0, 0.0, 2.0, 0.0, 2, 1.0)
    val = brute_force_lhs(t, (0, 0), BoxSpec(2, 6), tail=False, region="cube")
    ref = sum(_bracket(math.hypot(*y), 1) ** -5 for y in itertools.product(range(-6, 7), repeat=2))
    assert val == pytest.approx(ref, rel=1e-12)


def test_envelope_loglog_factor():
    t = canonical_tuple(Regime.A1_eq_d_A2_eq_1)
    r = 50.0
    with_ll = envelope(t, r)
    without = envelope(t, r, with_loglog=False)
    lg = math.log(_bracket(r, t.L) / t.L)
    assert with_ll / without == pytest.approx(math.log(lg), rel=1e-14)


def test_default_samples_span_a_decade():
    s = default_samples(2.0)
    assert s[0] == 8 and s[-1] >= 79 and s == sorted(s)


def test_verify_bound_small_dimension():
    report = verify_bound(ExponentTuple(3.0, 0.0, 2.0, 0.0, 2, 2.0))
    assert report.regime is Regime.A1_gt_d
    assert report.status == "PASS" and 0 < report.empirical_C < np.inf
    assert report.to_csv().splitlines()[0] == "x_norm,lhs,rhs_envelope,ratio"
