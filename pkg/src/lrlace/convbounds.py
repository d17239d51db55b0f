"""Brute-force checks of convolution bounds for power functions with log corrections.

For exponents ``(a1, a2, b1, b2)`` the left side is

    LHS(x) = sum_y <x-y>_L^{-a1} (log<(x-y)/L>_1)^{-a2} <y>_L^{-b1} (log<y/L>_1)^{-b2},

and the right side is ``<x>_L^{-b1} (log<x/L>_1)^{-b2}`` times a factor that
depends on which of five exponent regimes applies.  The checker sums the left
side exactly over a finite region, completes it with a radial tail integral,
and tracks the ratio to the right side as ``|x|`` grows.

For ``x`` on a coordinate axis the region is the Euclidean ball ``|y| <= R``,
summed as ``(y_1, |y_rest|^2)`` pairs weighted by exact lattice-point counts
of the remaining ``d-1`` coordinates; this makes ``R`` of several hundred
affordable in ``d = 4``.  Other ``x`` use direct enumeration of a cube.
"""

from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy import integrate

from .lattice import BoxSpec, HALF_PI, shell_counts
from .reports import status
from .special import sphere_area

LOGGER = logging.getLogger(__name__)

TREND_TOLERANCE = 0.02
L_SHIFT_TOLERANCE = 0.2


class Regime(str, enum.Enum):
    A1_gt_d = "A1_gt_d"
    A1_eq_d_A2_eq_1 = "A1_eq_d_A2_eq_1"
    A1_eq_d_A2_ne_1 = "A1_eq_d_A2_ne_1"
    Interior = "Interior"
    Boundary = "Boundary"


@dataclass(frozen=True)
class ExponentTuple:
    """Exponents of the two factors and the geometry.

    ``a1 >= b1 > 0``, ``a1 + b1 >= d``, ``a2, b2 >= 0`` and ``a2 >= b2`` when
    ``a1 = b1``.
    """

    a1: float
    a2: float
    b1: float
    b2: float
    d: int
    L: float = 1.0

    def __post_init__(self):
        if not self.a1 >= self.b1 > 0:
            raise ValueError("need a1 >= b1 > 0")
        if self.a2 < 0 or self.b2 < 0:
            raise ValueError("log exponents must be non-negative")
        if self.a1 + self.b1 < self.d:
            raise ValueError("need a1 + b1 >= d")
        if self.a1 == self.b1 and self.a2 < self.b2:
            raise ValueError("need a2 >= b2 when a1 = b1")
        if not self.L >= 1:
            raise ValueError("L must be at least 1")

    def with_L(self, L: float) -> "ExponentTuple":
        return replace(self, L=float(L))


def classify_regime(t: ExponentTuple) -> Regime:
    """The case of the bound that applies to ``t``."""
    d = t.d
    if t.a1 > d:
        return Regime.A1_gt_d
    if t.a1 == d:
        return Regime.A1_eq_d_A2_eq_1 if t.a2 == 1 else Regime.A1_eq_d_A2_ne_1
    if t.a1 + t.b1 > d:
        return Regime.Interior
    if t.a2 + t.b2 > 1:
        return Regime.Boundary
    raise ValueError("a1 < d, a1 + b1 = d and a2 + b2 <= 1: outside every case")


def _reg(r: float, L: float) -> float:
    return HALF_PI * max(r, L)


def envelope(t: ExponentTuple, r: float, regime: Regime | None = None, with_loglog: bool = True) -> float:
    """Right side of the bound (without its constant) at ``|x| = r``."""
    regime = classify_regime(t) if regime is None else regime
    ex = _reg(r, t.L)
    lg = math.log(ex / t.L)
    base = ex ** (-t.b1) * lg ** (-t.b2)
    if regime is Regime.A1_gt_d:
        return base * t.L ** (t.d - t.a1)
    if regime is Regime.A1_eq_d_A2_eq_1:
        return base * (math.log(lg) if with_loglog else 1.0)
    if regime is Regime.A1_eq_d_A2_ne_1:
        return base * lg ** max(0.0, 1.0 - t.a2)
    if regime is Regime.Interior:
        return base * ex ** (t.d - t.a1)
    return base * ex ** t.b1 * lg ** max(0.0, 1.0 - t.a2)


# --------------------------------------------------------------------------
# left side

@numba.njit(cache=True)
def _axis_sum(r, R, counts, fa, fb):
    """Split sums over the ball |y| <= R for x = r e_1.

    ``fa[n]`` and ``fb[n]`` are the two factors at squared distance ``n``.
    """
    near = 0.0
    far = 0.0
    R2 = R * R
    for y1 in range(-R, R + 1):
        smax = R2 - y1 * y1
        u = (r - y1) * (r - y1)
        v = y1 * y1
        for s in range(smax + 1):
            c = counts[s]
            if c == 0.0:
                continue
            term = c * fa[u + s] * fb[v + s]
            if u <= v:
                near += term
            else:
                far += term
    return near, far


def factor_table(exp_power: float, exp_log: float, L: float, n_max: int) -> np.ndarray:
    """``<r>_L^{-a} (log<r/L>_1)^{-b}`` at ``r = sqrt(n)``, ``n = 0..n_max``."""
    r = np.sqrt(np.arange(n_max + 1, dtype=np.float64))
    ex = HALF_PI * np.maximum(r, L)
    out = ex ** (-exp_power)
    if exp_log:
        out *= np.log(ex / L) ** (-exp_log)
    return out


@functools.lru_cache(maxsize=8)
def _counts(d: int, smax: int) -> np.ndarray:
    return shell_counts(d, smax).astype(np.float64)


def _ball_radius(d: int, n_points: float) -> float:
    """Radius of the ``d``-ball with volume ``n_points``."""
    return (n_points * math.gamma(d / 2 + 1) / math.pi ** (d / 2)) ** (1.0 / d)


def tail_integral(t: ExponentTuple, R: float) -> float:
    """``int_{|y| > R}`` of the summand with ``|x - y|`` replaced by ``|y|``."""
    area = sphere_area(t.d)
    a, b = t.a1 + t.b1, t.a2 + t.b2
    L = t.L

    def f(u):
        log_rho = math.log(R) + u
        log_ex = math.log(HALF_PI) + max(log_rho, math.log(L))
        lg = t.d * log_rho - a * log_ex - b * math.log(log_ex - math.log(L))
        return area * math.exp(lg) if lg > -700 else 0.0

    return integrate.quad(f, 0.0, np.inf, limit=400, epsabs=0.0, epsrel=1e-11)[0]


@dataclass
class LhsResult:
    """Left side split into region parts and the tail."""

    near: float
    far: float
    tail: float
    region: str
    radius: float

    @property
    def total(self) -> float:
        return self.near + self.far + self.tail


def _axis_position(x) -> float | None:
    x = np.asarray(x, dtype=np.int64)
    nz = np.flatnonzero(x)
    if nz.size == 0:
        return 0.0
    if nz.size == 1:
        return float(abs(x[nz[0]]))
    return None


def lhs_parts(t: ExponentTuple, x, box: BoxSpec, tail: bool = True, region: str = "auto") -> LhsResult:
    """Exact region sum (split by ``|x-y| <= |y|``) plus the tail estimate.

    Parameters
    ----------
    region : {"auto", "ball", "cube"}
        ``ball`` sums over ``|y| <= box.M`` and needs ``x`` on an axis;
        ``cube`` sums over the box sites.  ``auto`` picks ``ball`` for axis
        points.
    """
    x = np.asarray(x, dtype=np.int64)
    if x.size != t.d or box.d != t.d:
        raise ValueError("dimension mismatch")
    norm_x = float(np.linalg.norm(x))
    if box.M < 3 * norm_x:
        raise ValueError(f"box half-width {box.M} is below 3|x| = {3 * norm_x:g}")
    pos = _axis_position(x)
    if region == "auto":
        region = "ball" if pos is not None else "cube"
    if region == "ball":
        if pos is None:
            raise ValueError("ball summation needs x on a coordinate axis")
        R = box.M
        counts_rest = _counts(t.d - 1, R * R) if t.d > 1 else np.array([1.0] + [0.0] * (R * R))
        r = int(pos)
        fa = factor_table(t.a1, t.a2, t.L, (r + R) ** 2)
        fb = factor_table(t.b1, t.b2, t.L, R * R)
        near, far = _axis_sum(r, R, counts_rest, fa, fb)
        n_points = float(_counts(t.d, R * R).sum())
    elif region == "cube":
        near, far = _cube_sum(t, x, box.M)
        n_points = float(box.side ** t.d)
    else:
        raise ValueError(f"unknown region {region!r}")
    radius = _ball_radius(t.d, n_points)
    tl = tail_integral(t, radius) if tail else 0.0
    return LhsResult(near=near, far=far, tail=tl, region=region, radius=radius)


def _cube_sum(t: ExponentTuple, x, M: int) -> tuple:
    coords = np.arange(-M, M + 1, dtype=np.float64)
    near = far = 0.0
    if t.d > 1:
        grids = np.meshgrid(*([coords] * (t.d - 1)), indexing="ij")
        rest = [g.ravel() for g in grids]
    for y1 in coords:
        ysq = y1 * y1
        xsq = (x[0] - y1) ** 2
        if t.d > 1:
            ysq = ysq + sum(c * c for c in rest)
            xsq = xsq + sum((x[i + 1] - c) ** 2 for i, c in enumerate(rest))
        ysq = np.atleast_1d(ysq)
        xsq = np.atleast_1d(xsq)
        rx, ry = np.sqrt(xsq), np.sqrt(ysq)
        ex = HALF_PI * np.maximum(rx, t.L)
        ey = HALF_PI * np.maximum(ry, t.L)
        term = ex ** (-t.a1) * ey ** (-t.b1)
        if t.a2:
            term = term * np.log(ex / t.L) ** (-t.a2)
        if t.b2:
            term = term * np.log(ey / t.L) ** (-t.b2)
        sel = rx <= ry
        near += float(np.sum(term[sel]))
        far += float(np.sum(term[~sel]))
    return near, far


def brute_force_lhs(t: ExponentTuple, x, box: BoxSpec, tail: bool = True, region: str = "auto") -> float:
    """Left side of the convolution bound at ``x``; see :func:`lhs_parts`."""
    return lhs_parts(t, x, box, tail=tail, region=region).total


# --------------------------------------------------------------------------
# verification

@dataclass
class ConvBoundReport:
    """Ratio of the left side to the regime envelope along sampled ``x``."""

    regime: Regime
    empirical_C: float
    trend_slope: float
    status: str
    rows: list = field(default_factory=list)
    L_check: dict = field(default_factory=dict)
    tuple_: ExponentTuple | None = None

    def to_dict(self) -> dict:
        t = self.tuple_
        return dict(regime=self.regime.value, empirical_C=self.empirical_C, trend_slope=self.trend_slope,
                    status=self.status, rows=self.rows, L_check=self.L_check,
                    tuple=None if t is None else dict(a1=t.a1, a2=t.a2, b1=t.b1, b2=t.b2, d=t.d, L=t.L))

    def to_csv(self) -> str:
        lines = ["x_norm,lhs,rhs_envelope,ratio"]
        lines += [f"{r['x']!r},{r['lhs']!r},{r['envelope']!r},{r['ratio']!r}" for r in self.rows]
        return "\n".join(lines) + "\n"


def default_samples(L: float, decades: float = 1.0, per_octave: int = 2) -> list:
    """Axis points ``4L sqrt(2)^j`` spanning ``decades`` decades."""
    count = int(math.ceil(decades * math.log2(10) * per_octave)) + 1
    radii = sorted({int(round(4 * L * 2 ** (j / per_octave))) for j in range(count)})
    return radii


def _ratios(t: ExponentTuple, radii, regime: Regime, with_loglog: bool, box: BoxSpec | None) -> list:
    rows = []
    for r in radii:
        x = np.zeros(t.d, dtype=np.int64)
        x[0] = int(r)
        b = box if box is not None else BoxSpec(t.d, 3 * int(r))
        lhs = brute_force_lhs(t, x, b)
        env = envelope(t, float(r), regime, with_loglog)
        rows.append(dict(x=float(r), lhs=lhs, envelope=env, ratio=lhs / env))
    return rows


def _outer_slope(rows) -> float:
    r = np.array([row["x"] for row in rows])
    q = np.array([row["ratio"] for row in rows])
    h = len(rows) // 2
    if len(rows) - h < 2:
        return float("nan")
    return float(np.polyfit(np.log(r[h:]), np.log(q[h:]), 1)[0])


def verify_bound(t: ExponentTuple, x_samples=None, box: BoxSpec | None = None, check_L: bool = True,
                 with_loglog: bool = True) -> ConvBoundReport:
    """Empirical constant and outer-half trend of ``LHS / envelope``.

    Parameters
    ----------
    x_samples : sequence of int, optional
        Axis distances; default :func:`default_samples` (one decade from 4L).
    box : BoxSpec, optional
        Summation box; default ``3|x|`` for each sample.
    check_L : bool
        Rerun at ``2L`` with distances scaled by 2 and require the empirical
        constant to move by less than 20%.
    with_loglog : bool
        Keep the ``log log`` factor of the ``A1_eq_d_A2_eq_1`` envelope;
        dropping it gives the negative control.
    """
    regime = classify_regime(t)
    radii = default_samples(t.L) if x_samples is None else [int(r) for r in x_samples]
    if max(radii) < 10 * min(radii) * 0.99:
        LOGGER.warning("x samples span less than one decade")
    rows = _ratios(t, radii, regime, with_loglog, box)
    C = max(r["ratio"] for r in rows)
    slope = _outer_slope(rows)
    ok = math.isfinite(slope) and slope <= TREND_TOLERANCE
    L_check = {}
    if check_L:
        t2 = t.with_L(2 * t.L)
        rows2 = _ratios(t2, [2 * r for r in radii], regime, with_loglog, None)
        C2 = max(r["ratio"] for r in rows2)
        shift = abs(C2 - C) / C
        L_check = dict(L2=t2.L, empirical_C_2L=C2, relative_shift=shift, trend_slope_2L=_outer_slope(rows2),
                       stable=shift < L_SHIFT_TOLERANCE)
        ok = ok and shift < L_SHIFT_TOLERANCE
    return ConvBoundReport(regime=regime, empirical_C=C, trend_slope=slope, status=status(ok), rows=rows,
                           L_check=L_check, tuple_=t)


CANONICAL_TUPLES = {
    Regime.A1_gt_d: (6.0, 0.0, 2.0, 0.0),
    Regime.A1_eq_d_A2_eq_1: (4.0, 1.0, 2.0, 1.0),
    Regime.A1_eq_d_A2_ne_1: (4.0, 0.0, 2.0, 0.0),
    Regime.Interior: (3.0, 0.0, 2.0, 0.0),
    Regime.Boundary: (2.0, 1.0, 2.0, 1.0),
}


def canonical_tuple(regime: Regime, L: float = 2.0, d: int = 4) -> ExponentTuple:
    """A representative exponent tuple for each regime in ``d = 4``."""
    if d != 4:
        raise ValueError("canonical tuples are defined for d = 4")
    a1, a2, b1, b2 = CANONICAL_TUPLES[Regime(regime)]
    return ExponentTuple(a1, a2, b1, b2, d, L)
