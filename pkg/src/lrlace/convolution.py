"""``n``-fold convolutions of a kernel and audits of their decay.

On a torus box (``box.torus``) convolutions are circular and exact for the
torus walk.  On a plain box the kernel is zero-padded by ``padding`` sites on
every side; mass that the ``n``-step walk carries beyond the padded window
would wrap around, and an upper bound on it (from the exactly computable
one-dimensional marginal walk) is reported as leakage.

The decay audits run on the torus: periodizing a non-negative field only
adds non-negative images, so torus values dominate the infinite-lattice ones
and an upper-bound audit passed on the torus is conservative.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import spectral
from .kernels import LongRangeParams
from .lattice import BoxSpec, HALF_PI, LatticeField
from .reports import AuditReport, status

LOGGER = logging.getLogger(__name__)

NEGATIVE_FLOOR = -1e-14
MAX_LEAKAGE = 1e-2
DEFAULT_LEAKAGE = 1e-3
TREND_TOLERANCE = 1.1
FORM_FLOOR = 1e-3


class Method(str, enum.Enum):
    Spectral = "Spectral"
    Direct = "Direct"


@dataclass(frozen=True)
class ConvolutionPlan:
    """Where and how convolutions are evaluated.

    Parameters
    ----------
    box : BoxSpec
        Reporting box.  With ``box.torus`` the convolution is circular and
        ``padding`` must be 0.
    padding : int
        Zero margin added on every side before the circular convolution.
    method : Method
    """

    box: BoxSpec
    padding: int = 0
    method: Method = Method.Spectral

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.padding < 0:
            raise ValueError("padding must be non-negative")
        if self.box.torus and self.padding:
            raise ValueError("a torus box takes no padding")

    @property
    def grid_M(self) -> int:
        return self.box.M + self.padding

    @classmethod
    def torus(cls, box: BoxSpec, method: Method = Method.Spectral) -> "ConvolutionPlan":
        return cls(box.with_torus(True), 0, method)

    @classmethod
    def for_walk(cls, D: LatticeField, n_max: int, target: float = DEFAULT_LEAKAGE,
                 method: Method = Method.Spectral, max_padding: int | None = None) -> "ConvolutionPlan":
        """Smallest padding keeping the leakage bound below ``target`` at ``n_max``."""
        box = D.box.with_torus(False)
        cap = 16 * box.M if max_padding is None else int(max_padding)
        tails = marginal_tails(D, n_max, box.M + cap)
        pad = _smallest_padding(tails[n_max], box.d, box.M, target)
        if pad is None or pad > cap:
            raise ValueError(f"no padding up to {cap} keeps leakage below {target:g} at n={n_max}")
        return cls(box, pad, method)


def axis_marginal(D: LatticeField) -> np.ndarray:
    """Distribution of the first coordinate of one step, on ``-M..M``."""
    if D.symmetric:
        from .lattice import multiplicity_vector
        w = multiplicity_vector(D.box.M)
        marg = D.values
        for _ in range(D.box.d - 1):
            marg = np.tensordot(marg, w, axes=([marg.ndim - 1], [0]))
        return np.concatenate([marg[:0:-1], marg])
    return D.values.sum(axis=tuple(range(1, D.box.d)))


def marginal_tails(D: LatticeField, n_max: int, r_max: int) -> dict:
    """``P(|X_1^{(n)}| > r)`` for ``r = 0..r_max`` and ``n <= n_max``.

    The first coordinate of the ``n``-step walk is itself a walk with the
    one-dimensional marginal as step law; its law is computed exactly by
    linear convolution.
    """
    step = np.clip(axis_marginal(D), 0.0, None)
    law = np.array([1.0])
    out = {}
    for n in range(1, n_max + 1):
        law = np.convolve(law, step)
        np.clip(law, 0.0, None, out=law)
        half = (law.size - 1) // 2
        absolute = law[half:].copy()
        absolute[1:] += law[:half][::-1]
        # tail[r] = P(|X| > r)
        tail = np.concatenate([absolute[::-1].cumsum()[::-1][1:], [0.0]])
        full = np.zeros(r_max + 1)
        m = min(tail.size, r_max + 1)
        full[:m] = tail[:m]
        out[n] = np.maximum(full, 0.0)
    return out


def _smallest_padding(tail: np.ndarray, d: int, M: int, target: float):
    for pad in range(0, tail.size - M):
        if d * tail[M + pad] < target:
            return pad
    return None


def leakage_bound(D: LatticeField, n: int, grid_M: int) -> float:
    """Union bound ``d P(|X_1^{(n)}| > grid_M)`` on mass leaving the padded window."""
    if n == 0:
        return 0.0
    return float(min(1.0, D.box.d * marginal_tails(D, n, grid_M)[n][grid_M]))


def _clamp(values: np.ndarray) -> int:
    neg = values < 0
    count = int(np.count_nonzero(neg))
    if count:
        worst = float(values[neg].min())
        if worst < NEGATIVE_FLOOR:
            LOGGER.warning("convolution produced negatives down to %.3e (below floor)", worst)
        values[neg] = 0.0
    return count


def n_step(D: LatticeField, n: int, plan: ConvolutionPlan | None = None) -> LatticeField:
    """``D^{*n}``: the origin delta for ``n = 0``, else ``D * D^{*(n-1)}``.

    Parameters
    ----------
    D : LatticeField
        A probability kernel on a box no larger than the plan's box.
    n : int
    plan : ConvolutionPlan, optional
        Defaults to the torus on ``D``'s own box.

    Returns
    -------
    LatticeField
        On ``plan.box``; ``meta`` carries ``mass``, ``leakage_bound`` and
        ``clamped`` (number of round-off negatives set to zero).
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    plan = ConvolutionPlan.torus(D.box) if plan is None else plan
    if D.box.M > plan.box.M:
        raise ValueError("kernel box exceeds the plan box")
    leak = 0.0 if plan.box.torus else leakage_bound(D, n, plan.grid_M)
    if leak > MAX_LEAKAGE:
        raise ValueError(f"n={n} walk leaks {leak:.3g} of its mass past the padded window")
    if n == 0:
        out = LatticeField.delta(plan.box, symmetric=D.symmetric)
        out.meta.update(mass=1.0, leakage_bound=0.0, clamped=0, n=0)
        return out
    if plan.method is Method.Direct:
        vals = _direct_power(D, n, plan)
        template = LatticeField(plan.box, vals, symmetric=D.symmetric)
        out = template
    else:
        spec = spectral.forward_raw(D, plan.grid_M)
        spec **= n
        out = spectral.inverse_raw(spec, D.replace(D.values, box=D.box.with_torus(plan.box.torus)),
                                   plan.grid_M, plan.box.M, inplace=True, kind="D^n")
        if plan.box.torus != out.box.torus:
            out = out.replace(out.values, box=plan.box)
    clamped = _clamp(out.values)
    out = out.replace(out.values, box=plan.box, kind="D^n", is_kernel=False)
    out.meta.update(mass=out.total(), leakage_bound=leak, clamped=clamped, n=n)
    return out


def _direct_power(D: LatticeField, n: int, plan: ConvolutionPlan) -> np.ndarray:
    """Repeated direct (site-by-site) convolution on the padded grid."""
    d = D.box.d
    Mg = plan.grid_M
    side = 2 * Mg + 1
    kern = D.full()
    K = D.box.M
    offsets = np.argwhere(kern != 0) - K
    weights = kern[kern != 0]
    cur = np.zeros((side,) * d)
    cur[(Mg,) * d] = 1.0
    for _ in range(n):
        nxt = np.zeros_like(cur)
        for off, w in zip(offsets, weights):
            nxt += w * np.roll(cur, tuple(off), axis=tuple(range(d)))
        cur = nxt
    lo = Mg - plan.box.M
    cur = cur[(slice(lo, lo + 2 * plan.box.M + 1),) * d]
    if D.symmetric:
        from .lattice import full_to_orthant
        return np.ascontiguousarray(full_to_orthant(cur))
    return np.ascontiguousarray(cur)


def convolve(f: LatticeField, g: LatticeField, grid_M: int | None = None,
             out_M: int | None = None) -> LatticeField:
    """Circular convolution of two fields on a common torus."""
    if f.symmetric != g.symmetric:
        f, g = f.to_full(), g.to_full()
    grid_M = max(f.box.M, g.box.M) if grid_M is None else grid_M
    spec = spectral.forward_raw(f, grid_M)
    spec *= spectral.forward_raw(g, grid_M)
    return spectral.inverse_raw(spec, f, grid_M, out_M, inplace=True, kind="convolution")


# --------------------------------------------------------------------------
# decay audits

def _reg_norm_field(D: LatticeField, r: float) -> np.ndarray:
    rho = np.sqrt(D.radius_sq().astype(np.float64))
    np.maximum(rho, r, out=rho)
    rho *= HALF_PI
    return rho


def _trend_check(values, tol: float = TREND_TOLERANCE) -> tuple:
    """Growth of the running maximum across the upper half of ``n = 1..n_max``.

    Returns ``(bounded, running max at n_max // 2, running max at n_max, growth)``.
    """
    values = np.asarray(values, dtype=float)
    half = max(1, values.size // 2)
    lower = float(np.max(values[:half]))
    upper = float(np.max(values))
    growth = upper / lower if lower > 0 else float("inf")
    return growth <= tol, lower, upper, growth


def _upper_half_slope(values) -> float:
    """Log-log slope of a positive sequence over the upper half of its n-range."""
    values = np.asarray(values, dtype=float)
    n = np.arange(1, values.size + 1)
    sel = n > values.size // 2
    if sel.sum() < 2 or np.any(values[sel] <= 0):
        return float("nan")
    return float(np.polyfit(np.log(n[sel]), np.log(values[sel]), 1)[0])


def _powers(D: LatticeField, n_max: int, grid_M: int):
    """Yield ``(n, D^{*n})`` on the torus of half-width ``grid_M``.

    The yielded field's buffer is reused on the next iteration.
    """
    spec = spectral.forward_raw(D, grid_M)
    power = spec.copy()
    work = np.empty_like(spec)
    template = D.replace(D.values, box=D.box.with_torus(True))
    for n in range(1, n_max + 1):
        if n > 1:
            power *= spec
        np.copyto(work, power)
        yield n, spectral.inverse_raw(work, template, grid_M, inplace=True, kind="D^n")


def sup_norm_certificates(D: LatticeField, n_max: int, grid_M: int | None = None,
                          chunk: int = 4) -> np.ndarray:
    """``N^{-d} sum_k |D_hat(k)|^n`` for ``n = 1..n_max`` on a torus of side ``N``.

    Each entry bounds ``||D^{*n}||_inf`` on that torus from above, with
    equality for even ``n`` (the sum is then ``D^{*n}(o)``).  The spectrum is
    streamed in slabs along the first momentum axis, so ``grid_M`` can be far
    larger than a dense array would allow.
    """
    from . import _transforms as tr
    from .lattice import multiplicity_vector
    D = D if D.symmetric else D.to_symmetric()
    d, M = D.box.d, D.box.M
    G = M if grid_M is None else int(grid_M)
    if G < M:
        raise ValueError("certificate grid smaller than the kernel box")
    period = 2 * G + 1
    cmat = tr.cos_matrix(G + 1, M + 1, period)
    w = multiplicity_vector(G)
    acc = np.zeros(n_max)
    for c0 in range(0, G + 1, chunk):
        slab = np.tensordot(cmat[c0:c0 + chunk], D.values, axes=([1], [0]))
        for _ in range(d - 1):
            slab = np.tensordot(slab, cmat, axes=([1], [1]))
        np.abs(slab, out=slab)
        power = slab.copy()
        weights = [w[c0:c0 + chunk]] + [w] * (d - 1)
        for n in range(n_max):
            if n:
                power *= slab
            red = power
            for vec in weights[::-1]:
                red = np.tensordot(red, vec, axes=([red.ndim - 1], [0]))
            acc[n] += float(red)
    return acc / period**d


def audit_assumption_Dn(D: LatticeField, params: LongRangeParams, n_max: int,
                        grid_M: int | None = None, window: float = 0.6,
                        sup_grid_M: int | None = None) -> AuditReport:
    """Empirical constants of the sup-norm and pointwise decay of ``D^{*n}``.

    For each ``n`` the report tabulates ``||D^{*n}||_inf L^d (n log(pi n/2))^{d/2}``
    (``alpha = 2``; ``n^{d/alpha}`` otherwise), with the sup-norm taken from
    :func:`sup_norm_certificates` on a torus of half-width ``sup_grid_M``, and
    ``max_x D^{*n}(x) <x>_L^{d+a} / (n L^a corr(x))`` with ``corr = log<x/L>_1``
    at ``alpha = 2``, the latter over the trusted window
    ``||x||_inf <= window * grid_M`` of the torus.

    PASS requires the running maximum of both sequences to grow by at most
    10% across the upper half of the ``n`` range, and the pointwise ratio to
    keep weight near the window edge: its maximum over the outer half of the
    window must stay above ``FORM_FLOOR`` times its maximum for every ``n``,
    which is what a power-law tail provides.

    Parameters
    ----------
    grid_M : int, optional
        Half-width of the torus on which ``D^{*n}`` is materialized (at least
        the kernel box).
    sup_grid_M : int, optional
        Half-width of the torus for the sup-norm certificates; defaults to
        twice the kernel box, where wrap-around is negligible for ``n <= 32``
        at the supported ``L``.
    """
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    d, L, a = D.box.d, float(params.L), params.a
    log_case = params.alpha == 2
    grid_M = D.box.M if grid_M is None else int(grid_M)
    win = max(1, int(window * grid_M))
    win_box = BoxSpec(d, win)
    symmetric = D.symmetric
    rho = np.sqrt(win_box.radius_sq(symmetric=symmetric).astype(np.float64))
    np.maximum(rho, L, out=rho)
    rho *= HALF_PI
    weight = rho ** (d + a) / L**a
    if log_case:
        weight /= np.log(rho / L)
    del rho
    sup_coords = LatticeField(win_box, np.zeros(win_box.orthant_shape if symmetric else win_box.shape),
                              symmetric=symmetric).sup_norm_coords()
    outer = sup_coords >= (win + 1) // 2
    sup_grid_M = max(2 * D.box.M, grid_M) if sup_grid_M is None else int(sup_grid_M)
    certificates = sup_norm_certificates(D, n_max, sup_grid_M) if symmetric else None
    crop = (slice(0, win + 1),) * d if symmetric else (slice(grid_M - win, grid_M + win + 1),) * d
    rows = []
    for n, Dn in _powers(D, n_max, grid_M):
        vals = Dn.values
        sup_torus = float(vals.max())
        sup = float(certificates[n - 1]) if certificates is not None else sup_torus
        scale = (n * math.log(math.pi * n / 2)) ** (d / 2) if log_case else n ** (d / a)
        ratio = vals[crop] * weight
        ratio /= n
        c_x = float(ratio.max())
        outer_max = float(ratio[outer].max()) if outer.any() else 0.0
        rows.append(dict(n=n, sup=sup, sup_torus=sup_torus, c_sup=sup * L**d * scale, c_x=c_x,
                         outer_fraction=outer_max / c_x if c_x > 0 else 0.0))
    sup_seq = [r["c_sup"] for r in rows]
    x_seq = [r["c_x"] for r in rows]
    sup_ok, sup_lo, sup_hi, sup_growth = _trend_check(sup_seq)
    x_ok, x_lo, x_hi, x_growth = _trend_check(x_seq)
    form = min(r["outer_fraction"] for r in rows)
    form_ok = form >= FORM_FLOOR
    monotone = all(rows[i + 1]["sup_torus"] <= rows[i]["sup_torus"] * (1 + 1e-12)
                   for i in range(len(rows) - 1))
    ok = sup_ok and x_ok and form_ok
    return AuditReport(
        name="assumption_Dn",
        status=status(ok),
        metrics=dict(sup_constant=sup_hi, sup_growth=sup_growth, sup_bounded=sup_ok,
                     sup_upper_half_slope=_upper_half_slope(sup_seq),
                     x_constant=x_hi, x_growth=x_growth, x_bounded=x_ok,
                     x_upper_half_slope=_upper_half_slope(x_seq),
                     tail_form=form, tail_form_ok=form_ok, sup_nonincreasing=monotone,
                     n_max=n_max, M=D.box.M, grid_M=grid_M, sup_grid_M=sup_grid_M, window=win,
                     torus=True),
        tables=dict(rows=rows),
    )


def _sample_pairs(M: int, d: int, L: float, window: float = 0.6):
    """``(x, y)`` pairs along the axis and diagonal with ``|y| <= |x|/3``."""
    r_hi = max(2, int(window * M))
    radii = sorted({int(round(r)) for r in np.geomspace(max(2.0, 2 * L), r_hi, 8)})
    pairs = []
    axis = np.eye(d, dtype=np.int64)[0]
    diag = np.zeros(d, dtype=np.int64)
    diag[: min(2, d)] = 1
    for r in radii:
        for direction in (axis, diag):
            x = direction * max(1, int(round(r / np.linalg.norm(direction))))
            nx = float(np.linalg.norm(x))
            for ydir in (axis, diag, np.roll(axis, 1) if d > 1 else axis):
                for j in sorted({1, 2, max(1, int(nx / (3 * np.linalg.norm(ydir))))}):
                    y = ydir * j
                    if np.linalg.norm(y) <= nx / 3 and np.all(np.abs(x) + np.abs(y) <= M):
                        pairs.append((x, y))
    return pairs


def audit_derivative_bound(D: LatticeField, params: LongRangeParams, n_max: int,
                           pairs=None) -> AuditReport:
    """Empirical constant of the discrete second difference of ``D^{*n}``.

    Tabulates ``|D^n(x) - (D^n(x+y) + D^n(x-y))/2| <x>_L^{d+a+2} / (n L^a <y>_L^2)``
    over sampled ``(n, x, y)`` with ``|y| <= |x|/3``; PASS iff the maximum
    over ``n`` grows by at most 10% across the upper half of the ``n`` range.
    """
    if params.alpha == 2:
        raise ValueError("the derivative bound is only required for alpha != 2")
    d, L, a = D.box.d, float(params.L), params.a
    pairs = _sample_pairs(D.box.M, d, L) if pairs is None else pairs
    for x, y in pairs:
        if np.linalg.norm(y) > np.linalg.norm(x) / 3 + 1e-12:
            raise ValueError(f"pair x={tuple(x)}, y={tuple(y)} violates |y| <= |x|/3")
    rows = []
    per_n = []
    for n, Dn in _powers(D, n_max, D.box.M):
        best = 0.0
        for x, y in pairs:
            diff = abs(Dn.at(x) - 0.5 * (Dn.at(x + y) + Dn.at(x - y)))
            nx = HALF_PI * max(float(np.linalg.norm(x)), L)
            ny = HALF_PI * max(float(np.linalg.norm(y)), L)
            ratio = diff * nx ** (d + a + 2) / (n * L**a * ny**2)
            rows.append(dict(n=n, x=[int(v) for v in x], y=[int(v) for v in y], ratio=ratio))
            best = max(best, ratio)
        per_n.append(best)
    ok, lo, hi, growth = _trend_check(per_n)
    return AuditReport(
        name="derivative_bound",
        status=status(ok),
        metrics=dict(constant=hi, growth=growth, upper_half_slope=_upper_half_slope(per_n),
                     pairs=len(pairs), n_max=n_max),
        tables=dict(rows=rows, per_n=per_n),
    )
