"""Fourier transforms, Fourier-side audits and asymptotic constants.

The transform convention is ``F(k) = sum_x exp(i k.x) f(x)`` on the dual grid
``k = 2 pi n / (2M+1)``.

Small-``k`` constants (``v_alpha``, ``v_2``) are fitted on the symbol of the
*infinite-lattice* kernel restricted to a coordinate axis, which can be
evaluated at arbitrarily small ``|k|``.  A finite box only resolves
``|k| >= 2 pi / (2M+1)``, far from the two decades below ``1/L`` needed to
separate ``v_2 log(1/(L|k|))`` from the constant shift ``c_0``; the box
symbol is instead compared with the infinite one on the shells it resolves.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import integrate, optimize
from scipy.special import gamma as gamma_fn

from . import _transforms as tr
from .kernels import KernelVariant, LongRangeParams, power_law_lattice_sum, profile_orthant, tr_weights
from .lattice import BoxSpec, LatticeField, contract_axes, multiplicity_vector, shell_counts, HALF_PI
from .reports import AuditReport, status
from .special import sphere_area, zeta

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A field on the dual grid of ``box``.

    In symmetric mode ``values`` holds the orthant ``n >= 0`` of a spectrum
    that is even in every coordinate of ``k``.
    """

    box: BoxSpec
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        expected = self.box.orthant_shape if self.symmetric else self.box.shape
        if self.values.shape != expected:
            raise ValueError(f"spectral values of shape {self.values.shape}, expected {expected}")

    @property
    def period(self) -> int:
        return self.box.side

    def k_sq(self) -> np.ndarray:
        return tr.dual_k_sq(self.box.M, self.box.d, self.symmetric)

    def at(self, n) -> complex:
        n = np.asarray(n, dtype=np.int64)
        if self.symmetric:
            return self.values[tuple(np.abs(n))]
        return self.values[tuple(n + self.box.M)]

    def at_zero(self) -> float:
        return float(np.real(self.at((0,) * self.box.d)))

    def total(self, fn=None) -> float:
        """Sum over the whole dual grid of ``fn(values)``."""
        vals = self.values if fn is None else fn(self.values)
        if not self.symmetric:
            return float(np.real(np.sum(vals)))
        return contract_axes(np.real(vals), [multiplicity_vector(self.box.M)] * self.box.d)


def fourier_transform(f: LatticeField, grid_M: int | None = None) -> SpectralField:
    """Exact discrete Fourier transform of a box field.

    Parameters
    ----------
    f : LatticeField
    grid_M : int, optional
        Half-width of the (zero-padded) torus on which to transform; defaults
        to the field's own box.
    """
    M = f.box.M if grid_M is None else int(grid_M)
    if M < f.box.M:
        raise ValueError("transform grid smaller than the field")
    grid = BoxSpec(f.box.d, M, torus=True)
    period = 2 * M + 1
    if f.symmetric:
        vals = tr.even_forward(f.values, period, n_out=M + 1)
        return SpectralField(grid, vals, symmetric=True)
    vals = f.embed(M).values if M > f.box.M else f.values
    spec = tr.maybe_real(tr.full_forward(vals))
    return SpectralField(grid, spec, symmetric=False)


def inverse_fourier_transform(F: SpectralField, M: int | None = None, kind: str = "field",
                              inplace: bool = False) -> LatticeField:
    """Inverse transform, optionally cropping to the sub-box of half-width ``M``."""
    M = F.box.M if M is None else int(M)
    period = F.period
    if F.symmetric:
        if M == F.box.M:
            vals = tr.even_inverse(F.values, period, inplace=inplace)
        else:
            vals = tr.even_inverse(F.values, period, n_out=M + 1)
        return LatticeField(BoxSpec(F.box.d, M, F.box.torus), vals, symmetric=True, kind=kind)
    vals = tr.maybe_real(tr.full_inverse(F.values))
    if np.iscomplexobj(vals):
        raise ValueError("inverse transform is not real; spectrum lacks Hermitian symmetry")
    field_ = LatticeField(BoxSpec(F.box.d, F.box.M, F.box.torus), vals, kind=kind)
    return field_.restrict(M) if M < F.box.M else field_


def forward_raw(f: LatticeField, grid_M: int | None = None) -> np.ndarray:
    """Spectrum of ``f`` zero-extended to a torus of half-width ``grid_M``.

    Symmetric fields give the real orthant of the cosine transform; full
    fields give the half-spectrum of a real FFT (origin at index 0).  The
    result is only meaningful to :func:`inverse_raw` and to pointwise maps
    that commute with complex conjugation (products, powers, real rational
    functions).
    """
    M = f.box.M if grid_M is None else int(grid_M)
    if M < f.box.M:
        raise ValueError("transform grid smaller than the field")
    if f.symmetric:
        return tr.even_forward(f.values, 2 * M + 1, n_out=M + 1)
    vals = f.embed(M).values if M > f.box.M else f.values
    return np.fft.rfftn(np.fft.ifftshift(vals))


def inverse_raw(spec: np.ndarray, template: LatticeField, grid_M: int, out_M: int | None = None,
                inplace: bool = False, **kw) -> LatticeField:
    """Inverse of :func:`forward_raw`, cropped to half-width ``out_M``."""
    d = template.box.d
    out_M = grid_M if out_M is None else int(out_M)
    period = 2 * grid_M + 1
    box = BoxSpec(d, out_M, template.box.torus)
    args = dict(kind=template.kind, is_kernel=False)
    args.update(kw)
    if template.symmetric:
        if out_M == grid_M:
            vals = tr.even_inverse(spec, period, inplace=inplace)
        else:
            vals = tr.even_inverse(spec, period, n_out=out_M + 1)
        return LatticeField(box, vals, symmetric=True, **args)
    vals = np.fft.fftshift(np.fft.irfftn(spec, s=(period,) * d, axes=tuple(range(d))))
    if out_M < grid_M:
        lo = grid_M - out_M
        vals = np.ascontiguousarray(vals[(slice(lo, lo + 2 * out_M + 1),) * d])
    return LatticeField(box, vals, symmetric=False, **args)


def raw_k_sq(template: LatticeField, grid_M: int) -> np.ndarray:
    """``|k|^2`` matching the layout returned by :func:`forward_raw`."""
    d = template.box.d
    period = 2 * grid_M + 1
    if template.symmetric:
        return tr.dual_k_sq(grid_M, d, True, period)
    axes = [2 * np.pi * np.fft.fftfreq(period)] * (d - 1) + [2 * np.pi * np.fft.rfftfreq(period)]
    out = np.zeros([a.size for a in axes])
    for ax, k in enumerate(axes):
        shape = [1] * d
        shape[ax] = k.size
        out = out + (k**2).reshape(shape)
    return out


def raw_total(spec: np.ndarray, template: LatticeField, grid_M: int) -> float:
    """Sum over the whole dual grid of a real pointwise spectrum in raw layout."""
    d = template.box.d
    if template.symmetric:
        return contract_axes(np.real(spec), [multiplicity_vector(grid_M)] * d)
    period = 2 * grid_M + 1
    w = np.full(spec.shape[-1], 2.0)
    w[0] = 1.0
    return float(np.tensordot(np.real(spec).sum(axis=tuple(range(d - 1))), w, axes=1)) \
        if d > 1 else float(np.dot(np.real(spec), w))


# --------------------------------------------------------------------------
# constants

def compute_gamma(d: int, alpha: float) -> float:
    """``Gamma((d-a)/2) / (2^a pi^{d/2} Gamma(a/2))`` with ``a = alpha ^ 2``."""
    a = min(float(alpha), 2.0)
    if not d > a:
        raise ValueError(f"need d > alpha^2, got d={d}, alpha^2={a}")
    return float(gamma_fn((d - a) / 2) / (2**a * math.pi ** (d / 2) * gamma_fn(a / 2)))


@dataclass
class AsymptoticConstants:
    """Small-``k`` constants of ``1 - D_hat``.

    ``v_alpha`` is ``v_2`` for ``alpha = 2``.  ``c0`` is the second fitted
    parameter: the constant in ``k^2 (v_2 log(1/(L k)) + c0)`` when
    ``alpha = 2``, otherwise the coefficient of the leading correction.
    """

    gamma_alpha: float
    v_alpha: float
    c0: float
    fit_window: tuple
    fit_residual: float
    alpha: float
    L: float
    correction_exponent: float = float("nan")
    status: str = "PASS"
    diagnostics: dict = field(default_factory=dict)

    def model(self, k) -> np.ndarray:
        """Small-``k`` form of ``1 - D_hat(k)`` implied by the fit."""
        k = np.asarray(k, dtype=float)
        a = min(self.alpha, 2.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.alpha == 2.0:
                return k**2 * (self.v_alpha * np.log(1.0 / (self.L * k)) + self.c0)
            return self.v_alpha * k**a + self.c0 * k ** (a + self.correction_power)

    @property
    def correction_power(self) -> float:
        if self.alpha == 2.0 or not math.isfinite(self.alpha):
            return 2.0
        return abs(2.0 - self.alpha)

    def model_cutoff(self) -> float:
        """Largest ``k`` up to which :meth:`model` stays positive and increasing."""
        if self.alpha == 2.0:
            # k^2 (v log(1/(Lk)) + c0) increases while v log(1/(Lk)) + c0 > v/2
            return float(math.exp(self.c0 / self.v_alpha - 0.5) / self.L)
        if self.c0 >= 0:
            return math.pi
        a, b = min(self.alpha, 2.0), min(self.alpha, 2.0) + self.correction_power
        # derivative a v k^{a-1} + b c0 k^{b-1} vanishes at k*
        return float((a * self.v_alpha / (b * -self.c0)) ** (1.0 / (b - a)))


@functools.lru_cache(maxsize=32)
def _power_law_axis_data(d: int, alpha: float, L: float, smax: int = 100_000):
    """Axis marginal of the infinite-lattice power-law kernel.

    Returns ``(head, B, x0)``: ``head[n]`` is the normalized marginal at
    ``x_1 = n`` for ``n < x0`` and ``B n^{-1-alpha}`` is the marginal for
    ``n >= x0`` (exact up to ``exp(-2 pi x0)`` by Poisson summation, since all
    sites with ``|x_1| >= x0 > L`` are beyond the cutoff).
    """
    x0 = int(max(math.ceil(L) + 1, 8))
    pref = HALF_PI ** (-d - alpha)
    head = np.zeros(x0)
    if d == 1:
        for n in range(1, x0):
            head[n] = (HALF_PI * max(n, L)) ** (-1 - alpha)
        b_un = pref
    else:
        counts = shell_counts(d - 1, smax).astype(np.float64)
        s = np.arange(smax + 1, dtype=np.float64)
        rho_e = math.sqrt(smax + 0.5)
        area = sphere_area(d - 1)
        for n in range(x0):
            r = np.sqrt(n * n + s)
            vals = (HALF_PI * np.maximum(r, L)) ** (-d - alpha)
            if n == 0:
                vals[0] = 0.0
            direct = float(np.dot(counts, vals))
            tail = integrate.quad(lambda rho: area * rho ** (d - 2) * pref * (n * n + rho * rho) ** (-(d + alpha) / 2),
                                  rho_e, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
            head[n] = direct + tail
        b_un = pref * math.pi ** ((d - 1) / 2) * gamma_fn((1 + alpha) / 2) / gamma_fn((d + alpha) / 2)
    from scipy.special import zeta as hurwitz
    z = head[0] + 2 * head[1:].sum() + 2 * b_un * float(hurwitz(1 + alpha, x0))
    return head / z, b_un / z, x0


def _cos_deficit(k: float, n) -> np.ndarray:
    """``1 - cos(k n)`` without cancellation."""
    return 2.0 * np.sin(0.5 * k * np.asarray(n, dtype=float)) ** 2


def lattice_axis_symbol(params: LongRangeParams, k) -> np.ndarray:
    """``1 - D_hat(k e_1)`` for the kernel on the whole lattice (no box).

    Parameters
    ----------
    params : LongRangeParams
    k : array_like
        Momenta in ``(0, pi]``.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    out = np.empty_like(k)
    if params.variant is KernelVariant.DirectPowerLaw:
        head, b, x0 = _power_law_axis_data(params.d, float(params.alpha), float(params.L))
        s = 1.0 + params.alpha
        n = np.arange(1, x0)
        with mpmath.workdps(30):
            zs = mpmath.zeta(s)
            for i, ki in enumerate(k):
                full = zs - mpmath.re(mpmath.polylog(s, mpmath.expj(ki)))
                head_tail = float(np.sum(n ** (-s) * _cos_deficit(ki, n)))
                tail = float(full) - head_tail
                out[i] = 2.0 * float(np.sum(head[1:] * _cos_deficit(ki, n))) + 2.0 * b * tail
        return out
    if params.variant is KernelVariant.CompoundZeta:
        u1 = _profile_axis_marginal(params)
        s = 1.0 + 0.5 * params.alpha
        n = np.arange(1, u1.size)
        with mpmath.workdps(30):
            zs = mpmath.zeta(s)
            for i, ki in enumerate(k):
                deficit = 2.0 * float(np.sum(u1[1:] * _cos_deficit(ki, n)))
                z = 1 - mpmath.mpf(deficit)
                out[i] = float((zs - mpmath.polylog(s, z)) / zs)
        return out
    # nearest neighbour
    return _cos_deficit(1.0, k) / params.d


def _profile_axis_marginal(params: LongRangeParams) -> np.ndarray:
    """Marginal of ``U`` along the first axis, for ``x_1 = 0, 1, ..., l``."""
    u = profile_orthant(params)
    ell = u.shape[0] - 1
    w = tr_weights(ell, params.d - 1) if params.d > 1 else np.ones(())
    return np.tensordot(u, w, axes=(list(range(1, params.d)), list(range(params.d - 1)))) \
        if params.d > 1 else u.copy()


def profile_second_moment(params: LongRangeParams) -> float:
    """``sum_x |x|^2 U(x)``."""
    u1 = _profile_axis_marginal(params)
    n = np.arange(u1.size)
    return float(params.d * 2.0 * np.sum(n**2 * u1))


def analytic_v2(params: LongRangeParams) -> float:
    """Closed-form ``v_2`` for ``alpha = 2`` kernels on the whole lattice.

    Power law: the coefficient of ``n^{-3}`` in the axis marginal.
    Compound zeta: ``sigma_U^2 / (d zeta(2))``.
    """
    if params.alpha != 2:
        raise ValueError("analytic v_2 is defined for alpha = 2")
    if params.variant is KernelVariant.DirectPowerLaw:
        return float(_power_law_axis_data(params.d, 2.0, float(params.L))[1])
    if params.variant is KernelVariant.CompoundZeta:
        return profile_second_moment(params) / (params.d * zeta(2.0))
    raise ValueError("no logarithmic regime for this kernel")


def box_axis_symbol(D: LatticeField, k) -> np.ndarray:
    """``1 - D_hat(k e_1)`` of a box field at arbitrary ``k`` via its axis marginal."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    vals = D.orthant() if D.symmetric else D.values
    if D.symmetric:
        w = multiplicity_vector(D.box.M)
        marg = vals
        for _ in range(D.box.d - 1):
            marg = np.tensordot(marg, w, axes=([marg.ndim - 1], [0]))
        n = np.arange(1, D.box.M + 1)
        return np.array([2.0 * float(np.sum(marg[1:] * _cos_deficit(ki, n))) for ki in k])
    marg = vals.sum(axis=tuple(range(1, D.box.d)))
    n = np.arange(-D.box.M, D.box.M + 1)
    return np.array([float(np.sum(marg * _cos_deficit(ki, n))) for ki in k])


def estimate_v(D: LatticeField | None, params: LongRangeParams, decades: float = 2.0,
               points: int = 41) -> AsymptoticConstants:
    """Fit the small-``k`` constant of ``1 - D_hat``.

    For ``alpha = 2`` the form ``k^2 (v_2 log(1/(L k)) + c0)`` is fitted by
    linear least squares on ``k`` in ``[10^{-decades}/L, 1/(10 L)]`` (log spaced);
    otherwise the plateau ``(1 - D_hat)/k^a = v + c k^{|2-alpha|}``, with the
    best-fit free correction exponent reported alongside.

    The fit is done on :func:`lattice_axis_symbol`.  When ``D`` is given, the
    box symbol is compared with it on the box's resolved shells below ``1/L``
    and the largest relative deviation is reported.
    """
    L = float(params.L)
    k_hi = 0.1 / L
    k_lo = k_hi * 10.0 ** (-decades)
    ks = np.geomspace(k_lo, k_hi, points)
    y_full = lattice_axis_symbol(params, ks)
    a = 2.0 if params.variant is KernelVariant.NearestNeighbor else params.a
    gamma_a = compute_gamma(params.d, a) if params.d > a else float("nan")
    diagnostics = {}
    alpha_eff = float("inf") if params.variant is KernelVariant.NearestNeighbor else float(params.alpha)
    if alpha_eff == 2.0:
        y = y_full / ks**2
        X = np.stack([np.log(1.0 / (L * ks)), np.ones_like(ks)], axis=1)
        (v, c0), *_ = np.linalg.lstsq(X, y, rcond=None)
        fit = X @ np.array([v, c0])
        corr_exp = float("nan")
    else:
        power = 2.0 if not math.isfinite(alpha_eff) else abs(2.0 - alpha_eff)
        y = y_full / ks**a
        X = np.stack([np.ones_like(ks), ks**power], axis=1)
        (v, c0), *_ = np.linalg.lstsq(X, y, rcond=None)
        fit = X @ np.array([v, c0])
        corr_exp = _free_exponent_fit(ks, y, v, c0, power)
    residual = float(np.max(np.abs(fit - y) / np.abs(y)))
    if D is not None:
        diagnostics.update(_box_consistency(D, params))
    ok = v > 0 and residual < 0.05 and np.all(np.isfinite(y))
    if not ok:
        LOGGER.warning("v estimate for %s has residual %.3g", params.key(), residual)
    return AsymptoticConstants(gamma_alpha=gamma_a, v_alpha=float(v), c0=float(c0),
                               fit_window=(float(k_lo), float(k_hi)), fit_residual=residual,
                               alpha=alpha_eff, L=L, correction_exponent=corr_exp,
                               status=status(ok), diagnostics=diagnostics)


def _free_exponent_fit(ks, y, v, c, power) -> float:
    """Best-fit ``eps`` in ``v + c k^eps`` (reported, never asserted)."""
    try:
        popt, _ = optimize.curve_fit(lambda k, v_, c_, e_: v_ + c_ * k**e_, ks, y,
                                     p0=(v, c if c != 0 else 1e-3, power), maxfev=20000)
        return float(popt[2])
    except (RuntimeError, ValueError):
        return float("nan")


def _box_consistency(D: LatticeField, params: LongRangeParams) -> dict:
    L = float(params.L)
    period = 2 * D.box.M + 1
    n = np.arange(1, D.box.M + 1)
    ks = 2 * np.pi * n / period
    ks = ks[ks <= 1.0 / L]
    if ks.size == 0:
        return dict(box_symbol_max_rel_dev=float("nan"), box_shells=0)
    box = box_axis_symbol(D, ks)
    inf = lattice_axis_symbol(params, ks)
    return dict(box_symbol_max_rel_dev=float(np.max(np.abs(box - inf) / inf)), box_shells=int(ks.size))


# --------------------------------------------------------------------------
# assumption audit

@dataclass
class AssumptionAudit:
    """Empirical certificate for the Fourier-side assumptions on ``D``."""

    delta_hat: float
    small_k_ratio_range: tuple
    asy_residuals: list
    report: AuditReport


def _symbol_orthant(D: LatticeField) -> tuple:
    if D.symmetric:
        spec = tr.even_forward(D.values, D.box.side)
        return spec, tr.dual_k_sq(D.box.M, D.box.d, True)
    spec = np.real(tr.full_forward(D.values))
    return spec, tr.dual_k_sq(D.box.M, D.box.d, False)


def audit_assumption_hatD(D: LatticeField, params: LongRangeParams,
                          ratio_window: float = 20.0) -> AssumptionAudit:
    """Measure ``Delta`` and check the bounds on ``1 - D_hat``.

    PASS requires ``0 < Delta < 1`` with ``1 - D_hat > Delta`` for
    ``|k| > 1/L`` and ``1 - D_hat < 2 - Delta`` everywhere, a small-``k``
    ratio confined to ``[min, min * ratio_window]`` with ``min > 0``, and, for
    ``alpha = 2``, a successful fit of the asymptotic form.
    """
    L = float(params.L)
    a = params.a
    spec, ksq = _symbol_orthant(D)
    one_minus = 1.0 - spec
    del spec
    kk = np.sqrt(ksq)
    del ksq
    far = kk > 1.0 / L
    near = (kk > 0) & ~far
    low = float(one_minus[far].min()) if far.any() else float("nan")
    high_margin = float(2.0 - one_minus.max())
    delta = min(low, high_margin) if far.any() else high_margin
    zero_ok = abs(float(one_minus.reshape(-1)[0 if D.symmetric else one_minus.size // 2])) < 1e-12
    kn = kk[near]
    if kn.size:
        corr = np.log(np.pi / (2 * L * kn)) if params.alpha == 2 else 1.0
        ratio = one_minus[near] / ((L * kn) ** a * corr)
        rmin, rmax = float(ratio.min()), float(ratio.max())
    else:
        rmin = rmax = float("nan")
    consts = estimate_v(None, params)
    residuals = []
    if kn.size:
        shells = np.unique(np.round(kn, 12))[:12]
        for ks in shells:
            sel = np.abs(kn - ks) < 1e-9
            obs = float(np.mean(one_minus[near][sel]))
            mod = float(consts.model(ks))
            residuals.append(dict(k=float(ks), observed=obs, model=mod, rel_dev=(obs - mod) / mod))
    ratio_ok = kn.size > 0 and rmin > 0 and rmax <= ratio_window * rmin
    ok = (0 < delta < 1) and zero_ok and ratio_ok and (consts.status == "PASS")
    rep = AuditReport(
        name="assumption_hatD",
        status=status(ok),
        metrics=dict(delta_hat=delta, min_far=low, upper_margin=high_margin,
                     small_k_ratio_min=rmin, small_k_ratio_max=rmax, small_k_points=int(kn.size),
                     v_fit=consts.v_alpha, c0_fit=consts.c0, fit_residual=consts.fit_residual,
                     correction_exponent=consts.correction_exponent, low_resolution=params.low_resolution),
        tables=dict(asy_residuals=residuals),
    )
    if params.low_resolution:
        rep.notes.append("L < 3: profile and kernel are coarsely resolved")
    return AssumptionAudit(delta_hat=delta, small_k_ratio_range=(rmin, rmax),
                           asy_residuals=residuals, report=rep)


# --------------------------------------------------------------------------
# delta_m

def _cell_integral(consts: AsymptoticConstants, d: int, m: int, rho: float) -> float:
    """``(2 pi)^{-d} int_{|k| < rho} dk / model(k)^m`` for the small-``k`` model."""
    area = sphere_area(d)
    a = min(consts.alpha, 2.0)
    if m * a > d or (m * a == d and consts.alpha != 2.0):
        raise ValueError("the k=0 cell integral diverges for this (d, m, alpha)")

    log_rho = math.log(rho)

    def integrand(u):
        # k^d / model(k)^m with the powers of k combined, k = rho e^{-u}
        log_k = log_rho - u
        if consts.alpha == 2.0:
            shape = consts.v_alpha * (-math.log(consts.L) - log_k) + consts.c0
        else:
            shape = consts.v_alpha + consts.c0 * math.exp(consts.correction_power * log_k)
        return area * math.exp((d - m * a) * log_k) / shape**m

    val = integrate.quad(integrand, 0.0, np.inf, limit=400, epsrel=1e-10)[0]
    return val / (2 * math.pi) ** d


def cell_radius(d: int, period: int) -> float:
    """Radius of the ball with the volume of one dual-grid cell."""
    h = 2 * math.pi / period
    return h * (math.gamma(d / 2 + 1)) ** (1 / d) / math.sqrt(math.pi)


def compute_delta_m(D: LatticeField, m: int, params: LongRangeParams | None = None,
                    consts: AsymptoticConstants | None = None) -> float:
    """Dual-grid quadrature of ``D_hat^2 / (1 - D_hat)^m`` over ``[-pi, pi]^d``.

    The ``k = 0`` point is excluded and its cell replaced by the integral of
    the small-``k`` model over a ball of the cell's volume.
    """
    if m not in (2, 3):
        raise ValueError("m must be 2 or 3")
    if consts is None:
        if params is None:
            raise ValueError("params or consts are needed for the k=0 cell")
        consts = estimate_v(None, params)
    D = D if D.symmetric else D.to_symmetric()
    period = D.box.side
    spec = tr.even_forward(D.values, period)
    zero = (0,) * D.box.d
    spec_flat = spec.reshape(-1)
    one_minus_min = float(np.min(1.0 - spec_flat[1:]))
    if not one_minus_min > 0:
        raise ValueError("1 - D_hat vanishes away from k = 0")
    # integrand in place, chunked
    for start in range(0, spec_flat.size, 1 << 20):
        sl = spec_flat[start:start + (1 << 20)]
        sl[...] = sl * sl / (1.0 - sl) ** m if start else _safe_first(sl, m)
    spec[zero] = 0.0
    grid_sum = contract_axes(spec, [multiplicity_vector(D.box.M)] * D.box.d) / period**D.box.d
    cell = _cell_integral(consts, D.box.d, m, cell_radius(D.box.d, period))
    LOGGER.debug("delta_%d: grid %.6e, zero cell %.6e", m, grid_sum, cell)
    return grid_sum + cell


def _safe_first(sl: np.ndarray, m: int) -> np.ndarray:
    out = np.zeros_like(sl)
    out[1:] = sl[1:] ** 2 / (1.0 - sl[1:]) ** m
    return out
