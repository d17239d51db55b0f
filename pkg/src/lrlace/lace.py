"""Lace-expansion algebra on a torus: extraction of Pi, resummation and the effective walk.

Every operation here is a pointwise identity in Fourier space, so fields are
required to share one torus box (full or symmetric storage).  ``Pi`` is
obtained from a given ``G`` by solving ``G = Pi + Pi * pD * G`` for ``Pi^``
at every dual site; the diagrammatic coefficients are never built.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .green import GreenMethod, GreenSpec, green_function
from .kernels import LongRangeParams
from .lattice import HALF_PI, LatticeField
from .reports import AuditReport, status

LOGGER = logging.getLogger(__name__)

MIN_MARGIN = 1e-6
SERIES_TOLERANCE = 1e-14
POSITIVITY_FLOOR = -1e-12
MAX_SERIES_TERMS = 10_000


class LaceModel(str, enum.Enum):
    SAW = "SAW"
    PercIsing = "PercIsing"


def _same_torus(*fields: LatticeField):
    ref = fields[0]
    for f in fields[1:]:
        if f.box.d != ref.box.d or f.box.M != ref.box.M:
            raise ValueError("fields must live on the same torus")


def _common(*fields: LatticeField) -> list:
    if all(f.symmetric for f in fields):
        return list(fields)
    return [f.to_full() for f in fields]


@dataclass
class LaceExtract:
    """``Pi`` and its transform on the dual torus."""

    Pi_hat: spectral.SpectralField
    Pi: LatticeField
    model: LaceModel
    p: float
    margin: float
    meta: dict = field(default_factory=dict)

    @property
    def pi_hat_zero(self) -> float:
        return self.Pi_hat.at_zero()


def extract_pi(G: LatticeField, D: LatticeField, p: float, model: LaceModel = LaceModel.SAW) -> LaceExtract:
    """``Pi^ = G^ / (1 + p D^ G^)`` and its inverse transform.

    Raises
    ------
    ValueError
        If ``min |1 + p D^ G^|`` over the dual grid falls below ``1e-6``.
    """
    _same_torus(G, D)
    G, D = _common(G, D)
    Gh = spectral.fourier_transform(G)
    Dh = spectral.fourier_transform(D)
    denom = 1.0 + p * Dh.values * Gh.values
    margin = float(np.min(np.abs(denom)))
    if margin < MIN_MARGIN:
        raise ValueError(f"extraction denominator margin {margin:.3g} below {MIN_MARGIN:g}")
    Pi_hat = spectral.SpectralField(Gh.box, Gh.values / denom, Gh.symmetric)
    Pi = spectral.inverse_fourier_transform(Pi_hat, kind="Pi")
    Pi = Pi.replace(Pi.values, box=G.box)
    return LaceExtract(Pi_hat, Pi, LaceModel(model), float(p), margin,
                       meta=dict(symmetry_defect=_reflection_defect(Pi)))


def _reflection_defect(f: LatticeField) -> float:
    if f.symmetric:
        return 0.0
    return float(np.max(np.abs(f.values - np.flip(f.values))))


def reconstruct_green(extract: LaceExtract, D: LatticeField) -> LatticeField:
    """``G^ = Pi^ / (1 - p D^ Pi^)`` inverted back to the torus."""
    Pi, D = _common(extract.Pi, D)
    Dh = spectral.fourier_transform(D)
    Ph = spectral.fourier_transform(Pi)
    vals = Ph.values / (1.0 - extract.p * Dh.values * Ph.values)
    out = spectral.inverse_fourier_transform(spectral.SpectralField(Ph.box, vals, Ph.symmetric), kind="G")
    return out.replace(out.values, box=Pi.box)


def _convolve_same(f: LatticeField, g: LatticeField) -> LatticeField:
    spec = spectral.forward_raw(f) * spectral.forward_raw(g)
    out = spectral.inverse_raw(spec, f, f.box.M, inplace=True, kind="convolution")
    return out.replace(out.values, box=f.box)


def resum_pi_series(pi_small: LatticeField, D_at_o: float, p: float, model: LaceModel) -> LatticeField:
    """``Pi_p`` from ``pi_p`` by the model's geometric convolution series.

    SAW: ``Pi = delta + sum_{n>=1} (-p D(o) delta + pi)^{*n}``.
    PercIsing: ``Pi = pi + sum_{n>=1} (-p D(o))^n pi^{*(n+1)}``.
    Terms are added until their 1-norm drops below ``1e-14``.
    """
    model = LaceModel(model)
    norm_pi = pi_small.abs_total()
    q = p * float(D_at_o)
    delta = LatticeField.delta(pi_small.box, symmetric=pi_small.symmetric)
    if model is LaceModel.SAW:
        if not q + norm_pi < 1:
            raise ValueError(f"p D(o) + |pi|_1 = {q + norm_pi:.3g} must be below 1")
        step = pi_small - delta.scaled(q)
        total = delta.replace(delta.values.copy(), kind="Pi")
        term = delta
    else:
        if not q * norm_pi < 1:
            raise ValueError(f"p D(o) |pi|_1 = {q * norm_pi:.3g} must be below 1")
        if q == 0.0:
            return pi_small.replace(pi_small.values.copy(), kind="Pi")
        step = pi_small.scaled(-q)
        total = pi_small.replace(pi_small.values.copy(), kind="Pi")
        term = pi_small
    terms = 0
    for terms in range(1, MAX_SERIES_TERMS + 1):
        term = _convolve_same(term, step)
        total = total + term
        if term.abs_total() < SERIES_TOLERANCE:
            break
    else:
        raise ArithmeticError("lace resummation did not reach tolerance")
    total.meta.update(terms=terms, model=model.value)
    return total.replace(total.values, kind="Pi")


@dataclass
class EffectiveStep:
    """``D_eff = (Pi * D) / Pi^(0)`` and the effective fugacity ``p Pi^(0)``."""

    kernel: LatticeField
    fugacity_eff: float
    report: AuditReport


def effective_step(Pi: LatticeField, D: LatticeField, p: float = 1.0,
                   params: LongRangeParams | None = None) -> EffectiveStep:
    """Effective one-step distribution with positivity, mass and symbol checks.

    ``params`` enables the re-audit of the small-``k`` symbol.
    """
    _same_torus(Pi, D)
    Pi, D = _common(Pi, D)
    pi0 = Pi.total()
    if not pi0 > 0:
        raise ValueError("Pi^(0) must be positive")
    eff = _convolve_same(Pi, D)
    eff = eff.replace(eff.values / pi0, kind="kernel", is_kernel=True)
    minimum = eff.min()
    mass = eff.total()
    metrics = dict(min_value=minimum, mass_defect=abs(mass - 1.0), pi_hat_zero=pi0,
                   fugacity_eff=p * pi0, distance_to_D=(eff - D).abs_total())
    ok = minimum >= POSITIVITY_FLOOR and abs(mass - 1.0) < 1e-12
    notes = []
    if params is not None:
        try:
            audit = spectral.audit_assumption_hatD(eff, params)
            metrics["symbol_audit"] = audit.report.status
            ok = ok and audit.report.passed
        except ValueError as exc:
            notes.append(f"symbol audit skipped: {exc}")
    report = AuditReport("effective_step", status(ok), metrics, notes=notes)
    return EffectiveStep(eff, p * pi0, report)


def verify_green_identity(G: LatticeField, extract: LaceExtract, eff: EffectiveStep,
                          params: LongRangeParams, budget: float = 1e-10, window: float = 0.6) -> AuditReport:
    """Compare ``G`` with ``Pi * S_q[D_eff]`` at ``q = p Pi^(0)``.

    ``budget`` is the declared truncation budget for the input ``G``.
    """
    q = eff.fugacity_eff
    if not q < 1:
        raise ValueError(f"effective fugacity {q:.6g} must be below 1")
    K = eff.kernel
    S = green_function(K, GreenSpec(q, GreenMethod.FourierInversion, params))
    Pi = extract.Pi if extract.Pi.symmetric == S.symmetric else extract.Pi.to_full()
    if S.symmetric != Pi.symmetric:
        S = S.to_full()
    rebuilt = _convolve_same(Pi, S)
    ref = G if G.symmetric == rebuilt.symmetric else G.to_full()
    R = max(1, int(window * G.box.M))
    diff = np.abs((rebuilt - ref).restrict(R).values)
    scale = np.abs(ref.restrict(R).values)
    deviation = float(np.max(diff / np.maximum(scale, 1e-300)))
    chi_direct = ref.total()
    pi0 = extract.pi_hat_zero
    chi_lace = pi0 / (1 - extract.p * pi0)
    chi_dev = abs(chi_direct - chi_lace) / abs(chi_direct)
    ok = deviation <= budget and chi_dev <= budget
    return AuditReport("green_identity", status(ok),
                       dict(max_relative_deviation=deviation, chi_direct=chi_direct, chi_lace=chi_lace,
                            chi_relative_deviation=chi_dev, budget=budget, fugacity_eff=q, window=R))


def pi_decay_slope(Pi: LatticeField, d: int, r_min: float = 1.0, ell: float | None = None) -> dict:
    """Log-log slope of ``max |Pi(x)|`` over radial shells, away from the origin."""
    r = np.sqrt(Pi.radius_sq().astype(np.float64)).ravel()
    v = np.abs(Pi.values).ravel()
    R = 0.6 * Pi.box.M
    edges = np.unique(np.round(np.geomspace(max(r_min, 1.0), max(R, r_min + 1), 8), 6))
    xs, ys = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (r >= lo) & (r < hi)
        if np.any(sel) and np.max(v[sel]) > 0:
            xs.append(math.sqrt(lo * hi))
            ys.append(float(np.max(v[sel])))
    slope = float(np.polyfit(np.log(xs), np.log(ys), 1)[0]) if len(xs) >= 2 else float("nan")
    out = dict(empirical_slope=slope, shells=len(xs))
    if ell is not None:
        out["bound_exponent"] = ell * (2 - d)
    return out


def bootstrap_diagnostics(G: LatticeField, S1: LatticeField, p: float, L: float,
                          window: float = 0.6) -> dict:
    """``lambda = sup S_1 / env`` and ``g_p = p v sup G / (lambda env)``,
    ``env = <x>_L^{2-d} / log<x/L>_1`` over ``0 < |x|_inf <= window M``.
    """
    d = G.box.d

    def sup_ratio(F: LatticeField) -> float:
        R = max(1, int(window * F.box.M))
        Fr = F.restrict(R)
        rho = np.sqrt(Fr.radius_sq().astype(np.float64))
        ex = HALF_PI * np.maximum(rho, L)
        env = ex ** (2 - d) / np.log(ex / L)
        mask = rho > 0
        return float(np.max(Fr.values[mask] / env[mask]))

    lam = sup_ratio(S1)
    g = max(p, sup_ratio(G) / lam)
    return dict(lambda_=lam, g_p=g, below_three=g <= 3)
