"""Long-range one-step distributions on a finite box.

Two families are built:

``DirectPowerLaw``
    ``D(x) = <x>_L^{-d-alpha} / Z`` for ``x != o`` and ``D(o) = 0``.

``CompoundZeta``
    ``D = sum_t T(t) U^{*t}`` with ``T(t) = t^{-1-alpha/2} / zeta(1+alpha/2)``
    and ``U`` the discretized profile ``h(x/L)`` with the origin removed.
    In Fourier space this is ``Li_s(U_hat) / zeta(s)`` with ``s = 1 + alpha/2``,
    which is evaluated on a zero-padded torus and then cropped to the box.

Both are truncated to the box and renormalized; the discarded mass is
reported in a :class:`TailReport`.
"""

from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _transforms as tr
from .lattice import BoxSpec, LatticeField, shell_counts, HALF_PI, _broadcast_sum
from .reports import AuditReport
from .special import hurwitz_tail, polylog_partial, sphere_area, zeta

LOGGER = logging.getLogger(__name__)

NEGATIVE_FLOOR = -1e-14


class KernelVariant(str, enum.Enum):
    DirectPowerLaw = "DirectPowerLaw"
    CompoundZeta = "CompoundZeta"
    NearestNeighbor = "NearestNeighbor"


def _uniform_profile(u: np.ndarray) -> np.ndarray:
    d = u.shape[-1]
    return np.where(np.max(np.abs(u), axis=-1) <= 1.0, 2.0**-d, 0.0)


def _ball_profile(u: np.ndarray) -> np.ndarray:
    return np.where(np.sum(u * u, axis=-1) <= 1.0, 1.0, 0.0)


def _tent_profile(u: np.ndarray) -> np.ndarray:
    return np.prod(np.clip(1.0 - np.abs(u), 0.0, None), axis=-1)


#: profile name -> (function of scaled points u = x/L, support radius in the sup norm)
PROFILES = {
    "uniform": (_uniform_profile, 1.0),
    "ball": (_ball_profile, 1.0),
    "tent": (_tent_profile, 1.0),
}


@dataclass(frozen=True)
class LongRangeParams:
    """Parameters fixing a one-step distribution.

    Parameters
    ----------
    d : int
    alpha : float
        Decay exponent, positive.
    L : float
        Spread-out parameter, at least 1.
    variant : KernelVariant
    profile : str
        Name of the profile ``h`` for the compound-zeta family.
    t_max : int or None
        Truncation of the compound-zeta ``t``-sum; ``None`` picks
        ``10 L^2 (2M+1)^2`` capped at ``10**6``.
    """

    d: int
    alpha: float
    L: float
    variant: KernelVariant = KernelVariant.DirectPowerLaw
    profile: str = "uniform"
    t_max: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", KernelVariant(self.variant))
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.L >= 1:
            raise ValueError(f"L must be at least 1, got {self.L}")
        if self.t_max is not None and self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; known: {sorted(PROFILES)}")

    @property
    def a(self) -> float:
        """``alpha ^ 2``."""
        return min(float(self.alpha), 2.0)

    @property
    def low_resolution(self) -> bool:
        """Profiles are coarsely resolved below ``L = 3``."""
        return self.L < 3

    def resolved_t_max(self, M: int) -> int:
        if self.t_max is not None:
            return int(self.t_max)
        return int(min(10 * self.L**2 * (2 * M + 1) ** 2, 10**6))

    def key(self) -> str:
        return (f"d={self.d};alpha={self.alpha!r};L={self.L!r};variant={self.variant.value};"
                f"profile={self.profile};t_max={self.t_max}")


@dataclass(frozen=True)
class TailReport:
    """Mass of the infinite-lattice kernel discarded by the box."""

    truncated_mass: float
    renormalization_factor: float
    components: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.truncated_mass < 1:
            raise ValueError(f"truncated mass {self.truncated_mass} outside [0, 1)")

    @classmethod
    def from_mass(cls, mass: float, **components) -> "TailReport":
        mass = max(float(mass), 0.0)
        return cls(mass, 1.0 / (1.0 - mass), dict(components))


# --------------------------------------------------------------------------
# direct power law

def _power_law_profile_inplace(r: np.ndarray, d: int, alpha: float, L: float) -> np.ndarray:
    """Turn an array of |x|^2 values into ``<x>_L^{-d-alpha}`` in place."""
    np.sqrt(r, out=r)
    np.maximum(r, float(L), out=r)
    r *= HALF_PI
    np.power(r, -(d + alpha), out=r)
    return r


@functools.lru_cache(maxsize=64)
def power_law_lattice_sum(d: int, alpha: float, L: float, smax: int | None = None) -> float:
    """``sum_{x != o} <x>_L^{-d-alpha}`` over all of ``Z^d``.

    Exact shell sums up to ``|x|^2 <= smax`` plus the radial integral beyond,
    taken from the radius of the ball whose volume equals the number of
    lattice points summed.
    """
    if smax is None:
        smax = int(max(400 * L * L, 40000))
    counts = shell_counts(d, smax).astype(np.float64)
    s = np.arange(smax + 1, dtype=np.float64)
    vals = _power_law_profile_inplace(s.copy(), d, alpha, L)
    total = float(np.dot(counts[1:], vals[1:]))
    r_eff = (counts.sum() * d / sphere_area(d)) ** (1.0 / d)
    tail = sphere_area(d) * HALF_PI ** (-d - alpha) * r_eff ** (-alpha) / alpha
    return total + tail


def build_power_law_kernel(params: LongRangeParams, box: BoxSpec,
                           symmetric: bool = True) -> tuple:
    """Truncated and renormalized ``<x>_L^{-d-alpha}`` kernel with ``D(o) = 0``.

    Returns
    -------
    (LatticeField, TailReport)
    """
    if params.variant is not KernelVariant.DirectPowerLaw:
        raise ValueError("build_power_law_kernel needs the DirectPowerLaw variant")
    if box.d != params.d:
        raise ValueError("box and parameter dimensions differ")
    if box.M == 0:
        raise ValueError("degenerate box M=0: the kernel normalizer vanishes")
    c = np.arange(box.M + 1) if symmetric else box.coords()
    vals = _broadcast_sum([c.astype(np.float64) ** 2] * box.d)
    _power_law_profile_inplace(vals, box.d, params.alpha, params.L)
    vals[(0,) * box.d if symmetric else (box.M,) * box.d] = 0.0
    field_ = LatticeField(box, vals, symmetric=symmetric, kind="kernel", is_kernel=True)
    z_box = field_.total()
    if not z_box > 0:
        raise ValueError("kernel normalizer vanished")
    vals /= z_box
    z_inf = power_law_lattice_sum(box.d, float(params.alpha), float(params.L),
                                  int(max(400 * params.L**2, 4 * box.d * box.M**2, 40000)))
    mass = 1.0 - z_box / z_inf
    if mass >= 0.5:
        raise ValueError(f"box too small: truncated mass {mass:.3f} >= 0.5")
    tail = TailReport.from_mass(mass, spatial=max(mass, 0.0))
    field_.meta.update(params=params.key(), truncated_mass=tail.truncated_mass)
    LOGGER.debug("power-law kernel d=%d M=%d L=%g: truncated mass %.3e", box.d, box.M, params.L, mass)
    return field_, tail


# --------------------------------------------------------------------------
# compound zeta

def profile_orthant(params: LongRangeParams) -> np.ndarray:
    """Normalized discretized profile ``U`` on its own small orthant.

    Entry ``j`` of the returned ``(l+1,)*d`` array is ``U(j)`` where ``l`` is
    the largest coordinate inside the profile support.
    """
    fn, support = PROFILES[params.profile]
    ell = int(math.floor(support * params.L + 1e-12))
    grid = np.stack(np.meshgrid(*([np.arange(ell + 1)] * params.d), indexing="ij"), axis=-1)
    vals = fn(grid / float(params.L)).astype(np.float64)
    vals[(0,) * params.d] = 0.0
    w = tr_weights(ell, params.d)
    mass = float(np.sum(vals * w))
    if not mass > 0:
        raise ValueError("discretized profile has no mass off the origin")
    return vals / mass


def tr_weights(ell: int, d: int) -> np.ndarray:
    w = np.where(np.arange(ell + 1) == 0, 1.0, 2.0)
    out = w
    for _ in range(d - 1):
        out = np.multiply.outer(out, w)
    return out


def build_compound_zeta_kernel(params: LongRangeParams, box: BoxSpec,
                               symmetric: bool = True, pad: int | None = None) -> tuple:
    """Compound-zeta kernel through spectral powers of ``U_hat`` on a padded torus.

    Parameters
    ----------
    pad : int, optional
        Extra half-width of the torus on which the ``t``-sum is evaluated.
        Default ``max(M // 2, 4 ceil(L))``.

    Returns
    -------
    (LatticeField, TailReport)
    """
    if params.variant is not KernelVariant.CompoundZeta:
        raise ValueError("build_compound_zeta_kernel needs the CompoundZeta variant")
    if box.d != params.d:
        raise ValueError("box and parameter dimensions differ")
    if box.M == 0:
        raise ValueError("degenerate box M=0")
    d = box.d
    s = 1.0 + 0.5 * params.alpha
    t_max = params.resolved_t_max(box.M)
    if pad is None:
        pad = max(box.M // 2, 4 * int(math.ceil(params.L)))
    Mp = box.M + pad
    period = 2 * Mp + 1
    u = profile_orthant(params)
    if u.shape[0] > Mp + 1:
        raise ValueError("profile support exceeds the padded grid")
    spec = tr.even_forward(u, period, n_out=Mp + 1)
    np.clip(spec, -1.0, 1.0, out=spec)
    polylog_partial(s, spec, t_max, out=spec)
    spec /= zeta(s)
    vals = tr.even_inverse(spec, period, inplace=True)
    del spec
    padded = LatticeField(BoxSpec(d, Mp), vals, symmetric=True)
    mass_partial = padded.total()
    vals = np.ascontiguousarray(vals[(slice(0, box.M + 1),) * d])
    del padded
    negatives = int(np.count_nonzero(vals < 0))
    worst = float(vals.min())
    if worst < NEGATIVE_FLOOR * max(1.0, float(vals.max())) * 1e4:
        LOGGER.warning("compound-zeta kernel has negative entries down to %.3e", worst)
    np.maximum(vals, 0.0, out=vals)
    if negatives:
        LOGGER.debug("clamped %d tiny negative compound-zeta entries (min %.2e)", negatives, worst)
    field_ = LatticeField(box, vals, symmetric=True, kind="kernel", is_kernel=True)
    z_box = field_.total()
    vals /= z_box
    zeta_tail = hurwitz_tail(s, t_max + 1) / zeta(s)
    spatial = max(mass_partial - z_box, 0.0)
    mass = spatial + zeta_tail
    if mass >= 0.5:
        raise ValueError(f"box too small: truncated mass {mass:.3f} >= 0.5")
    tail = TailReport.from_mass(mass, spatial=spatial, zeta_tail=zeta_tail,
                                zeta_tail_bound=(2.0 / params.alpha) * t_max ** (-params.alpha / 2),
                                t_max=t_max, pad=pad, clamped=negatives)
    field_.meta.update(params=params.key(), truncated_mass=mass, t_max=t_max)
    if not symmetric:
        field_ = field_.to_full()
    return field_, tail


def nearest_neighbor_kernel(box: BoxSpec, symmetric: bool = True) -> LatticeField:
    """Uniform distribution on the ``2d`` nearest neighbours of the origin."""
    if box.M < 1:
        raise ValueError("nearest-neighbour kernel needs M >= 1")
    shape = box.orthant_shape if symmetric else box.shape
    vals = np.zeros(shape)
    centre = 0 if symmetric else box.M
    for ax in range(box.d):
        idx = [centre] * box.d
        idx[ax] = centre + 1
        vals[tuple(idx)] = 1.0 / (2 * box.d)
        if not symmetric:
            idx[ax] = centre - 1
            vals[tuple(idx)] = 1.0 / (2 * box.d)
    return LatticeField(box, vals, symmetric=symmetric, kind="kernel", is_kernel=True)


def build_kernel(params: LongRangeParams, box: BoxSpec, symmetric: bool = True) -> tuple:
    """Dispatch on ``params.variant``."""
    if params.variant is KernelVariant.DirectPowerLaw:
        return build_power_law_kernel(params, box, symmetric=symmetric)
    if params.variant is KernelVariant.CompoundZeta:
        return build_compound_zeta_kernel(params, box, symmetric=symmetric)
    return nearest_neighbor_kernel(box, symmetric=symmetric), TailReport.from_mass(0.0)


def kernel_audit(D: LatticeField) -> AuditReport:
    """Negativity, reflection-symmetry and normalization defects of a kernel."""
    neg = max(0.0, -D.min())
    if D.symmetric:
        sym = 0.0
    else:
        sym = float(np.max(np.abs(D.values - np.flip(D.values))))
    perm_defect = _transpose_defect(D.values) if D.box.d > 1 else 0.0
    norm = abs(D.total() - 1.0)
    ok = neg == 0.0 and sym == 0.0 and norm < 1e-12
    return AuditReport(
        name="kernel_audit",
        status="PASS" if ok else "FAIL",
        metrics=dict(max_negativity=neg, symmetry_defect=sym, normalization_defect=norm,
                     permutation_defect=perm_defect),
    )


def _transpose_defect(vals: np.ndarray) -> float:
    perm = list(range(vals.ndim))
    perm[0], perm[1] = perm[1], perm[0]
    return float(np.max(np.abs(vals - np.transpose(vals, perm))))
