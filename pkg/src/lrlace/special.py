"""Vectorized special functions not available as array ufuncs.

``polylog`` evaluates ``Li_s(z) = sum_{t>=1} z^t / t^s`` for real ``s > 1`` and
real ``z`` in ``[-1, 1]`` on whole arrays.  Three regimes are used:

* ``|z| <= 1/2``: the defining power series;
* ``z > 1/2``: the expansion in ``mu = -log z`` around ``z = 1``, whose
  coefficients are Riemann zeta values at ``s - j`` (computed once with
  mpmath);
* ``z < -1/2``: the duplication formula ``Li_s(z) + Li_s(-z) = 2^{1-s} Li_s(z^2)``.
"""

from __future__ import annotations

import functools
import logging
import math

import mpmath
import numpy as np
from scipy import special as sps

LOGGER = logging.getLogger(__name__)

_SERIES_TERMS = 60
_MU_TERMS = 32
_CHUNK = 1 << 20


@functools.lru_cache(maxsize=64)
def _mu_coefficients(s: float):
    """Coefficients of the expansion of ``Li_s(exp(-mu))`` in powers of ``mu``.

    Returns ``(c, singular_coef, log_index)`` where the expansion reads
    ``sum_j c[j] mu^j + singular_coef * mu^(s-1)`` for non-integer ``s`` and
    ``sum_j c[j] mu^j + singular_coef * mu^(n-1) * (-log mu)`` for integer
    ``s = n``.
    """
    n = round(s)
    integer = abs(s - n) < 1e-12
    c = np.zeros(_MU_TERMS)
    with mpmath.workdps(30):
        for j in range(_MU_TERMS):
            sign = (-1) ** j
            if integer and j == n - 1:
                c[j] = float(sign * mpmath.harmonic(n - 1) / mpmath.factorial(j))
            else:
                c[j] = float(sign * mpmath.zeta(s - j) / mpmath.factorial(j))
        if integer:
            singular = float((-1) ** (n - 1) / mpmath.factorial(n - 1))
        else:
            singular = float(mpmath.gamma(1 - s))
    return c, singular, integer


def _series(s: float, z: np.ndarray) -> np.ndarray:
    acc = np.zeros_like(z)
    for t in range(_SERIES_TERMS, 0, -1):
        acc = z * (t ** (-s) + acc)
    return acc


def _near_one(s: float, z: np.ndarray) -> np.ndarray:
    c, singular, integer = _mu_coefficients(float(s))
    mu = -np.log(z)
    acc = np.zeros_like(z)
    for cj in c[::-1]:
        acc = acc * mu + cj
    with np.errstate(divide="ignore", invalid="ignore"):
        if integer:
            n = round(s)
            sing = np.where(mu > 0, mu ** (n - 1) * (-np.log(mu)), 0.0)
        else:
            sing = np.where(mu > 0, mu ** (s - 1.0), 0.0)
    return acc + singular * sing


def _chunk(s: float, z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    small = np.abs(z) <= 0.5
    pos = z > 0.5
    neg = z < -0.5
    if small.any():
        out[small] = _series(s, z[small])
    if pos.any():
        out[pos] = _near_one(s, z[pos])
    if neg.any():
        zn = z[neg]
        out[neg] = 2.0 ** (1.0 - s) * _chunk(s, zn * zn) - _near_one(s, -zn)
    return out


def polylog(s: float, z, out: np.ndarray | None = None) -> np.ndarray:
    """Real polylogarithm ``Li_s(z)`` for ``s > 1`` and ``-1 <= z <= 1``.

    Parameters
    ----------
    s : float
        Order, strictly above 1.
    z : array_like
        Arguments in ``[-1, 1]``.
    out : ndarray, optional
        Destination (may alias ``z``); evaluation proceeds in chunks so the
        extra memory is bounded.
    """
    if not s > 1:
        raise ValueError("polylog is implemented for real order s > 1 only")
    z = np.asarray(z, dtype=np.float64)
    if np.any(np.abs(z) > 1 + 1e-15):
        raise ValueError("polylog argument outside [-1, 1]")
    if out is None:
        out = np.empty_like(z)
    zf = z.reshape(-1)
    of = out.reshape(-1)
    for start in range(0, zf.size, _CHUNK):
        sl = slice(start, start + _CHUNK)
        of[sl] = _chunk(s, np.clip(zf[sl], -1.0, 1.0))
    return out


def polylog_partial(s: float, z, t_max: int, out: np.ndarray | None = None) -> np.ndarray:
    """``sum_{t=1}^{t_max} z^t / t^s`` for real ``z`` in ``[-1, 1]``.

    The remainder ``sum_{t > t_max}`` is subtracted exactly where it is
    not negligible (arguments close to +-1), using the Hurwitz zeta function
    at ``z = 1`` and mpmath's Lerch transcendent elsewhere.
    """
    z = np.asarray(z, dtype=np.float64)
    # locate arguments with a non-negligible remainder before ``out`` may overwrite ``z``
    with np.errstate(under="ignore"):
        log_floor = math.log(1e-18) / (t_max + 1)
        big = np.log(np.maximum(np.abs(z), 1e-300)) > log_floor
    idx = np.flatnonzero(big.reshape(-1))
    z_big = z.reshape(-1)[idx].copy()
    out = polylog(s, z, out=out)
    if idx.size:
        of = out.reshape(-1)
        with mpmath.workdps(30):
            for i, zi in zip(idx, z_big):
                zi = float(zi)
                if zi == 1.0:
                    rem = float(sps.zeta(s, t_max + 1))
                else:
                    rem = float(mpmath.re(mpmath.mpf(zi) ** (t_max + 1)
                                          * mpmath.lerchphi(zi, s, t_max + 1)))
                of[i] -= rem
    return out


def hurwitz_tail(s: float, start: int) -> float:
    """``sum_{t >= start} t^{-s}``."""
    return float(sps.zeta(s, start))


def zeta(s: float) -> float:
    return float(sps.zeta(s, 1))


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in ``R^d``."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)
