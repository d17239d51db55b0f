"""Finite lattice windows, site enumeration and regularized norms.

A :class:`BoxSpec` is the cube ``[-M, M]^d`` of ``Z^d``.  Dense functions on it
are carried by :class:`LatticeField`, which has two storage modes:

* ``full``: an array of shape ``(2M+1,)*d`` indexed so that array index
  ``i`` along an axis is the coordinate ``i - M``;
* ``symmetric``: an array of shape ``(M+1,)*d`` holding the non-negative
  orthant of a field invariant under every coordinate sign flip.  Site ``x``
  is stored at ``|x|`` (componentwise).  A site in the orthant with ``j``
  nonzero coordinates represents ``2**j`` sites of the box.

The symmetric mode is what makes four- and six-dimensional boxes with
``M ~ 100`` fit in memory.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

LOGGER = logging.getLogger(__name__)

HALF_PI = 0.5 * np.pi

#: refuse to materialize boxes with more sites than this
MAX_SITES = 2**40


@dataclass(frozen=True)
class BoxSpec:
    """The window ``[-M, M]^d`` of the hypercubic lattice.

    Parameters
    ----------
    d : int
        Dimension, at least 1.
    M : int
        Half-width; the side length ``2M+1`` is odd so the origin is central.
    torus : bool
        Whether convolutions on this box wrap around (periodic boundary).
    """

    d: int
    M: int
    torus: bool = False

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")
        if int(self.M) != self.M or self.M < 0:
            raise ValueError(f"half-width must be a non-negative integer, got {self.M}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "M", int(self.M))

    @property
    def side(self) -> int:
        return 2 * self.M + 1

    @property
    def n_sites(self) -> int:
        return self.side**self.d

    @property
    def shape(self) -> tuple:
        return (self.side,) * self.d

    @property
    def orthant_shape(self) -> tuple:
        return (self.M + 1,) * self.d

    def with_M(self, M: int) -> "BoxSpec":
        return BoxSpec(self.d, M, self.torus)

    def with_torus(self, torus: bool) -> "BoxSpec":
        return BoxSpec(self.d, self.M, torus)

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return x.shape == (self.d,) and bool(np.all(np.abs(x) <= self.M))

    def index_of(self, x) -> tuple:
        """Array index of site ``x`` in full storage."""
        x = np.asarray(x, dtype=np.int64)
        if not self.contains(x):
            raise IndexError(f"site {tuple(x)} outside box d={self.d}, M={self.M}")
        return tuple(int(c) + self.M for c in x)

    def site_of(self, index) -> tuple:
        """Inverse of :meth:`index_of`."""
        index = tuple(int(i) for i in index)
        if len(index) != self.d or any(i < 0 or i >= self.side for i in index):
            raise IndexError(f"index {index} outside box")
        return tuple(i - self.M for i in index)

    def coords(self) -> np.ndarray:
        """Coordinates along one axis, ``-M..M``."""
        return np.arange(-self.M, self.M + 1)

    def radius_sq(self, symmetric: bool = False) -> np.ndarray:
        """Squared Euclidean norm of every site as an ``int64`` array."""
        c = np.arange(self.M + 1) if symmetric else self.coords()
        return _broadcast_sum([c.astype(np.int64) ** 2] * self.d)


@dataclass(frozen=True)
class RegNorm:
    """The regularized norm ``<x>_r = (pi/2) max(|x|, r)``."""

    r: float = 1.0

    def __post_init__(self):
        if not self.r >= 1:
            raise ValueError(f"regularized norm needs r >= 1, got {self.r}")

    def __call__(self, x) -> float:
        return reg_norm(x, self.r)


def reg_norm(x, r: float) -> float:
    """Regularized Euclidean norm ``(pi/2) * max(|x|, r)``.

    Parameters
    ----------
    x : array_like
        Lattice point (or any real vector).
    r : float
        Cutoff, at least 1.

    Returns
    -------
    float
    """
    if not r >= 1:
        raise ValueError(f"regularized norm needs r >= 1, got {r}")
    return HALF_PI * max(float(np.linalg.norm(np.asarray(x, dtype=float))), float(r))


def log_reg_norm(x, L: float) -> float:
    """``log <x/L>_1``, which is at least ``log(pi/2) > 0``."""
    if not L >= 1:
        raise ValueError(f"spread-out parameter must satisfy L >= 1, got {L}")
    x = np.asarray(x, dtype=float) / float(L)
    return float(np.log(reg_norm(x, 1.0)))


def reg_norm_radial(rho, r: float) -> np.ndarray:
    """Vectorized ``<x>_r`` as a function of ``rho = |x|``."""
    return HALF_PI * np.maximum(np.asarray(rho, dtype=float), float(r))


def log_reg_norm_radial(rho, L: float) -> np.ndarray:
    """Vectorized ``log <x/L>_1`` as a function of ``rho = |x|``."""
    return np.log(HALF_PI * np.maximum(np.asarray(rho, dtype=float) / float(L), 1.0))


def enumerate_box(box: BoxSpec) -> list:
    """All sites of ``box`` in lexicographic order, first coordinate slowest.

    The origin sits at position ``(n_sites - 1) // 2``.
    """
    if box.n_sites > MAX_SITES:
        raise OverflowError(f"box with {box.n_sites} sites is not addressable")
    grids = np.meshgrid(*([box.coords()] * box.d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return [tuple(int(c) for c in p) for p in pts]


def _broadcast_sum(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """``out[i1,...,id] = v1[i1] + ... + vd[id]`` without index arrays."""
    d = len(vectors)
    out = None
    for ax, v in enumerate(vectors):
        shape = [1] * d
        shape[ax] = v.size
        term = v.reshape(shape)
        out = term if out is None else out + term
    shape = tuple(v.size for v in vectors)
    if d == 1 or out.shape != shape:
        return np.array(np.broadcast_to(out, shape), dtype=out.dtype)
    return out


def multiplicity_vector(M: int) -> np.ndarray:
    """Per-axis multiplicity of orthant entries: 1 at 0, 2 elsewhere."""
    w = np.full(M + 1, 2.0)
    w[0] = 1.0
    return w


def contract_axes(values: np.ndarray, vectors: Sequence[np.ndarray]) -> float:
    """``sum values[i] * v1[i1] * ... * vd[id]`` one axis at a time."""
    out = values
    for v in vectors:
        out = np.tensordot(v, out, axes=([0], [0]))
    return float(out)


def orthant_to_full(values: np.ndarray) -> np.ndarray:
    """Reflect an orthant array into the full box."""
    out = values
    for ax in range(values.ndim):
        mirrored = np.flip(np.take(out, np.arange(1, out.shape[ax]), axis=ax), axis=ax)
        out = np.concatenate([mirrored, out], axis=ax)
    return out


def full_to_orthant(values: np.ndarray) -> np.ndarray:
    """Non-negative orthant slice of a full-box array."""
    M = (values.shape[0] - 1) // 2
    return np.ascontiguousarray(values[(slice(M, None),) * values.ndim])


def reflection_defect(values: np.ndarray) -> float:
    """Largest change of a full-box array under a single-axis sign flip or transpose."""
    defect = 0.0
    for ax in range(values.ndim):
        defect = max(defect, float(np.max(np.abs(values - np.flip(values, axis=ax)))))
    if values.ndim > 1:
        perm = list(range(values.ndim))
        perm[0], perm[1] = perm[1], perm[0]
        defect = max(defect, float(np.max(np.abs(values - np.transpose(values, perm)))))
    return defect


@dataclass(frozen=True, eq=False)
class LatticeField:
    """A dense real function on a :class:`BoxSpec`.

    Parameters
    ----------
    box : BoxSpec
    values : ndarray
        ``(2M+1,)*d`` array in full mode, ``(M+1,)*d`` in symmetric mode.
    symmetric : bool
        Storage mode flag, see the module docstring.
    kind : str
        Free-form tag used for cache keys and reports.
    is_kernel : bool
        Whether the field is a probability kernel.
    """

    box: BoxSpec
    values: np.ndarray
    symmetric: bool = False
    kind: str = "field"
    is_kernel: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.box.orthant_shape if self.symmetric else self.box.shape
        if self.values.shape != expected:
            raise ValueError(f"values of shape {self.values.shape} do not match box shape {expected}")
        if not np.issubdtype(self.values.dtype, np.floating):
            object.__setattr__(self, "values", self.values.astype(np.float64))

    # construction helpers -------------------------------------------------
    @classmethod
    def delta(cls, box: BoxSpec, symmetric: bool = True) -> "LatticeField":
        vals = np.zeros(box.orthant_shape if symmetric else box.shape)
        vals[(0,) * box.d if symmetric else (box.M,) * box.d] = 1.0
        return cls(box, vals, symmetric=symmetric, kind="delta")

    @classmethod
    def from_function(cls, box: BoxSpec, fn, symmetric: bool = False, **kw) -> "LatticeField":
        """Evaluate ``fn(site_tuple)`` at every site (small boxes only)."""
        shape = box.orthant_shape if symmetric else box.shape
        vals = np.empty(shape)
        offset = 0 if symmetric else box.M
        for idx in np.ndindex(*shape):
            vals[idx] = fn(tuple(i - offset for i in idx))
        return cls(box, vals, symmetric=symmetric, **kw)

    def replace(self, values: np.ndarray, **kw) -> "LatticeField":
        args = dict(box=self.box, symmetric=self.symmetric, kind=self.kind,
                    is_kernel=self.is_kernel, meta=dict(self.meta))
        args.update(kw)
        return LatticeField(values=values, **args)

    # views ---------------------------------------------------------------
    def full(self) -> np.ndarray:
        """Full-box array (materializes the reflection in symmetric mode)."""
        if not self.symmetric:
            return self.values
        if self.box.n_sites * 8 > 2**32:
            raise MemoryError("refusing to expand a symmetric field above 4 GiB")
        return orthant_to_full(self.values)

    def orthant(self) -> np.ndarray:
        return self.values if self.symmetric else full_to_orthant(self.values)

    def to_full(self) -> "LatticeField":
        return self if not self.symmetric else self.replace(self.full(), symmetric=False)

    def to_symmetric(self, check: bool = True, atol: float = 0.0) -> "LatticeField":
        """Orthant storage; with ``check`` the field must be reflection symmetric."""
        if self.symmetric:
            return self
        if check:
            for ax in range(self.box.d):
                if not np.allclose(self.values, np.flip(self.values, axis=ax), rtol=0, atol=atol):
                    raise ValueError("field is not invariant under coordinate sign flips")
        return self.replace(full_to_orthant(self.values), symmetric=True)

    def at(self, x) -> float:
        x = np.asarray(x, dtype=np.int64)
        if not self.box.contains(x):
            raise IndexError(f"site {tuple(x)} outside box")
        if self.symmetric:
            return float(self.values[tuple(np.abs(x))])
        return float(self.values[tuple(x + self.box.M)])

    def weights(self) -> np.ndarray:
        """Number of box sites represented by each stored entry."""
        if not self.symmetric:
            return np.ones(self.box.shape)
        w = multiplicity_vector(self.box.M)
        out = w
        for _ in range(self.box.d - 1):
            out = np.multiply.outer(out, w)
        return out

    def total(self) -> float:
        """Sum over all box sites."""
        if not self.symmetric:
            return float(np.sum(self.values))
        return contract_axes(self.values, [multiplicity_vector(self.box.M)] * self.box.d)

    def weighted_total(self, fn) -> float:
        """Sum over box sites of ``fn(values)`` (``fn`` elementwise)."""
        if not self.symmetric:
            return float(np.sum(fn(self.values)))
        return contract_axes(fn(self.values), [multiplicity_vector(self.box.M)] * self.box.d)

    def abs_total(self) -> float:
        return self.weighted_total(np.abs)

    def max(self) -> float:
        return float(np.max(self.values))

    def min(self) -> float:
        return float(np.min(self.values))

    def radius_sq(self) -> np.ndarray:
        return self.box.radius_sq(symmetric=self.symmetric)

    def sup_norm_coords(self) -> np.ndarray:
        """``||x||_inf`` for every stored entry."""
        c = np.arange(self.box.M + 1) if self.symmetric else np.abs(self.box.coords())
        out = c
        for _ in range(self.box.d - 1):
            out = np.maximum.outer(out, c)
        return out

    def restrict(self, M: int) -> "LatticeField":
        """Crop to the sub-box of half-width ``M``."""
        if M > self.box.M:
            raise ValueError("cannot restrict to a larger box")
        if self.symmetric:
            vals = self.values[(slice(0, M + 1),) * self.box.d]
        else:
            lo, hi = self.box.M - M, self.box.M + M + 1
            vals = self.values[(slice(lo, hi),) * self.box.d]
        return self.replace(np.ascontiguousarray(vals), box=self.box.with_M(M))

    def embed(self, M: int) -> "LatticeField":
        """Zero-extend to a larger box of half-width ``M``."""
        if M < self.box.M:
            raise ValueError("cannot embed into a smaller box")
        big = self.box.with_M(M)
        vals = np.zeros(big.orthant_shape if self.symmetric else big.shape)
        if self.symmetric:
            vals[(slice(0, self.box.M + 1),) * self.box.d] = self.values
        else:
            lo, hi = M - self.box.M, M + self.box.M + 1
            vals[(slice(lo, hi),) * self.box.d] = self.values
        return self.replace(vals, box=big)

    def __add__(self, other: "LatticeField") -> "LatticeField":
        _check_compatible(self, other)
        return self.replace(self.values + other.values, kind="field", is_kernel=False)

    def __sub__(self, other: "LatticeField") -> "LatticeField":
        _check_compatible(self, other)
        return self.replace(self.values - other.values, kind="field", is_kernel=False)

    def scaled(self, c: float) -> "LatticeField":
        return self.replace(self.values * c, is_kernel=False)


def _check_compatible(a: LatticeField, b: LatticeField):
    if a.box.d != b.box.d or a.box.M != b.box.M or a.symmetric != b.symmetric:
        raise ValueError("fields live on different boxes or storage modes")


def match_storage(*fields: LatticeField) -> list:
    """Bring fields to a common storage mode (symmetric only if all are)."""
    if all(f.symmetric for f in fields):
        return list(fields)
    return [f.to_full() for f in fields]


def shell_counts(d: int, smax: int, bound: int | None = None) -> np.ndarray:
    """Number of points of ``Z^d`` with squared norm ``s`` for ``s <= smax``.

    With ``bound`` only points with every ``|x_i| <= bound`` are counted.
    Exact integer arithmetic throughout.
    """
    if d == 0:
        out = np.zeros(smax + 1, dtype=np.int64)
        out[0] = 1
        return out
    jmax = math.isqrt(smax)
    if bound is not None:
        jmax = min(jmax, int(bound))
    counts = np.zeros(smax + 1, dtype=np.int64)
    counts[0] = 1
    for _ in range(d):
        new = counts.copy()
        for j in range(1, jmax + 1):
            sq = j * j
            new[sq:] += 2 * counts[: smax + 1 - sq]
        counts = new
    return counts


def iter_sites(box: BoxSpec) -> Iterable[tuple]:
    """Lazy variant of :func:`enumerate_box`."""
    offset = box.M
    for idx in np.ndindex(*box.shape):
        yield tuple(i - offset for i in idx)
