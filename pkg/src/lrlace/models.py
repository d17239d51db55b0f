"""Self-avoiding walk, long-range percolation and Ising two-point functions at desk scale.

All three models live on a torus ``[-M, M]^d`` with the kernel periodized
onto it, so every field here is translation invariant and stored in full
mode with the origin at the centre.

Self-avoiding walk coefficients are exact.  Rather than enumerating the
``V^n`` weighted paths, the self-avoidance indicator is expanded over set
partitions of the time indices ``{0..n}``:

    prod_{s<t} (1 - [w_s = w_t]) = sum_P mu(P) [w constant on the blocks of P],
    mu(P) = prod_B (-1)^{|B|-1} (|B|-1)!,

and each constrained sum is a tensor contraction of periodized kernel
matrices over one variable per block.
"""

from __future__ import annotations

import functools
import itertools
import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import spectral
from .lattice import BoxSpec, LatticeField

LOGGER = logging.getLogger(__name__)

MAX_SAW_SITES = 1000
MAX_SAW_LENGTH = 6
SAW_FLOP_BUDGET = 2e11
MAX_ISING_SITES = 24
TRUNCATION_WARN = 0.01


# --------------------------------------------------------------------------
# torus helpers

def periodize(D: LatticeField, M: int) -> LatticeField:
    """Fold ``D`` onto the torus of half-width ``M`` (full storage)."""
    full = D.full()
    side = 2 * M + 1
    d = D.box.d
    idx = (D.box.coords() % side + M) % side
    out = np.zeros((side,) * d)
    np.add.at(out, np.ix_(*([idx] * d)), full)
    return LatticeField(BoxSpec(d, M, torus=True), out, kind=D.kind, is_kernel=D.is_kernel,
                        meta=dict(D.meta))


def torus_kernel_matrix(D: LatticeField) -> np.ndarray:
    """``A[u, v] = D(v - u)`` over the flattened torus sites of ``D.box``."""
    full = D.full()
    d, side = D.box.d, D.box.side
    coords = np.stack(np.unravel_index(np.arange(side**d), (side,) * d), axis=1)
    diff = (coords[None, :, :] - coords[:, None, :] + D.box.M) % side
    return full[tuple(diff[..., a] for a in range(d))]


def _origin_index(box: BoxSpec) -> int:
    return int(np.ravel_multi_index((box.M,) * box.d, box.shape))


# --------------------------------------------------------------------------
# self-avoiding walk

def set_partitions(n: int):
    """All set partitions of ``range(n)`` as restricted-growth block labels."""
    if n == 0:
        yield ()
        return
    labels = [0] * n

    def rec(i, k):
        if i == n:
            yield tuple(labels)
            return
        for b in range(k + 1):
            labels[i] = b
            yield from rec(i + 1, max(k, b + 1))

    yield from rec(1, 1)


def partition_weight(labels) -> int:
    """Mobius weight ``prod_B (-1)^{|B|-1} (|B|-1)!`` of a partition."""
    sizes = np.bincount(labels) if len(labels) else np.array([], dtype=int)
    return int(np.prod([(-1) ** (s - 1) * math.factorial(s - 1) for s in sizes]))


@functools.lru_cache(maxsize=16)
def bell_number(n: int) -> int:
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


def saw_cost(N: int, n_sites: int) -> float:
    """Flop estimate for :func:`saw_enumerate` (cubic contraction per partition)."""
    return float(sum(bell_number(n + 1) for n in range(1, N + 1))) * float(n_sites) ** 3


@dataclass
class SawSeries:
    """Coefficients ``c_n(x)``, ``n = 0..N``, of the SAW two-point function.

    ``coefficients[n]`` is the full-storage torus array of ``c_n``;
    ``rw_coefficients[n]`` holds ``D^{*n}`` on the same torus.
    """

    max_length: int
    box: BoxSpec
    coefficients: np.ndarray
    rw_coefficients: np.ndarray
    kernel: LatticeField
    meta: dict = field(default_factory=dict)

    def coefficient(self, n: int) -> LatticeField:
        return LatticeField(self.box, self.coefficients[n].copy(), kind=f"saw_c{n}")

    def evaluate(self, p: float) -> np.ndarray:
        powers = float(p) ** np.arange(self.max_length + 1)
        return np.tensordot(powers, self.coefficients, axes=1)

    def rw_evaluate(self, p: float) -> np.ndarray:
        powers = float(p) ** np.arange(self.max_length + 1)
        return np.tensordot(powers, self.rw_coefficients, axes=1)


def _constrained_sum(labels, A: np.ndarray, d0: float, origin: int) -> np.ndarray:
    """Sum over walks constant on the blocks of ``labels``, as a site vector."""
    V = A.shape[0]
    n = len(labels) - 1
    k = max(labels) + 1
    scalar = 1.0
    mult = {}
    for i in range(n):
        a, b = labels[i], labels[i + 1]
        if a == b:
            scalar *= d0
            continue
        key = (min(a, b), max(a, b))
        mult[key] = mult.get(key, 0) + 1
    letters = "abcdefghijklmnop"
    root = np.zeros(V)
    root[origin] = 1.0
    operands, subs = [root], [letters[0]]
    for (a, b), m in sorted(mult.items()):
        operands.append(A if m == 1 else A**m)
        subs.append(letters[a] + letters[b])
    out_block = labels[n]
    if out_block == 0:
        val = np.einsum(",".join(subs) + "->", *operands, optimize="greedy") if len(operands) > 1 else 1.0
        vec = np.zeros(V)
        vec[origin] = scalar * float(val)
        return vec
    used = {c for s in subs for c in s}
    if len(used) < k:
        raise AssertionError("block graph is disconnected")
    return scalar * np.einsum(",".join(subs) + "->" + letters[out_block], *operands, optimize="greedy")


def saw_enumerate(D: LatticeField, N: int, box: BoxSpec) -> SawSeries:
    """Exact SAW coefficients on the torus ``box`` up to length ``N``.

    Parameters
    ----------
    D : LatticeField
        Step distribution; periodized onto ``box``.
    N : int
        Maximal walk length.
    box : BoxSpec
        Torus on which the walk lives.
    """
    if N < 0:
        raise ValueError("N must be non-negative")
    if D.box.d != box.d:
        raise ValueError("dimension mismatch")
    V = box.n_sites
    if N > MAX_SAW_LENGTH or V > MAX_SAW_SITES or saw_cost(N, V) > SAW_FLOP_BUDGET:
        raise ValueError(f"SAW enumeration with N={N} on {V} sites is intractable "
                         f"(estimated {saw_cost(N, V):.2e} flops)")
    Dt = periodize(D, box.M)
    A = torus_kernel_matrix(Dt)
    d0 = float(Dt.full()[(box.M,) * box.d])
    origin = _origin_index(box)
    coeffs = np.zeros((N + 1, V))
    rw = np.zeros((N + 1, V))
    coeffs[0, origin] = rw[0, origin] = 1.0
    for n in range(1, N + 1):
        rw[n] = A.T @ rw[n - 1]
        acc = np.zeros(V)
        for labels in set_partitions(n + 1):
            acc += partition_weight(labels) * _constrained_sum(labels, A, d0, origin)
        # a walk of positive length ending at o revisits o
        acc[origin] = 0.0
        scale = np.max(rw[n])
        tiny = (acc < 0) & (acc > -1e-12 * scale)
        acc[tiny] = 0.0
        if np.any(acc < 0):
            raise ArithmeticError("negative SAW coefficient beyond round-off")
        coeffs[n] = acc
    shape = (N + 1,) + box.shape
    return SawSeries(N, box.with_torus(True), coeffs.reshape(shape), rw.reshape(shape), Dt,
                     meta=dict(partitions=int(sum(bell_number(n + 1) for n in range(1, N + 1)))))


def saw_enumerate_dfs(D: LatticeField, N: int, box: BoxSpec) -> np.ndarray:
    """Reference SAW coefficients by depth-first search (tiny tori only)."""
    Dt = periodize(D, box.M)
    A = torus_kernel_matrix(Dt)
    V = A.shape[0]
    if V ** N > 5e7:
        raise ValueError("DFS reference is limited to tiny boxes")
    origin = _origin_index(box)
    out = np.zeros((N + 1, V))
    out[0, origin] = 1.0
    steps = [np.flatnonzero(A[u]) for u in range(V)]

    def rec(u, n, w, visited):
        for v in steps[u]:
            if v in visited:
                continue
            wv = w * A[u, v]
            out[n + 1, v] += wv
            if n + 1 < N:
                visited.add(v)
                rec(v, n + 1, wv, visited)
                visited.discard(v)

    if N:
        rec(origin, 0, 1.0, {origin})
    return out.reshape((N + 1,) + box.shape)


@dataclass
class TwoPoint:
    """A two-point function with optional standard errors and checks."""

    field: LatticeField
    stderr: np.ndarray | None = None
    checks: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        box = self.field.box
        vals = self.field.full()
        err = np.zeros_like(vals) if self.stderr is None else self.stderr
        lines = ["site,value,stderr"]
        for idx in np.ndindex(*vals.shape):
            site = " ".join(str(i - box.M) for i in idx)
            lines.append(f"{site},{float(vals[idx])!r},{float(err[idx])!r}")
        return "\n".join(lines) + "\n"


def saw_two_point(series: SawSeries, p: float) -> TwoPoint:
    """``G_p`` from the truncated series, with the random-walk sandwich checks."""
    if p < 0:
        raise ValueError("p must be non-negative")
    box = series.box
    G = series.evaluate(p)
    S = series.rw_evaluate(p)
    Dt = series.kernel.full()
    centre = (box.M,) * box.d
    delta = np.zeros(box.shape)
    delta[centre] = 1.0
    DG = _torus_convolve(Dt, G)
    off = np.ones(box.shape, dtype=bool)
    off[centre] = False
    last = float(np.sum(series.coefficients[-1]) * p**series.max_length)
    total = float(np.sum(G))
    if series.max_length and total and last > TRUNCATION_WARN * total:
        LOGGER.warning("last retained SAW term is %.2g of the total: truncation unsafe", last / total)
    checks = dict(
        coefficients_below_rw=bool(np.all(series.coefficients <= series.rw_coefficients)),
        below_rw=bool(np.all(G <= S)),
        lower=bool(np.all(p * Dt[off] <= (G - delta)[off])),
        upper=bool(np.all(G - delta <= p * DG)),
        truncation_fraction=last / total if total else 0.0,
    )
    return TwoPoint(LatticeField(box, G, kind="saw_two_point", meta=dict(p=p, N=series.max_length)),
                    checks=checks)


def _torus_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Circular convolution of centred arrays of equal odd side."""
    sh = np.fft.ifftshift
    out = np.fft.irfftn(np.fft.rfftn(sh(a)) * np.fft.rfftn(sh(b)), s=a.shape, axes=tuple(range(a.ndim)))
    return np.fft.fftshift(out)


# --------------------------------------------------------------------------
# percolation

@dataclass(frozen=True)
class PercConfig:
    """Monte Carlo set-up for long-range bond percolation on a torus."""

    box: BoxSpec
    p: float
    samples: int
    seed: int = 0

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("p must be non-negative")
        if self.samples < 1:
            raise ValueError("need at least one sample")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@numba.njit(cache=True)
def _find(parent, u):
    root = u
    while parent[root] != root:
        root = parent[root]
    while parent[u] != root:
        nxt = parent[u]
        parent[u] = root
        u = nxt
    return root


@numba.njit(cache=True)
def _sample_connectivity(occupied, partner, counts, V):
    """Union the occupied bonds and add ``1[u <-> partner of u]`` per displacement."""
    parent = np.arange(V)
    size = np.ones(V, dtype=np.int64)
    H = occupied.shape[0]
    for h in range(H):
        for u in range(V):
            if occupied[h, u]:
                a = _find(parent, u)
                b = _find(parent, partner[h, u])
                if a != b:
                    if size[a] < size[b]:
                        a, b = b, a
                    parent[b] = a
                    size[a] += size[b]
    label = np.empty(V, dtype=np.int64)
    for u in range(V):
        label[u] = _find(parent, u)
    n_disp = counts.shape[0]
    for z in range(n_disp):
        s = 0
        for u in range(V):
            if label[u] == label[partner[z, u]]:
                s += 1
        counts[z] += s


def _displacements(box: BoxSpec) -> tuple:
    """Torus displacement table: ``partner[z, u] = u + z`` for every displacement."""
    d, side = box.d, box.side
    coords = np.stack(np.unravel_index(np.arange(side**d), (side,) * d), axis=1)
    disp = np.stack(np.unravel_index(np.arange(side**d), (side,) * d), axis=1) - box.M
    partner = np.empty((disp.shape[0], coords.shape[0]), dtype=np.int64)
    for i, z in enumerate(disp):
        partner[i] = np.ravel_multi_index(tuple(((coords + z) % side).T), (side,) * d)
    return disp, partner


def percolation_two_point(D: LatticeField, cfg: PercConfig) -> TwoPoint:
    """Monte Carlo ``G_p(x) = P(o <-> x)`` on the torus ``cfg.box``.

    Each sample occupies bond ``{u, u+z}`` with probability ``p D(z)`` (``D``
    periodized), for one representative ``z`` of every pair ``{z, -z}``.
    Connectivity is averaged over all origins ``u``; the reported standard
    errors are the binomial ``sqrt(G(1-G)/samples)``, an upper bound for the
    origin-averaged estimator.
    """
    box = cfg.box.with_torus(True)
    Dt = periodize(D, box.M).full()
    if cfg.p * Dt.max() > 1.0:
        raise ValueError(f"p * max D = {cfg.p * Dt.max():.3g} exceeds 1")
    disp, partner = _displacements(box)
    V = box.n_sites
    flat = Dt.ravel()
    # one representative per bond class {z, -z}, z != 0
    rep = [i for i, z in enumerate(disp) if tuple(z) > tuple(-z)]
    q = cfg.p * flat[rep]
    keep = q > 0
    rep = np.asarray(rep, dtype=np.int64)[keep]
    q = q[keep]
    # the first rows of the table hold the bond representatives
    order = np.concatenate([rep, np.setdiff1d(np.arange(V), rep)])
    partner_ord = np.ascontiguousarray(partner[order])
    counts = np.zeros(V, dtype=np.int64)
    children = np.random.SeedSequence(int(cfg.seed)).spawn(cfg.samples)
    for child in children:
        rng = np.random.Generator(np.random.PCG64(child))
        occupied = rng.random((q.size, V)) < q[:, None]
        _sample_connectivity(occupied, partner_ord, counts, V)
    est = np.empty(V)
    est[order] = counts / (cfg.samples * V)
    est = est.reshape(box.shape)
    est[(box.M,) * box.d] = 1.0
    err = np.sqrt(np.clip(est * (1 - est), 0, None) / cfg.samples)
    return TwoPoint(LatticeField(box, est, kind="percolation_two_point",
                                 meta=dict(p=cfg.p, samples=cfg.samples, seed=int(cfg.seed))), err)


# --------------------------------------------------------------------------
# Ising

@dataclass(frozen=True)
class IsingConfig:
    """Free-boundary Ising model on a finite site list.

    Parameters
    ----------
    volume : ndarray
        ``(n, d)`` integer sites; the first row is the origin ``o``.
    beta : float
    couplings : ndarray
        Symmetric ``(n, n)`` matrix ``J_{u,v}`` with zero diagonal.
    """

    volume: np.ndarray
    beta: float
    couplings: np.ndarray

    def __post_init__(self):
        vol = np.atleast_2d(np.asarray(self.volume, dtype=np.int64))
        object.__setattr__(self, "volume", vol)
        n = vol.shape[0]
        if n > MAX_ISING_SITES:
            raise ValueError(f"|volume| = {n} exceeds {MAX_ISING_SITES}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        J = np.asarray(self.couplings, dtype=np.float64)
        if J.shape != (n, n) or not np.allclose(J, J.T) or np.any(J < 0) or np.any(np.diag(J) != 0):
            raise ValueError("couplings must be a symmetric non-negative matrix with zero diagonal")
        object.__setattr__(self, "couplings", J)

    @classmethod
    def from_kernel(cls, D: LatticeField, p: float, beta: float, volume) -> "IsingConfig":
        """Couplings with ``tanh(beta J_{o,x}) = p D(x)``."""
        if not beta > 0:
            raise ValueError("deriving couplings needs beta > 0")
        vol = np.atleast_2d(np.asarray(volume, dtype=np.int64))
        diff = vol[None, :, :] - vol[:, None, :]
        n = vol.shape[0]
        J = np.zeros((n, n))
        for i, j in itertools.permutations(range(n), 2):
            z = diff[i, j]
            t = p * (D.at(z) if D.box.contains(z) else 0.0)
            if t >= 1:
                raise ValueError("p D(x) must stay below 1")
            J[i, j] = np.arctanh(t) / beta
        return cls(vol, beta, J)


def ising_two_point_exact(cfg: IsingConfig, chunk_bits: int = 16) -> np.ndarray:
    """Exact ``<phi_o phi_x>`` for every ``x`` in the volume (origin first)."""
    n = cfg.volume.shape[0]
    if n == 1:
        return np.ones(1)
    J = cfg.couplings * cfg.beta
    ground = 0.5 * float(np.sum(J))
    # spin of o fixed to +1 by global flip symmetry
    free = n - 1
    chunk_bits = min(chunk_bits, free)
    n_chunks = 1 << (free - chunk_bits)
    low = np.arange(1 << chunk_bits, dtype=np.int64)
    bits_low = 1 - 2 * ((low[:, None] >> np.arange(chunk_bits)) & 1).astype(np.float64)
    Z = 0.0
    corr = np.zeros(n)
    for c in range(n_chunks):
        bits_high = 1 - 2 * ((c >> np.arange(free - chunk_bits)) & 1).astype(np.float64)
        spins = np.empty((low.size, n))
        spins[:, 0] = 1.0
        spins[:, 1:chunk_bits + 1] = bits_low
        spins[:, chunk_bits + 1:] = bits_high
        energy = 0.5 * np.einsum("ci,ij,cj->c", spins, J, spins, optimize=True)
        w = np.exp(energy - ground)
        Z += float(np.sum(w))
        corr += w @ spins
    out = corr / Z
    out[0] = 1.0
    return out


# --------------------------------------------------------------------------
# diagnostics

def susceptibility(G: LatticeField) -> float:
    """``chi = sum_x G(x)`` over the box."""
    chi = G.total()
    LOGGER.debug("susceptibility over the box M=%d (sites beyond are truncated)", G.box.M)
    return chi


@dataclass
class BubbleTriangle:
    """Bubble and triangle sums with an optional refinement comparison."""

    bubble: float
    triangle: float
    refined_bubble: float | None = None
    refined_triangle: float | None = None

    @property
    def bubble_change(self) -> float | None:
        if self.refined_bubble is None:
            return None
        return abs(self.refined_bubble - self.bubble) / abs(self.bubble)

    @property
    def triangle_change(self) -> float | None:
        if self.refined_triangle is None:
            return None
        return abs(self.refined_triangle - self.triangle) / abs(self.triangle)


def _bubble_triangle_one(G) -> tuple:
    if isinstance(G, spectral.SpectralField):
        N = G.period ** G.box.d
        vals = np.real(G.values)
        finite = np.isfinite(vals)
        if not np.all(finite):
            LOGGER.debug("dropping %d non-finite spectral entries", int(np.sum(~finite)))
        vals = np.where(finite, vals, 0.0)
        F = spectral.SpectralField(G.box, vals, G.symmetric)
        return F.total(np.square) / N, F.total(lambda v: v**3) / N
    bubble = G.weighted_total(np.square)
    hat = spectral.forward_raw(G)
    triangle = spectral.raw_total(hat**3, G, G.box.M) / G.box.side ** G.box.d
    return bubble, triangle


def bubble_triangle(G, refined=None) -> BubbleTriangle:
    """``sum_x G(x)^2`` and ``(G*G*G)(o)``, optionally also for a refined box.

    ``G`` is a :class:`LatticeField` (torus values) or a
    :class:`~lrlace.spectral.SpectralField` ``G^(k)``; non-finite spectral
    entries (the ``k = 0`` pole at criticality) are dropped.
    """
    b, t = _bubble_triangle_one(G)
    out = BubbleTriangle(b, t)
    if refined is not None:
        out.refined_bubble, out.refined_triangle = _bubble_triangle_one(refined)
    return out


def critical_green_spectrum(D: LatticeField, grid_M: int | None = None) -> spectral.SpectralField:
    """``1/(1 - D^(k))`` on the dual torus, with ``k = 0`` set to infinity."""
    F = spectral.fourier_transform(D, grid_M)
    with np.errstate(divide="ignore"):
        vals = 1.0 / (1.0 - np.real(F.values))
    vals[(0,) * D.box.d if F.symmetric else (F.box.M,) * D.box.d] = np.inf
    return spectral.SpectralField(F.box, vals, F.symmetric)
