"""Low-level discrete Fourier transforms on box grids.

Sign convention: ``F(k) = sum_x exp(i k.x) f(x)`` with ``k = 2 pi n / N`` and
``N = 2M + 1``; the inverse is ``f(x) = N^{-d} sum_k exp(-i k.x) F(k)``.

For reflection-symmetric fields both directions reduce to a real cosine
transform applied axis by axis on the non-negative orthant.  Each axis pass
is a single matrix product that moves the transformed axis to the end, so
after ``d`` passes the axes are back in order and at most two full arrays are
alive at once.
"""

from __future__ import annotations

import functools

import numpy as np


@functools.lru_cache(maxsize=32)
def cos_matrix(n_out: int, n_in: int, period: int) -> np.ndarray:
    """``C[m, j] = w_j cos(2 pi m j / period)`` with ``w_0 = 1``, ``w_j = 2``."""
    m = np.arange(n_out)[:, None]
    j = np.arange(n_in)[None, :]
    w = np.where(j == 0, 1.0, 2.0)
    # reduce the integer phase first so large arguments keep full accuracy
    phase = (m * j) % period
    mat = w * np.cos(2.0 * np.pi * phase / period)
    mat.setflags(write=False)
    return mat


def _apply_axes(values: np.ndarray, mats) -> np.ndarray:
    out = values
    for mat in mats:
        n_in = out.shape[0]
        rest = out.shape[1:]
        out = (out.reshape(n_in, -1).T @ mat.T).reshape(rest + (mat.shape[0],))
    return out


_BLOCK_BYTES = 1 << 24


def _apply_inplace(values: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Apply a square matrix along every axis, overwriting ``values``."""
    n = values.shape[0]
    for ax in range(values.ndim):
        a = int(np.prod(values.shape[:ax], dtype=np.int64))
        b = int(np.prod(values.shape[ax + 1:], dtype=np.int64))
        view = values.reshape(a, n, b)
        cb = max(1, min(b, _BLOCK_BYTES // (8 * n)))
        ca = max(1, min(a, _BLOCK_BYTES // (8 * n * cb)))
        for a0 in range(0, a, ca):
            for b0 in range(0, b, cb):
                block = view[a0:a0 + ca, :, b0:b0 + cb]
                block[...] = np.matmul(mat, block)
    return values


def even_forward(values: np.ndarray, period: int, n_out: int | None = None,
                 inplace: bool = False) -> np.ndarray:
    """Transform an orthant array of an even field to the orthant of its spectrum.

    ``values`` may have fewer entries per axis than ``n_out`` (the field is
    then zero beyond them).  With ``inplace`` (square case only) the input
    buffer is overwritten and returned.
    """
    n_in = values.shape[0]
    if n_out is None:
        n_out = (period - 1) // 2 + 1
    if 2 * (n_in - 1) >= period:
        raise ValueError("field support does not fit in one period")
    mat = cos_matrix(n_out, n_in, period)
    if n_out == n_in:
        buf = values if inplace else np.array(values, dtype=np.float64, order="C")
        return _apply_inplace(buf, mat)
    return _apply_axes(np.ascontiguousarray(values, dtype=np.float64), [mat] * values.ndim)


def even_inverse(values: np.ndarray, period: int, n_out: int | None = None,
                 inplace: bool = False) -> np.ndarray:
    """Inverse of :func:`even_forward` (optionally returning only ``n_out`` entries)."""
    n_in = values.shape[0]
    if n_out is None:
        n_out = n_in
    mat = cos_matrix(n_out, n_in, period) / period
    if n_out == n_in:
        buf = values if inplace else np.array(values, dtype=np.float64, order="C")
        return _apply_inplace(buf, mat)
    return _apply_axes(np.ascontiguousarray(values, dtype=np.float64), [mat] * values.ndim)


def full_forward(values: np.ndarray) -> np.ndarray:
    """Centered-index DFT with the ``exp(+i k.x)`` sign."""
    n = values.size
    spec = np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(values))) * n
    return spec


def full_inverse(values: np.ndarray) -> np.ndarray:
    n = values.size
    return np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(values))) / n


def maybe_real(values: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Drop imaginary parts that are round-off relative to the array scale."""
    if not np.iscomplexobj(values):
        return values
    scale = max(float(np.max(np.abs(values))), 1e-300)
    if float(np.max(np.abs(values.imag))) <= rtol * scale:
        return np.ascontiguousarray(values.real)
    return values


def dual_k_sq(M: int, d: int, symmetric: bool, period: int | None = None) -> np.ndarray:
    """``|k|^2`` on the dual grid of a box (orthant or full)."""
    if period is None:
        period = 2 * M + 1
    n = np.arange(M + 1) if symmetric else np.arange(-M, M + 1)
    k = 2.0 * np.pi * n / period
    out = None
    for ax in range(d):
        shape = [1] * d
        shape[ax] = k.size
        term = (k**2).reshape(shape)
        out = term if out is None else out + term
    return np.array(np.broadcast_to(out, (k.size,) * d))


def axis_k_sq_slices(M: int, d: int, period: int | None = None):
    """Yield ``(i, k0^2 + |k_rest|^2)`` slices of the orthant grid along axis 0."""
    if period is None:
        period = 2 * M + 1
    k = 2.0 * np.pi * np.arange(M + 1) / period
    rest = dual_k_sq(M, d - 1, True, period) if d > 1 else np.zeros(())
    for i in range(M + 1):
        yield i, rest + k[i] ** 2
