"""Dense complex grids, unitary FFTs and elementwise helpers.

Complex 2-D fields are plain ``numpy.complex128`` arrays; real tensors are
``float64`` arrays. The FFTs act on the last two axes, so a stack of
patches of shape ``(N, s, s)`` is transformed in one call.
"""

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes are incompatible with an operation."""


def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


def _check_fft_dims(g):
    g = np.asarray(g)
    if g.ndim < 2:
        raise DimensionError(f"fft2 needs at least 2 dims, got shape {g.shape}")
    h, w = g.shape[-2:]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise DimensionError(f"fft2 needs power-of-two sides, got {h}x{w}")
    return g


def fft2(g):
    """Unitary 2-D DFT over the last two axes.

    Parameters
    ----------
    g : array_like
        Complex (or real) array whose last two dims are powers of two.

    Returns
    -------
    numpy.ndarray
        ``complex128`` array with the same shape and the same 2-norm.
    """
    g = _check_fft_dims(g)
    return np.fft.fft2(g, norm="ortho").astype(np.complex128, copy=False)


def ifft2(g):
    """Inverse (and adjoint) of :func:`fft2`."""
    g = _check_fft_dims(g)
    return np.fft.ifft2(g, norm="ortho").astype(np.complex128, copy=False)


def _check_same(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def add(a, b):
    a, b = _check_same(a, b)
    return a + b


def sub(a, b):
    a, b = _check_same(a, b)
    return a - b


def mul(a, b):
    a, b = _check_same(a, b)
    return a * b


def conj_mul(a, b):
    """Elementwise ``conj(a) * b``."""
    a, b = _check_same(a, b)
    return np.conj(a) * b


def scale(g, c):
    return np.asarray(g) * c


def abs_eps(g, eps=0.0):
    """Smoothed modulus ``sqrt(re^2 + im^2 + eps^2)``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    g = np.asarray(g)
    return np.sqrt(g.real**2 + g.imag**2 + eps * eps)


def phase_unit(g, eps=0.0):
    """``g / abs_eps(g, eps)``; zero where both are zero."""
    g = np.asarray(g)
    a = abs_eps(g, eps)
    out = np.zeros(g.shape, dtype=np.complex128)
    np.divide(g, a, out=out, where=a > 0)
    return out


def max_abs2_reduce(g):
    """Maximum of ``|g|^2`` over all entries."""
    g = np.asarray(g)
    return float(np.max(g.real**2 + g.imag**2))


def vdot(a, b):
    """Inner product ``sum(conj(a) * b)`` over all entries."""
    a, b = _check_same(a, b)
    return np.vdot(a.ravel(), b.ravel())
