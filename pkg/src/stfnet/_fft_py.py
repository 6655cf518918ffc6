"""Numpy radix-2 butterfly kernels, vectorized across rows.

Fallback backend for :mod:`stfnet._kernels`; the compiled extension
``stfnet._fft_c`` exposes the same ``fft_rows`` signature.
"""

import numpy as np


def fft_rows(z: np.ndarray, perm: np.ndarray, tw: np.ndarray) -> np.ndarray:
    """Unnormalized DFT of every row of ``z`` (length a power of two).

    ``perm`` is the bit-reversal permutation and ``tw`` the half-circle
    twiddle table for that length; pass the conjugated table to compute
    the unnormalized inverse transform.
    """
    n, tau = z.shape
    b = np.ascontiguousarray(z[:, perm])
    size = 2
    while size <= tau:
        half = size // 2
        step = tau // size
        w = tw[: half * step : step]
        v = b.reshape(n, tau // size, size)
        even = v[:, :, :half]
        t = v[:, :, half:] * w
        v[:, :, half:] = even - t
        v[:, :, :half] = even + t
        size *= 2
    return b
