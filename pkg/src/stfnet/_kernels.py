"""Batched DFT kernels and backend selection.

The butterfly inner loop comes from the compiled extension
``stfnet._fft_c`` when it was built, otherwise from the numpy
implementation in ``stfnet._fft_py``. Set ``STFNET_PURE_PY=1`` to force
the numpy backend. Twiddle/permutation tables are cached per transform
length behind a lock so concurrent first calls stay safe.

All kernels operate on 2-D arrays, one transform per row. Real signals
use the half-spectrum convention K = floor(tau/2) + 1.
"""

import os
import threading

import numpy as np

from . import _fft_py

_impl = _fft_py
_backend = "python"
if not os.environ.get("STFNET_PURE_PY"):
    try:
        from . import _fft_c as _impl  # type: ignore[no-redef]

        _backend = "compiled"
    except ImportError:
        pass


def backend() -> str:
    """Name of the active butterfly backend: 'compiled' or 'python'."""
    return _backend


def implementations():
    """(name, fft_rows) pairs for every available backend, for benchmarks."""
    pairs = [("python", _fft_py.fft_rows)]
    if _backend == "compiled":
        pairs.append(("compiled", _impl.fft_rows))
    return pairs


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def half_bins(tau: int) -> int:
    """Number of non-redundant DFT bins of a real length-tau signal."""
    return tau // 2 + 1


_tables: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
_tables_lock = threading.Lock()
_dft_mats: dict[int, np.ndarray] = {}
_dft_lock = threading.Lock()


def _radix2_tables(tau: int):
    tb = _tables.get(tau)
    if tb is None:
        with _tables_lock:
            tb = _tables.get(tau)
            if tb is None:
                bits = tau.bit_length() - 1
                idx = np.arange(tau)
                perm = np.zeros(tau, dtype=np.intp)
                for b in range(bits):
                    perm |= ((idx >> b) & 1) << (bits - 1 - b)
                tw = np.exp(-2j * np.pi * np.arange(tau // 2) / tau)
                tb = (perm, tw, np.conj(tw))
                _tables[tau] = tb
    return tb


def _dft_matrix(tau: int) -> np.ndarray:
    """Full tau x tau DFT matrix, cached; the direct-summation path."""
    mat = _dft_mats.get(tau)
    if mat is None:
        with _dft_lock:
            mat = _dft_mats.get(tau)
            if mat is None:
                t = np.arange(tau)
                mat = np.exp(-2j * np.pi * np.outer(t, t) / tau)
                _dft_mats[tau] = mat
    return mat


def fft_full(z: np.ndarray) -> np.ndarray:
    """Unnormalized forward DFT of each row (power-of-two length)."""
    perm, tw, _ = _radix2_tables(z.shape[-1])
    return _impl.fft_rows(np.ascontiguousarray(z, dtype=np.complex128), perm, tw)


def ifft_full_unnorm(z: np.ndarray) -> np.ndarray:
    """Unnormalized inverse DFT (sum with e^{+j...}) of each row."""
    perm, _, twc = _radix2_tables(z.shape[-1])
    return _impl.fft_rows(np.ascontiguousarray(z, dtype=np.complex128), perm, twc)


def dft_direct_rows(x: np.ndarray) -> np.ndarray:
    """Half-spectrum DFT by direct summation; works for any tau >= 1."""
    tau = x.shape[-1]
    mat = _dft_matrix(tau)[:, : half_bins(tau)]
    return np.asarray(x, dtype=np.complex128) @ mat


def rfft_rows(x: np.ndarray) -> np.ndarray:
    """Half-spectrum DFT of real rows; radix-2 when possible."""
    x = np.asarray(x, dtype=np.float64)
    tau = x.shape[-1]
    if not is_pow2(tau):
        return dft_direct_rows(x)
    return fft_full(x.astype(np.complex128))[:, : half_bins(tau)]


def conj_extend(spec: np.ndarray, tau: int) -> np.ndarray:
    """Expand a half-spectrum to the full tau bins by conjugate symmetry.

    DC (and Nyquist, for even tau) are copied as-is; callers that need
    a real reconstruction take the real part after inverting.
    """
    n, k = spec.shape
    full = np.zeros((n, tau), dtype=np.complex128)
    full[:, :k] = spec
    upper = np.arange(1, tau - k + 1)
    if upper.size:
        full[:, tau - upper] = np.conj(spec[:, upper])
    return full


def irfft_rows(spec: np.ndarray, tau: int) -> np.ndarray:
    """Real signal from a half-spectrum, 1/tau normalization.

    Imaginary parts of the DC and Nyquist bins do not influence the
    result (the real part of the inverse transform drops them).
    """
    full = conj_extend(np.asarray(spec, dtype=np.complex128), tau)
    if is_pow2(tau):
        return ifft_full_unnorm(full).real / tau
    t = np.conj(_dft_matrix(tau))
    return (full @ t).real / tau


def adjoint_rfft_rows(grad: np.ndarray, tau: int) -> np.ndarray:
    """Adjoint of ``rfft_rows`` over the re/im planes.

    Maps a half-spectrum cotangent to a real time-domain cotangent:
    Re(sum_k g_k e^{+2j pi k t / tau}).
    """
    n, k = grad.shape
    full = np.zeros((n, tau), dtype=np.complex128)
    full[:, :k] = grad
    if is_pow2(tau):
        return ifft_full_unnorm(full).real
    return (full @ np.conj(_dft_matrix(tau))).real


def adjoint_irfft_rows(grad: np.ndarray, tau: int) -> np.ndarray:
    """Adjoint of ``irfft_rows``: real cotangent -> half-spectrum cotangent.

    Interior bins pick up the factor 2/tau from the conjugate mirror;
    DC/Nyquist get 1/tau and a zero imaginary component, matching the
    forward map's insensitivity to those planes.
    """
    k = half_bins(tau)
    if is_pow2(tau):
        f = fft_full(np.asarray(grad, dtype=np.complex128))[:, :k]
    else:
        f = dft_direct_rows(grad)
    f = f / tau
    mid_end = k - 1 if tau % 2 == 0 else k
    f[:, 1:mid_end] *= 2.0
    f[:, 0] = f[:, 0].real
    if tau % 2 == 0:
        f[:, k - 1] = f[:, k - 1].real
    return f
