"""Short-time Fourier analysis and the multi-resolution hologram.

Windows are rectangular, non-overlapping, and power-of-two wide; a
signal of length T splits into M = T/tau chunks of K = tau//2 + 1
frequency bins each. A *hologram* is the family of such representations
of one signal over a window set {2^p}, whose aligned components obey an
exact cross-resolution sum identity (see :func:`time_align_sum`).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import AlignError, ConfigError, DomainError, ShapeError
from .numeric import DC_NYQUIST_TOL, ComplexTensor


@dataclass
class SpectralRep:
    """One STFT view of a signal: (M chunks, K bins, D features)."""

    data: ComplexTensor
    tau: int
    fs: float

    def __post_init__(self):
        if len(self.data.shape) != 3:
            raise ShapeError(f"spectral data must be (M, K, D), got {self.data.shape}")
        if self.data.shape[1] != _kernels.half_bins(self.tau):
            raise ShapeError(
                f"{self.data.shape[1]} bins inconsistent with tau={self.tau}"
            )

    @property
    def chunks(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]

    @property
    def features(self) -> int:
        return self.data.shape[2]

    def bin_frequency(self, k: int) -> float:
        return k * self.fs / self.tau

    def copy(self) -> "SpectralRep":
        return SpectralRep(self.data.copy(), self.tau, self.fs)


@dataclass
class Hologram:
    """SpectralReps of one signal at ascending window widths."""

    reps: list
    window_set: tuple = field(default_factory=tuple)
    fs: float = 1.0

    def __post_init__(self):
        if not self.window_set:
            self.window_set = tuple(rep.tau for rep in self.reps)

    def rep_for(self, tau: int) -> SpectralRep:
        for rep in self.reps:
            if rep.tau == tau:
                return rep
        raise ConfigError(f"no representation with tau={tau}")

    def copy(self) -> "Hologram":
        return Hologram([rep.copy() for rep in self.reps], self.window_set, self.fs)


def validate_window_set(window_set) -> tuple:
    ws = tuple(int(t) for t in window_set)
    if not ws:
        raise ConfigError("window set is empty")
    if any(not _kernels.is_pow2(t) for t in ws):
        raise ConfigError(f"window widths must be powers of two, got {ws}")
    if list(ws) != sorted(set(ws)):
        raise ConfigError(f"window set must be strictly ascending, got {ws}")
    return ws


def stft(x: np.ndarray, tau: int, fs: float = 1.0) -> SpectralRep:
    """Chunk a (T, D) signal into T/tau windows and DFT each one."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"signal must be (T, D), got {x.shape}")
    if not _kernels.is_pow2(tau):
        raise ConfigError(f"window width {tau} is not a power of two")
    t_len, d = x.shape
    if t_len % tau != 0:
        raise ShapeError(f"signal length {t_len} not divisible by tau={tau}")
    m = t_len // tau
    rows = x.reshape(m, tau, d).transpose(0, 2, 1).reshape(m * d, tau)
    spec = _kernels.rfft_rows(rows)
    k = spec.shape[1]
    data = spec.reshape(m, d, k).transpose(0, 2, 1)
    return SpectralRep(ComplexTensor.from_array(data), tau, fs)


def istft(rep: SpectralRep) -> np.ndarray:
    """Invert an STFT back to the (T, D) time signal.

    Requires a spectrum consistent with a real signal (DC/Nyquist bins
    near-real in every chunk); raises DomainError otherwise.
    """
    z = rep.data.as_array()
    m, k, d = z.shape
    rows = z.transpose(0, 2, 1).reshape(m * d, k)
    if np.max(np.abs(rows[:, 0].imag), initial=0.0) > DC_NYQUIST_TOL:
        raise DomainError("DC bins are not real: spectrum of a non-real signal")
    if rep.tau % 2 == 0 and np.max(np.abs(rows[:, -1].imag), initial=0.0) > DC_NYQUIST_TOL:
        raise DomainError("Nyquist bins are not real: spectrum of a non-real signal")
    sig = _kernels.irfft_rows(rows, rep.tau)
    return sig.reshape(m, d, rep.tau).transpose(0, 2, 1).reshape(m * rep.tau, d)


def multi_stft(x: np.ndarray, window_set, fs: float = 1.0) -> Hologram:
    """STFT the same signal at every window width in the set."""
    ws = validate_window_set(window_set)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] % ws[-1] != 0:
        raise ShapeError(
            f"signal length {x.shape[0]} not divisible by max window {ws[-1]}"
        )
    return Hologram([stft(x, tau, fs) for tau in ws], ws, fs)


def freq_align(k_coarse: int, tau_i: int, tau_j: int) -> Optional[int]:
    """Bin of the finer-time rep (width tau_j) at the same physical frequency.

    Bin k of a width-tau rep sits at k*fs/tau; the coarser-frequency rep
    can only represent it when k_coarse is divisible by tau_i/tau_j.
    Returns None when the frequency falls between the coarser grid's bins.
    """
    if tau_i <= tau_j:
        raise ConfigError(f"tau_i={tau_i} must exceed tau_j={tau_j}")
    ratio = tau_i // tau_j
    if k_coarse % ratio != 0:
        return None
    return k_coarse // ratio


def time_align_sum(h: Hologram, i: int, j: int, m: int, k: int) -> ComplexTensor:
    """Sum of the finer rep's chunks that cover coarse chunk m at bin k.

    On a raw hologram this equals reps[i].data[m, k, :] exactly: a coarse
    time component is the sum of its aligned fine time components.
    """
    coarse, fine = h.reps[i], h.reps[j]
    k_j = freq_align(k, coarse.tau, fine.tau)
    if k_j is None:
        raise AlignError(
            f"bin {k} of tau={coarse.tau} has no counterpart at tau={fine.tau}"
        )
    ratio = coarse.tau // fine.tau
    block = fine.data.as_array()[ratio * m : ratio * (m + 1), k_j, :]
    return ComplexTensor.from_array(block.sum(axis=0))
