"""Learnable spectral operations over hologram representations.

Four operations, all shape-preserving in (chunks, bins) and sharing one
weight set across every resolution of a hologram:

* :func:`interleave` - replaces the exact cross-resolution chunk sum
  with an attention-weighted merge fed by the finest aligned view.
* :func:`stfnet_filter` - per-bin complex feature mixing; one weight
  matrix at a base resolution, subsampled or interpolated to others.
* :func:`stfnet_conv` - complex cross-correlation along the frequency
  axis after conjugate-mirror padding, dilated so the kernel spans the
  same physical bandwidth at every resolution.
* :func:`stfnet_pool` - truncation above a shared cutoff frequency,
  re-labelling each view onto the shorter window it now fills.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConfigError, DomainError, ShapeError
from .numeric import DC_NYQUIST_TOL, ComplexTensor, softmax_real
from .transform import Hologram, SpectralRep, freq_align

INTERP_MODES = ("linear", "spectral")


# --- weight containers -------------------------------------------------------


@dataclass
class InterleaveWeights:
    """One (S, S) merge matrix per chunk ratio S present in a window set."""

    by_ratio: dict

    @classmethod
    def zeros(cls, window_set) -> "InterleaveWeights":
        """Zero-initialized weights: the merge reduces to the exact sum."""
        ratios = interleave_ratios(window_set)
        return cls({s: ComplexTensor.zeros((s, s)) for s in ratios})

    def matrix(self, ratio: int) -> ComplexTensor:
        w = self.by_ratio.get(ratio)
        if w is None:
            raise ShapeError(f"no merge matrix for chunk ratio {ratio}")
        if w.shape != (ratio, ratio):
            raise ShapeError(f"merge matrix for ratio {ratio} has shape {w.shape}")
        return w


@dataclass
class FilterWeights:
    """Spectral filter bank (K_base, D, O) defined on window tau_base."""

    w: ComplexTensor
    tau_base: int
    interp_mode: str = "linear"

    def __post_init__(self):
        if len(self.w.shape) != 3:
            raise ShapeError(f"filter weights must be (K, D, O), got {self.w.shape}")
        if self.w.shape[0] != _kernels.half_bins(self.tau_base):
            raise ShapeError(
                f"{self.w.shape[0]} weight bins inconsistent with tau_base={self.tau_base}"
            )
        if self.interp_mode not in INTERP_MODES:
            raise ConfigError(f"unknown interpolation mode {self.interp_mode!r}")


@dataclass
class ConvWeights:
    """Frequency-axis kernel (1, S_k, D, O) defined against tau_conv_base."""

    w: ComplexTensor
    tau_conv_base: int

    def __post_init__(self):
        if len(self.w.shape) != 4 or self.w.shape[0] != 1:
            raise ShapeError(f"conv weights must be (1, S, D, O), got {self.w.shape}")
        if self.w.shape[1] % 2 != 1:
            raise ShapeError(f"kernel size {self.w.shape[1]} must be odd")


@dataclass
class PoolSpec:
    """Low-pass pooling keeping the band below rho * fs/2."""

    rho: Fraction

    def __post_init__(self):
        self.rho = _as_fraction(self.rho)
        if not (0 < self.rho <= 1):
            raise ConfigError(f"pooling fraction must be in (0, 1], got {self.rho}")
        if self.rho.numerator != 1 or not _kernels.is_pow2(self.rho.denominator):
            raise ConfigError(
                f"pooling fraction must be 1 over a power of two, got {self.rho}"
            )

    def pooled_tau(self, tau: int) -> int:
        new_tau = Fraction(tau) * self.rho
        if new_tau.denominator != 1 or new_tau < 2:
            raise ConfigError(f"tau={tau} * rho={self.rho} is not a window >= 2")
        return int(new_tau)


def _as_fraction(rho) -> Fraction:
    if isinstance(rho, Fraction):
        return rho
    if isinstance(rho, str):
        return Fraction(rho)
    return Fraction(rho).limit_denominator(1 << 20)


# --- hologram interleaving ---------------------------------------------------


def interleave_ratios(window_set) -> tuple:
    """Distinct chunk-count ratios between any coarser/finer pair."""
    ws = sorted(set(int(t) for t in window_set))
    ratios = sorted({a // b for a in ws for b in ws if a > b})
    return tuple(ratios)


def alignment_groups(window_set, i: int):
    """Bins of rep ``i`` grouped by the finest rep that shares their frequency.

    Returns (j, ratio, bins) triples where ``bins`` are indices of rep i
    resolvable on rep j's frequency grid and on no finer rep's grid; the
    merge for those bins draws on rep j, the most fine-grained view that
    still preserves them.
    """
    ws = list(window_set)
    tau_i = ws[i]
    k_count = _kernels.half_bins(tau_i)
    claimed = np.zeros(k_count, dtype=bool)
    groups = []
    for j in range(i):
        ratio = tau_i // ws[j]
        bins = np.arange(0, k_count, ratio)
        bins = bins[~claimed[bins]]
        if bins.size:
            claimed[bins] = True
            groups.append((j, ratio, bins))
    return groups


def interleave(h: Hologram, weights: InterleaveWeights) -> Hologram:
    """Attention-weighted cross-resolution merge (identity at zero weights).

    For every coarse bin aligned with a finer-time rep, the sum of the
    finest rep's S aligned chunks is replaced by S * a^T z with
    a = softmax(|W z|); z is read from the raw input hologram, never
    from partially merged output.
    """
    out = []
    for i, rep in enumerate(h.reps):
        if i == 0:
            out.append(rep.copy())
            continue
        z_coarse = rep.data.as_array()
        merged = z_coarse.copy()
        m_i = rep.chunks
        for j, ratio, bins in alignment_groups(h.window_set, i):
            fine = h.reps[j].data.as_array()
            z = fine[:, bins // ratio, :]
            z = z.reshape(m_i, ratio, len(bins), z.shape[-1])
            w_m = weights.matrix(ratio).as_array()
            v = np.einsum("ts,msbd->mtbd", w_m, z)
            att = softmax_real(np.abs(v), axis=1)
            merged[:, bins, :] = ratio * np.sum(att * z, axis=1)
        out.append(SpectralRep(ComplexTensor.from_array(merged), rep.tau, rep.fs))
    return Hologram(out, h.window_set, h.fs)


# --- filtering and weight resolution -----------------------------------------


def interpolate_linear(w: ComplexTensor, tau_base: int, tau_target: int) -> ComplexTensor:
    """Resample filter weights onto a finer frequency grid, piecewise linearly.

    Target bin k' sits at fraction k'*tau_base/tau_target between base
    bins; grid-coincident bins copy the base sample exactly.
    """
    ratio = _expansion_ratio(tau_base, tau_target)
    arr = w.as_array()
    k_base = arr.shape[0]
    k_target = _kernels.half_bins(tau_target)
    kp = np.arange(k_target)
    k_l = kp // ratio
    rem = kp % ratio
    k_r = np.minimum(k_l + 1, k_base - 1)
    frac = (rem / ratio).reshape((-1,) + (1,) * (arr.ndim - 1))
    out = arr[k_l] * (1.0 - frac) + arr[k_r] * frac
    return ComplexTensor.from_array(out)


def interpolate_spectral(w: ComplexTensor, tau_base: int, tau_target: int) -> ComplexTensor:
    """Resample filter weights by zero-padding their impulse response.

    Each (d, o) column is treated as the half-spectrum of a real
    tau_base-tap response; zero-padding that response to tau_target and
    re-transforming samples the same continuous frequency response on
    the finer grid, so base-grid frequencies are reproduced exactly.
    """
    _expansion_ratio(tau_base, tau_target)
    arr = w.as_array()
    if np.max(np.abs(arr[0].imag), initial=0.0) > DC_NYQUIST_TOL or np.max(
        np.abs(arr[-1].imag), initial=0.0
    ) > DC_NYQUIST_TOL:
        raise DomainError("weight columns are not half-spectra of real responses")
    out = _spectral_interp_raw(arr, tau_base, tau_target)
    return ComplexTensor.from_array(out)


def _spectral_interp_raw(arr: np.ndarray, tau_base: int, tau_target: int) -> np.ndarray:
    """Spectral interpolation on a (K_base, ...) complex array, no checks."""
    k_base = arr.shape[0]
    tail = arr.shape[1:]
    cols = arr.reshape(k_base, -1).T
    impulse = _kernels.irfft_rows(cols, tau_base)
    padded = np.zeros((impulse.shape[0], tau_target))
    padded[:, :tau_base] = impulse
    spec = _kernels.rfft_rows(padded)
    return spec.T.reshape((spec.shape[1],) + tail)


def _expansion_ratio(tau_base: int, tau_target: int) -> int:
    if tau_target <= tau_base:
        raise ConfigError(
            f"interpolation needs tau_target > tau_base, got {tau_target} <= {tau_base}"
        )
    if not (_kernels.is_pow2(tau_base) and _kernels.is_pow2(tau_target)):
        raise ConfigError("window widths must be powers of two")
    return tau_target // tau_base


def resolve_filter_weights(fw: FilterWeights, tau: int) -> ComplexTensor:
    """Weight slice for a rep of window ``tau``: identity, subsample, or interp."""
    if tau == fw.tau_base:
        return fw.w
    if tau < fw.tau_base:
        stride = fw.tau_base // tau
        return ComplexTensor(fw.w.re[::stride], fw.w.im[::stride])
    if fw.interp_mode == "linear":
        return interpolate_linear(fw.w, fw.tau_base, tau)
    return interpolate_spectral(fw.w, fw.tau_base, tau)


def stfnet_filter(rep: SpectralRep, fw: FilterWeights) -> SpectralRep:
    """Per-bin complex feature mixing: out[m,k,:] = in[m,k,:] @ W[k,:,:]."""
    if rep.features != fw.w.shape[1]:
        raise ShapeError(
            f"rep has {rep.features} features, filter expects {fw.w.shape[1]}"
        )
    w = resolve_filter_weights(fw, rep.tau).as_array()
    out = np.einsum("mkd,kdo->mko", rep.data.as_array(), w)
    return SpectralRep(ComplexTensor.from_array(out), rep.tau, rep.fs)


# --- spectral padding and convolution ----------------------------------------


def pad_source_indices(k_count: int, pad_left: int, pad_right: int):
    """(source bin, conjugate?) for each output bin of a padded spectrum.

    Virtual bins below DC mirror conjugated about DC; bins above Nyquist
    mirror conjugated about Nyquist, matching the full-spectrum
    conjugate symmetry of a real signal's DFT.
    """
    if pad_left >= k_count or pad_right >= k_count:
        raise ShapeError(
            f"padding ({pad_left}, {pad_right}) exceeds mirror range of {k_count} bins"
        )
    if pad_left < 0 or pad_right < 0:
        raise ShapeError("padding must be non-negative")
    virtual = np.arange(-pad_left, k_count + pad_right)
    src = np.where(virtual < 0, -virtual, virtual)
    src = np.where(virtual >= k_count, 2 * (k_count - 1) - virtual, src)
    conj = (virtual < 0) | (virtual >= k_count)
    return src, conj


def spectral_pad(rep: SpectralRep, pad_left: int, pad_right: int) -> ComplexTensor:
    """Extend the bin axis by conjugate mirroring; no new energy invented."""
    src, conj = pad_source_indices(rep.bins, pad_left, pad_right)
    z = rep.data.as_array()
    out = z[:, src, :]
    out[:, conj, :] = np.conj(out[:, conj, :])
    return ComplexTensor.from_array(out)


def conv_geometry(k_count: int, kernel_size: int, tau: int, tau_conv_base: int):
    """(dilation rate, pad_left, pad_right) for a same-shape convolution."""
    if tau < tau_conv_base or tau % tau_conv_base != 0:
        raise ShapeError(
            f"rep window {tau} must be a multiple of the kernel base {tau_conv_base}"
        )
    rate = tau // tau_conv_base - 1
    span = (kernel_size - 1) * (rate + 1) + 1
    if span > 2 * k_count - 1:
        raise ShapeError(
            f"kernel span {span} exceeds the {2 * k_count - 1} mirrorable bins"
        )
    pad_left = (span - 1) // 2
    pad_right = span - 1 - pad_left
    return rate, pad_left, pad_right


def stfnet_conv(rep: SpectralRep, cw: ConvWeights) -> SpectralRep:
    """Dilated complex cross-correlation along the frequency axis.

    The dilation rate tau/tau_conv_base - 1 keeps the taps at the same
    physical frequency spacing on every resolution; spectral padding
    keeps the output bin count equal to the input's.
    """
    if rep.features != cw.w.shape[2]:
        raise ShapeError(
            f"rep has {rep.features} features, kernel expects {cw.w.shape[2]}"
        )
    kernel_size = cw.w.shape[1]
    rate, pad_left, pad_right = conv_geometry(
        rep.bins, kernel_size, rep.tau, cw.tau_conv_base
    )
    padded = spectral_pad(rep, pad_left, pad_right).as_array()
    taps = np.arange(rep.bins)[:, None] + np.arange(kernel_size)[None, :] * (rate + 1)
    gathered = padded[:, taps, :]
    out = np.einsum("mksd,sdo->mko", gathered, cw.w.as_array()[0])
    return SpectralRep(ComplexTensor.from_array(out), rep.tau, rep.fs)


# --- pooling ------------------------------------------------------------------


def stfnet_pool(h: Hologram, spec: PoolSpec) -> Hologram:
    """Drop bins above the shared cutoff rho * fs/2 and re-label windows.

    Every rep keeps bins 0..tau*rho/2 and becomes a width tau*rho view,
    so a later inverse transform yields the band-limited signal
    decimated by 1/rho. Kept coefficients are rescaled by rho: the same
    oscillation described with a 1/rho shorter window needs a
    proportionally smaller coefficient under the 1/tau inverse
    normalization, and with the rescale pool-then-invert reproduces the
    decimated signal at its original amplitude. The sampling-rate
    metadata shrinks by rho so bin frequencies keep their physical
    values.
    """
    rho = float(spec.rho)
    if spec.rho == 1:
        return h.copy()
    new_reps = []
    for rep in h.reps:
        new_tau = spec.pooled_tau(rep.tau)
        kept = _kernels.half_bins(new_tau)
        data = rep.data.as_array()[:, :kept, :] * rho
        new_reps.append(
            SpectralRep(ComplexTensor.from_array(data), new_tau, rep.fs * rho)
        )
    return Hologram(new_reps, tuple(r.tau for r in new_reps), h.fs * rho)


# --- parameter initialization --------------------------------------------------


def init_filter_weights(
    rng: np.random.Generator,
    tau_base: int,
    d: int,
    o: int,
    interp_mode: str = "linear",
) -> FilterWeights:
    """Small symmetric random init with near-real DC/Nyquist columns."""
    k_base = _kernels.half_bins(tau_base)
    scale = 1.0 / np.sqrt(d * k_base)
    re = rng.normal(0.0, scale, size=(k_base, d, o))
    im = rng.normal(0.0, scale, size=(k_base, d, o))
    im[0] = 0.0
    im[-1] = 0.0
    return FilterWeights(ComplexTensor(re, im), tau_base, interp_mode)


def init_conv_weights(
    rng: np.random.Generator, tau_conv_base: int, kernel_size: int, d: int, o: int
) -> ConvWeights:
    scale = 1.0 / np.sqrt(d * kernel_size)
    re = rng.normal(0.0, scale, size=(1, kernel_size, d, o))
    im = rng.normal(0.0, scale, size=(1, kernel_size, d, o))
    return ConvWeights(ComplexTensor(re, im), tau_conv_base)
