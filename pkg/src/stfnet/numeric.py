"""Complex tensor arithmetic, DFT primitives, and tensor serialization.

Complex values are stored as separate float64 real/imaginary planes
(:class:`ComplexTensor`); kernels may build interleaved complex128
temporaries internally, but parameters, spectra, and files always carry
the two planes. Real tensors are plain float64 ``numpy.ndarray``\\ s.
"""

import json
import os
import struct
import tempfile

import numpy as np

from . import _kernels
from .errors import DomainError, ParseError, ShapeError

DC_NYQUIST_TOL = 1e-9


class ComplexTensor:
    """Dense complex array held as two float64 planes of equal shape."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        re = np.asarray(re, dtype=np.float64)
        im = np.asarray(im, dtype=np.float64)
        if re.shape != im.shape:
            raise ShapeError(f"re/im planes differ: {re.shape} vs {im.shape}")
        self.re = re
        self.im = im

    @classmethod
    def from_array(cls, z) -> "ComplexTensor":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())

    @classmethod
    def zeros(cls, shape) -> "ComplexTensor":
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def shape(self) -> tuple:
        return self.re.shape

    @property
    def size(self) -> int:
        return self.re.size

    def as_array(self) -> np.ndarray:
        """Interleaved complex128 copy (re + j*im)."""
        return self.re + 1j * self.im

    def conj(self) -> "ComplexTensor":
        return ComplexTensor(self.re.copy(), -self.im)

    def copy(self) -> "ComplexTensor":
        return ComplexTensor(self.re.copy(), self.im.copy())

    def allfinite(self) -> bool:
        return bool(np.isfinite(self.re).all() and np.isfinite(self.im).all())

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape})"


def _as_complex(x) -> np.ndarray:
    if isinstance(x, ComplexTensor):
        return x.as_array()
    return np.asarray(x, dtype=np.complex128)


def _wrap_like(z: np.ndarray, *operands):
    if any(isinstance(op, ComplexTensor) for op in operands):
        return ComplexTensor.from_array(z)
    if z.shape == ():
        return complex(z)
    return z


def dft_real(x) -> ComplexTensor:
    """Half-spectrum DFT of a real 1-D signal.

    Returns the K = floor(tau/2) + 1 non-redundant bins; radix-2 FFT for
    power-of-two lengths, direct summation otherwise.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ShapeError(f"expected a 1-D signal of length >= 1, got shape {x.shape}")
    spec = _kernels.rfft_rows(x[None, :])[0]
    return ComplexTensor.from_array(spec)


def idft_real(spec: ComplexTensor, tau: int) -> np.ndarray:
    """Real tau-length signal from its half-spectrum.

    The half-spectrum must be consistent with a real signal: imaginary
    parts of the DC bin (and Nyquist, for even tau) within
    ``DC_NYQUIST_TOL`` of zero.
    """
    z = _as_complex(spec)
    if z.ndim != 1:
        raise ShapeError(f"expected a 1-D spectrum, got shape {z.shape}")
    if z.shape[0] != _kernels.half_bins(tau):
        raise ShapeError(
            f"spectrum has {z.shape[0]} bins, want {_kernels.half_bins(tau)} for tau={tau}"
        )
    if abs(z[0].imag) > DC_NYQUIST_TOL:
        raise DomainError(f"DC bin has imaginary part {z[0].imag:.3g}")
    if tau % 2 == 0 and abs(z[-1].imag) > DC_NYQUIST_TOL:
        raise DomainError(f"Nyquist bin has imaginary part {z[-1].imag:.3g}")
    return _kernels.irfft_rows(z[None, :], tau)[0]


def cadd(a, b):
    """Elementwise complex addition."""
    za, zb = _as_complex(a), _as_complex(b)
    return _wrap_like(_broadcast_op(np.add, za, zb), a, b)


def cmul(a, b):
    """Elementwise complex multiplication."""
    za, zb = _as_complex(a), _as_complex(b)
    return _wrap_like(_broadcast_op(np.multiply, za, zb), a, b)


def _broadcast_op(op, za, zb):
    try:
        return op(za, zb)
    except ValueError as exc:
        raise ShapeError(f"shapes {za.shape} and {zb.shape} do not broadcast") from exc


def cconj(a):
    """Elementwise complex conjugate."""
    if isinstance(a, ComplexTensor):
        return a.conj()
    return np.conj(_as_complex(a))


def cmagnitude(a) -> np.ndarray:
    """Elementwise magnitude |z| as a real array."""
    z = _as_complex(a)
    return np.abs(z)


def matmul_complex(a, b):
    """Complex matrix product over the last two axes."""
    za, zb = _as_complex(a), _as_complex(b)
    if za.ndim < 1 or zb.ndim < 1 or za.shape[-1] != zb.shape[-2 if zb.ndim > 1 else 0]:
        raise ShapeError(f"cannot contract shapes {za.shape} and {zb.shape}")
    return _wrap_like(np.matmul(za, zb), a, b)


def softmax_real(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``; outputs sum to one."""
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


# --- binary tensor files ---------------------------------------------------
#
# Layout: 8-byte magic "STFNET01", u32 little-endian JSON header length,
# UTF-8 JSON header {"dtype": "f64"|"c64", "shape": [...]}, then raw
# little-endian float64 payload (re plane then im plane for c64).

MAGIC = b"STFNET01"


def write_bytes_atomic(path: str, payload: bytes) -> None:
    """Write a file via temp-then-rename so readers never see partials."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def tensor_bytes(t) -> bytes:
    """Serialize an ndarray or ComplexTensor to the tensor file format."""
    if isinstance(t, ComplexTensor):
        header = {"dtype": "c64", "shape": list(t.shape)}
        payload = t.re.astype("<f8").tobytes() + t.im.astype("<f8").tobytes()
    else:
        arr = np.asarray(t, dtype=np.float64)
        header = {"dtype": "f64", "shape": list(arr.shape)}
        payload = arr.astype("<f8").tobytes()
    head = json.dumps(header).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def write_tensor(path: str, t) -> None:
    write_bytes_atomic(path, tensor_bytes(t))


def read_tensor(path: str):
    """Read a tensor file; returns ndarray (f64) or ComplexTensor (c64)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:8]!r}")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad header: {exc}") from exc
    dtype = header.get("dtype")
    shape = tuple(header.get("shape", ()))
    count = int(np.prod(shape)) if shape else 1
    body = raw[12 + hlen :]
    if dtype == "f64":
        if len(body) != 8 * count:
            raise ParseError(f"{path}: payload size mismatch")
        return np.frombuffer(body, dtype="<f8").reshape(shape).astype(np.float64)
    if dtype == "c64":
        if len(body) != 16 * count:
            raise ParseError(f"{path}: payload size mismatch")
        flat = np.frombuffer(body, dtype="<f8")
        re = flat[:count].reshape(shape).astype(np.float64)
        im = flat[count:].reshape(shape).astype(np.float64)
        return ComplexTensor(re, im)
    raise ParseError(f"{path}: unknown dtype {dtype!r}")
