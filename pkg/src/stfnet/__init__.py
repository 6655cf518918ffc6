"""Multi-resolution short-time Fourier network blocks and training tools."""

from ._kernels import backend
from .numeric import ComplexTensor, dft_real, idft_real, read_tensor, write_tensor
from .transform import Hologram, SpectralRep, freq_align, istft, multi_stft, stft, time_align_sum
from .specops import (
    ConvWeights,
    FilterWeights,
    InterleaveWeights,
    PoolSpec,
    interleave,
    interpolate_linear,
    interpolate_spectral,
    spectral_pad,
    stfnet_conv,
    stfnet_filter,
    stfnet_pool,
)
from .model import BlockConfig, ModelSpec, SensorStack, default_model_spec

__version__ = "0.1.0"

__all__ = [
    "BlockConfig",
    "ComplexTensor",
    "ConvWeights",
    "FilterWeights",
    "Hologram",
    "InterleaveWeights",
    "ModelSpec",
    "PoolSpec",
    "SensorStack",
    "SpectralRep",
    "backend",
    "default_model_spec",
    "dft_real",
    "freq_align",
    "idft_real",
    "interleave",
    "interpolate_linear",
    "interpolate_spectral",
    "istft",
    "multi_stft",
    "read_tensor",
    "spectral_pad",
    "stft",
    "stfnet_conv",
    "stfnet_filter",
    "stfnet_pool",
    "time_align_sum",
    "write_tensor",
]
