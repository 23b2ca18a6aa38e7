"""Focal seizure prediction from scalp EEG wavelet tensors."""

from .config import PipelineConfig, load_config
from .ingest import EegRecording, MontageSpec, apply_montage, lowpass_filter, read_edf, write_edf
from .wavelet import WaveletTensor, build_wavelet_tensor, cwt_channel, mexican_hat_kernel

__version__ = "0.1.0"

__all__ = [
    "EegRecording", "MontageSpec", "PipelineConfig", "WaveletTensor", "apply_montage",
    "build_wavelet_tensor", "cwt_channel", "load_config", "lowpass_filter",
    "mexican_hat_kernel", "read_edf", "write_edf",
]
