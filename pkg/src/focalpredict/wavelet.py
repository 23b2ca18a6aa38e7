"""Mexican-hat continuous wavelet transform and the time x scale x channel tensor."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .ingest import EegRecording

DYADIC_SCALES: tuple[float, ...] = tuple(float(2 ** i) for i in range(10))

# Ricker normalisation 2 / (sqrt(3) * pi**(1/4))
_RICKER_NORM = 2.0 / (math.sqrt(3.0) * math.pi ** 0.25)

# Kernel half-width in units of scale. At 8a the tail is below 1e-12 of the peak.
SUPPORT_FACTOR = 8

_CACHE_MAGIC = b"FPWT"
_CACHE_VERSION = 1


def mexican_hat_kernel(scale: float, support: Optional[int] = None) -> np.ndarray:
    """Sampled Mexican-hat wavelet at ``scale`` (in samples), L2-normalised.

    Returns values for n = -support..support. ``support`` defaults to
    ``SUPPORT_FACTOR * scale`` and must be at least ``5 * scale``.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if support is None:
        support = int(math.ceil(SUPPORT_FACTOR * scale))
    if support < 5 * scale:
        raise ValueError(f"support {support} shorter than 5*scale = {5 * scale}")
    n = np.arange(-support, support + 1, dtype=np.float64)
    u = n / scale
    return _RICKER_NORM * (1.0 - u ** 2) * np.exp(-0.5 * u ** 2) / math.sqrt(scale)


def peak_frequency(scale: float, sampling_rate: float) -> float:
    """Frequency (Hz) at which the scale-``scale`` kernel responds most strongly."""
    return math.sqrt(2.0) / (2.0 * math.pi * scale) * sampling_rate


def cwt_channel(signal, scales: Sequence[float]) -> np.ndarray:
    """CWT of a single series; returns a time x scale float64 matrix.

    Each column is the same-length convolution with the scale's kernel, the
    signal being zero-padded at both ends.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("signal must be a non-empty 1-D series")
    return _cwt(x[None, :], scales)[:, :, 0]


def _cwt(x: np.ndarray, scales: Sequence[float], dtype=np.float64) -> np.ndarray:
    # x: channel x time -> time x scale x channel
    scales = list(scales)
    if not scales:
        raise ValueError("empty scale list")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly increasing")
    out = np.empty((x.shape[1], len(scales), x.shape[0]), dtype=dtype)
    for j, a in enumerate(scales):
        kernel = mexican_hat_kernel(a)
        out[:, j, :] = fftconvolve(x, kernel[None, :], mode="same", axes=1).T
    return out


@dataclass
class WaveletTensor:
    """CWT coefficients, time x scale x channel, stored as float32."""

    coefficients: np.ndarray
    scales: tuple[float, ...]
    sampling_rate: int
    onset_time: Optional[float] = None
    recording_id: str = ""
    channel_labels: tuple[str, ...] = ()

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float32)
        if self.coefficients.ndim != 3:
            raise ValueError("coefficients must be time x scale x channel")
        self.scales = tuple(float(s) for s in self.scales)
        if len(self.scales) != self.coefficients.shape[1]:
            raise ValueError("scale list does not match the scale mode")

    @property
    def n_samples(self) -> int:
        return self.coefficients.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sampling_rate


def build_wavelet_tensor(rec: EegRecording, scales: Sequence[float] = DYADIC_SCALES) -> WaveletTensor:
    """Apply the CWT to every channel of the whole recording."""
    return WaveletTensor(
        coefficients=_cwt(rec.samples, scales, dtype=np.float32),
        scales=tuple(scales),
        sampling_rate=rec.sampling_rate,
        onset_time=rec.onset_time,
        recording_id=rec.recording_id,
        channel_labels=tuple(rec.channel_labels),
    )


def raw_tensor(rec: EegRecording) -> WaveletTensor:
    """The untransformed signal as a time x 1 x channel tensor (raw-input mode)."""
    return WaveletTensor(
        coefficients=rec.samples.T[:, None, :].astype(np.float32),
        scales=(0.0,),
        sampling_rate=rec.sampling_rate,
        onset_time=rec.onset_time,
        recording_id=rec.recording_id,
        channel_labels=tuple(rec.channel_labels),
    )


def save_tensor(path, tensor: WaveletTensor) -> None:
    """Write the flat binary tensor cache.

    Layout (little-endian): magic ``FPWT``, uint32 version, uint64 T, S, C,
    S float64 scales, float64 sampling rate, float64 onset (NaN when absent),
    then T*S*C float32 coefficients in time-major order.
    """
    t, s, c = tensor.coefficients.shape
    onset = math.nan if tensor.onset_time is None else tensor.onset_time
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<I3Q", _CACHE_VERSION, t, s, c))
        fh.write(np.asarray(tensor.scales, dtype="<f8").tobytes())
        fh.write(struct.pack("<2d", float(tensor.sampling_rate), onset))
        fh.write(np.ascontiguousarray(tensor.coefficients, dtype="<f4").tobytes())


def load_tensor(path, recording_id: str = "") -> WaveletTensor:
    with open(path, "rb") as fh:
        if fh.read(4) != _CACHE_MAGIC:
            raise ValueError(f"{path}: not a wavelet tensor cache")
        version, t, s, c = struct.unpack("<I3Q", fh.read(28))
        if version != _CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        scales = np.frombuffer(fh.read(8 * s), dtype="<f8")
        rate, onset = struct.unpack("<2d", fh.read(16))
        body = fh.read()
    if len(body) != 4 * t * s * c:
        raise ValueError(f"{path}: truncated tensor body")
    coeffs = np.frombuffer(body, dtype="<f4").reshape(t, s, c)
    return WaveletTensor(
        coefficients=coeffs, scales=tuple(scales), sampling_rate=int(rate),
        onset_time=None if math.isnan(onset) else onset, recording_id=recording_id,
    )
