"""Seeded synthetic scalp EEG with known interictal / preictal / ictal regimes.

Interictal activity is 1/f noise plus a 10 Hz rhythm. From the transition
time a 4-8 Hz band-limited component is added whose amplitude ramps linearly
up to onset; from onset a high-amplitude 3 Hz rhythm takes over.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .ingest import EegRecording, MontageSpec, write_edf


@dataclass(frozen=True)
class SynthSpec:
    duration: float = 1800.0
    onset_time: Optional[float] = 1500.0
    transition_time: Optional[float] = None  # defaults to onset - 600 s
    channels: int = 22
    sampling_rate: int = 256
    seed: int = 0
    background_uv: float = 50.0
    alpha_uv: float = 15.0
    theta_start_uv: float = 30.0
    theta_end_uv: float = 60.0
    ictal_uv: float = 300.0
    recording_id: str = ""

    @property
    def transition(self) -> Optional[float]:
        if self.onset_time is None:
            return None
        if self.transition_time is None:
            return self.onset_time - 600.0
        return self.transition_time

    def validate(self) -> None:
        if self.duration <= 0 or self.channels < 1 or self.sampling_rate < 1:
            raise ValueError("duration, channels and sampling_rate must be positive")
        if abs(self.duration * self.sampling_rate - round(self.duration * self.sampling_rate)) > 1e-9:
            raise ValueError("duration * sampling_rate must be an integer")
        if self.onset_time is not None:
            if not 0 <= self.transition < self.onset_time < self.duration:
                raise ValueError("need 0 <= transition_time < onset_time < duration")


def _pink_noise(rng: np.random.Generator, channels: int, n: int, fs: float) -> np.ndarray:
    white = rng.standard_normal((channels, n))
    spectrum = np.fft.rfft(white, axis=1)
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spectrum *= 1.0 / np.sqrt(np.maximum(freqs, 0.5))
    spectrum[:, 0] = 0.0
    x = np.fft.irfft(spectrum, n=n, axis=1)
    return x / x.std(axis=1, keepdims=True)


def _band_noise(rng: np.random.Generator, channels: int, n: int, fs: float,
                lo: float, hi: float) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal((channels, n)), axis=1)
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spectrum[:, (freqs < lo) | (freqs > hi)] = 0.0
    x = np.fft.irfft(spectrum, n=n, axis=1)
    return x / x.std(axis=1, keepdims=True)


def generate(spec: SynthSpec) -> EegRecording:
    """Build the recording described by ``spec``; bit-identical for a fixed seed.

    Ground truth (onset, transition, seed) is stored in ``metadata``.
    """
    spec.validate()
    fs = spec.sampling_rate
    n = int(round(spec.duration * fs))
    c = spec.channels
    rng = np.random.default_rng(spec.seed)
    t = np.arange(n) / fs

    x = spec.background_uv * _pink_noise(rng, c, n, fs)
    phase = rng.uniform(0, 2 * np.pi, (c, 1))
    x += spec.alpha_uv * np.sin(2 * np.pi * 10.0 * t + phase)

    # drawn unconditionally so the interictal part does not depend on onset
    theta = _band_noise(rng, c, n, fs, 4.0, 8.0)
    ictal_phase = rng.uniform(0, 2 * np.pi, (c, 1))
    if spec.onset_time is not None:
        t0, t1 = spec.transition, spec.onset_time
        ramp = np.zeros(n)
        pre = (t >= t0) & (t < t1)
        ramp[pre] = spec.theta_start_uv + (spec.theta_end_uv - spec.theta_start_uv) * (t[pre] - t0) / (t1 - t0)
        ramp[t >= t1] = spec.theta_end_uv
        x += ramp * theta
        ictal = t >= t1
        wave = np.sin(2 * np.pi * 3.0 * t + ictal_phase) + 0.3 * np.sin(2 * np.pi * 6.0 * t + 2 * ictal_phase)
        x[:, ictal] += spec.ictal_uv * wave[:, ictal]

    if c == 22:
        labels = MontageSpec().names
    else:
        labels = [f"CH{i + 1}" for i in range(c)]
    return EegRecording(
        samples=x, sampling_rate=fs, channel_labels=labels, onset_time=spec.onset_time,
        recording_id=spec.recording_id or f"synth{spec.seed}",
        metadata={"transition_time": spec.transition, "onset_time": spec.onset_time,
                  "seed": spec.seed},
    )


def write_synthetic(path_stem, spec: SynthSpec) -> EegRecording:
    """Generate, then write ``<stem>.edf`` plus a ``<stem>.json`` ground-truth sidecar."""
    rec = generate(spec)
    write_edf(f"{path_stem}.edf", rec)
    sidecar = {"onset_time": spec.onset_time, "transition_time": spec.transition,
               "seed": spec.seed, "spec": asdict(spec)}
    with open(f"{path_stem}.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
    return rec
