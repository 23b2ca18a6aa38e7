"""EDF reading/writing, bipolar montage derivation and low-pass filtering.

The EDF layout handled here is the plain (non-plus) format: a 256-byte fixed
header, 256 bytes of per-signal header, then data records holding 16-bit
little-endian two's-complement samples for each signal in turn.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.signal import butter, resample_poly, sosfiltfilt

ANNOTATION_LABEL = "EDF Annotations"

# Standard longitudinal bipolar chains plus the midline and temporal
# cross-links used by CHB-MIT; 22 derivations in total.
DEFAULT_DERIVATIONS: tuple[tuple[str, str], ...] = (
    ("FP1", "F7"), ("F7", "T7"), ("T7", "P7"), ("P7", "O1"),
    ("FP1", "F3"), ("F3", "C3"), ("C3", "P3"), ("P3", "O1"),
    ("FP2", "F4"), ("F4", "C4"), ("C4", "P4"), ("P4", "O2"),
    ("FP2", "F8"), ("F8", "T8"), ("T8", "P8"), ("P8", "O2"),
    ("FZ", "CZ"), ("CZ", "PZ"),
    ("P7", "T7"), ("T7", "FT9"), ("FT9", "FT10"), ("FT10", "T8"),
)


class EdfError(ValueError):
    """Raised for malformed or unsupported EDF content."""


@dataclass
class EegRecording:
    """Multichannel EEG signal.

    ``samples`` is channel x time in microvolts. ``onset_time`` is the seizure
    onset in seconds from the start, or None for interictal-only recordings.
    """

    samples: np.ndarray
    sampling_rate: int
    channel_labels: list[str]
    onset_time: Optional[float] = None
    recording_id: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if int(self.sampling_rate) != self.sampling_rate or self.sampling_rate <= 0:
            raise ValueError(f"sampling rate must be a positive integer, got {self.sampling_rate}")
        self.sampling_rate = int(self.sampling_rate)
        self.channel_labels = list(self.channel_labels)
        if len(self.channel_labels) != self.samples.shape[0]:
            raise ValueError(
                f"{len(self.channel_labels)} labels for {self.samples.shape[0]} channels"
            )
        if self.onset_time is not None:
            self.onset_time = float(self.onset_time)
            if not 0 <= self.onset_time < self.duration:
                raise ValueError(
                    f"onset {self.onset_time} s outside recording of {self.duration} s"
                )

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sampling_rate


@dataclass(frozen=True)
class MontageSpec:
    derivations: tuple[tuple[str, str], ...] = DEFAULT_DERIVATIONS
    expected_channels: int = 22

    @property
    def names(self) -> list[str]:
        return [f"{pos}-{neg}" for pos, neg in self.derivations]

    @classmethod
    def from_names(cls, names: Sequence[str], expected_channels: Optional[int] = None):
        """Build from ``"POS-NEG"`` strings, as written in config files."""
        pairs = []
        for name in names:
            parts = name.strip().split("-")
            if len(parts) != 2 or not all(parts):
                raise ValueError(f"bad derivation {name!r}, expected POS-NEG")
            pairs.append((parts[0].strip(), parts[1].strip()))
        n = len(pairs) if expected_channels is None else expected_channels
        return cls(tuple(pairs), n)


# --------------------------------------------------------------------------
# EDF
# --------------------------------------------------------------------------


@dataclass
class EdfSignalHeader:
    label: str
    transducer: str
    physical_dimension: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    prefiltering: str
    samples_per_record: int

    @property
    def gain(self) -> float:
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)

    def to_physical(self, digital: np.ndarray) -> np.ndarray:
        return self.physical_min + (digital.astype(np.float64) - self.digital_min) * self.gain

    def to_digital(self, physical: np.ndarray) -> np.ndarray:
        d = np.rint((np.asarray(physical, dtype=np.float64) - self.physical_min) / self.gain
                    + self.digital_min)
        return np.clip(d, self.digital_min, self.digital_max).astype(np.int16)


@dataclass
class EdfHeader:
    version: str
    patient: str
    recording: str
    start_date: str
    start_time: str
    header_bytes: int
    n_records: int
    record_duration: float
    signals: list[EdfSignalHeader]


def _field(raw: bytes, name: str) -> str:
    try:
        return raw.decode("ascii").strip()
    except UnicodeDecodeError:
        return raw.decode("latin-1").strip()


def _number(raw: bytes, name: str, kind=float):
    text = _field(raw, name)
    try:
        value = float(text)
    except ValueError:
        raise EdfError(f"malformed header: field {name!r} is not numeric ({text!r})") from None
    if kind is int:
        if value != int(value):
            raise EdfError(f"malformed header: field {name!r} is not an integer ({text!r})")
        return int(value)
    return value


def read_edf_header(fh) -> EdfHeader:
    fixed = fh.read(256)
    if len(fixed) < 256:
        raise EdfError("malformed header: file shorter than the 256-byte fixed header")
    header_bytes = _number(fixed[184:192], "header bytes", int)
    n_records = _number(fixed[236:244], "number of data records", int)
    record_duration = _number(fixed[244:252], "record duration")
    ns = _number(fixed[252:256], "number of signals", int)
    if ns < 1:
        raise EdfError("malformed header: no signals declared")
    if header_bytes != 256 * (ns + 1):
        raise EdfError(
            f"malformed header: header byte count {header_bytes} != 256*(ns+1) = {256 * (ns + 1)}"
        )
    raw = fh.read(256 * ns)
    if len(raw) < 256 * ns:
        raise EdfError("malformed header: signal headers truncated")

    widths = [16, 80, 8, 8, 8, 8, 8, 80, 8, 32]
    columns = []
    offset = 0
    for w in widths:
        columns.append([raw[offset + i * w: offset + (i + 1) * w] for i in range(ns)])
        offset += w * ns
    signals = []
    for i in range(ns):
        sig = EdfSignalHeader(
            label=_field(columns[0][i], "label"),
            transducer=_field(columns[1][i], "transducer"),
            physical_dimension=_field(columns[2][i], "physical dimension"),
            physical_min=_number(columns[3][i], "physical minimum"),
            physical_max=_number(columns[4][i], "physical maximum"),
            digital_min=_number(columns[5][i], "digital minimum", int),
            digital_max=_number(columns[6][i], "digital maximum", int),
            prefiltering=_field(columns[7][i], "prefiltering"),
            samples_per_record=_number(columns[8][i], "samples per record", int),
        )
        if sig.digital_max <= sig.digital_min:
            raise EdfError(f"signal {sig.label!r}: digital maximum <= digital minimum")
        if sig.samples_per_record < 1:
            raise EdfError(f"signal {sig.label!r}: samples per record must be positive")
        signals.append(sig)
    return EdfHeader(
        version=_field(fixed[0:8], "version"),
        patient=_field(fixed[8:88], "patient"),
        recording=_field(fixed[88:168], "recording"),
        start_date=_field(fixed[168:176], "start date"),
        start_time=_field(fixed[176:184], "start time"),
        header_bytes=header_bytes,
        n_records=n_records,
        record_duration=record_duration,
        signals=signals,
    )


def read_edf_digital(path) -> tuple[EdfHeader, list[np.ndarray]]:
    """Read the header and the raw 16-bit samples of every signal (annotations included)."""
    with open(path, "rb") as fh:
        header = read_edf_header(fh)
        data = fh.read()
    spr = np.array([s.samples_per_record for s in header.signals])
    record_len = int(spr.sum())
    available = len(data) // (2 * record_len)
    n_records = header.n_records
    if n_records < 0:
        n_records = available
    if available < n_records or n_records == 0:
        raise EdfError(
            f"truncated data section: header declares {header.n_records} records, "
            f"file holds {available}"
        )
    block = np.frombuffer(data, dtype="<i2", count=n_records * record_len)
    block = block.reshape(n_records, record_len)
    bounds = np.concatenate([[0], np.cumsum(spr)])
    digital = [block[:, bounds[i]:bounds[i + 1]].reshape(-1).copy()
               for i in range(len(header.signals))]
    header.n_records = n_records
    return header, digital


def read_edf(path, resample: bool = False) -> EegRecording:
    """Load an EDF file as an :class:`EegRecording` in physical units.

    Annotation channels are dropped. Signals must share one sampling rate
    unless ``resample`` is set, in which case they are polyphase-resampled to
    the highest rate present.
    """
    header, digital = read_edf_digital(path)
    if header.record_duration <= 0:
        raise EdfError("malformed header: record duration must be positive")
    keep = [i for i, s in enumerate(header.signals) if s.label != ANNOTATION_LABEL]
    if not keep:
        raise EdfError("no data signals (only annotations)")
    rates = [header.signals[i].samples_per_record / header.record_duration for i in keep]
    target = max(rates)
    channels = []
    for i, rate in zip(keep, rates):
        x = header.signals[i].to_physical(digital[i])
        if not math.isclose(rate, target, rel_tol=1e-9):
            if not resample:
                raise EdfError(
                    f"inconsistent sampling rates ({sorted(set(rates))} Hz); "
                    "pass resample=True to resample"
                )
            up = header.signals[keep[rates.index(target)]].samples_per_record
            down = header.signals[i].samples_per_record
            g = math.gcd(up, down)
            x = resample_poly(x, up // g, down // g)
        channels.append(x)
    if abs(target - round(target)) > 1e-6:
        raise EdfError(f"non-integer sampling rate {target} Hz is not supported")
    return EegRecording(
        samples=np.vstack(channels),
        sampling_rate=int(round(target)),
        channel_labels=[header.signals[i].label for i in keep],
        recording_id=os.path.splitext(os.path.basename(str(path)))[0],
    )


def _ascii(value, width: int) -> bytes:
    text = value if isinstance(value, str) else _format_number(value, width)
    raw = text.encode("ascii", "replace")[:width]
    return raw.ljust(width, b" ")


def _format_number(value, width: int = 8) -> str:
    if float(value).is_integer() and len(str(int(value))) <= width:
        return str(int(value))
    for digits in range(width, 0, -1):
        text = f"{value:.{digits}f}".rstrip("0").rstrip(".")
        if len(text) <= width:
            return text
    raise EdfError(f"cannot fit {value!r} in {width} characters")


def _physical_range(x: np.ndarray) -> tuple[float, float]:
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi - lo < 1e-3:
        lo, hi = lo - 1.0, hi + 1.0
    # widen outward after formatting so every sample stays representable
    lo_s, hi_s = _format_number(math.floor(lo * 10) / 10), _format_number(math.ceil(hi * 10) / 10)
    return float(lo_s), float(hi_s)


def write_edf(path, rec: EegRecording, patient: str = "X X X X",
              start_date: str = "01.01.00", start_time: str = "00.00.00") -> EdfHeader:
    """Write ``rec`` as a plain EDF file and return the header that was written.

    Each channel gets its own physical range (data min/max, rounded outward to
    0.1 uV) mapped onto the full int16 digital range.
    """
    fs = rec.sampling_rate
    n = rec.n_samples
    spr = fs if n % fs == 0 else math.gcd(n, fs)
    n_records = n // spr
    duration = spr / fs
    ns = rec.n_channels
    signals = []
    for i in range(ns):
        pmin, pmax = _physical_range(rec.samples[i])
        signals.append(EdfSignalHeader(
            label=rec.channel_labels[i], transducer="", physical_dimension="uV",
            physical_min=pmin, physical_max=pmax, digital_min=-32768, digital_max=32767,
            prefiltering="", samples_per_record=spr,
        ))
    header = EdfHeader(
        version="0", patient=patient, recording=f"Startdate {rec.recording_id}",
        start_date=start_date, start_time=start_time, header_bytes=256 * (ns + 1),
        n_records=n_records, record_duration=duration, signals=signals,
    )
    fixed = b"".join([
        _ascii(header.version, 8), _ascii(header.patient, 80), _ascii(header.recording, 80),
        _ascii(header.start_date, 8), _ascii(header.start_time, 8),
        _ascii(header.header_bytes, 8), _ascii("", 44), _ascii(n_records, 8),
        _ascii(duration, 8), _ascii(ns, 4),
    ])
    per_signal = [
        [_ascii(s.label, 16) for s in signals],
        [_ascii(s.transducer, 80) for s in signals],
        [_ascii(s.physical_dimension, 8) for s in signals],
        [_ascii(s.physical_min, 8) for s in signals],
        [_ascii(s.physical_max, 8) for s in signals],
        [_ascii(s.digital_min, 8) for s in signals],
        [_ascii(s.digital_max, 8) for s in signals],
        [_ascii(s.prefiltering, 80) for s in signals],
        [_ascii(s.samples_per_record, 8) for s in signals],
        [_ascii("", 32) for _ in signals],
    ]
    digital = np.vstack([s.to_digital(rec.samples[i]) for i, s in enumerate(signals)])
    body = digital.reshape(ns, n_records, spr).transpose(1, 0, 2).astype("<i2")
    with open(path, "wb") as fh:
        fh.write(fixed)
        fh.write(b"".join(b"".join(col) for col in per_signal))
        fh.write(body.tobytes())
    return header


# --------------------------------------------------------------------------
# Montage and filtering
# --------------------------------------------------------------------------


def _normalize_label(label: str) -> str:
    text = label.strip().upper()
    if text.startswith("EEG "):
        text = text[4:].strip()
    for suffix in ("-REF", "-LE", "-AR"):
        if text.endswith(suffix):
            text = text[: -len(suffix)]
    # CHB-MIT disambiguates repeated derivations as "T8-P8-0", "T8-P8-1"
    parts = text.split("-")
    if len(parts) == 3 and parts[2].isdigit():
        text = "-".join(parts[:2])
    return text


def apply_montage(rec: EegRecording, montage: MontageSpec = MontageSpec(),
                  pad: bool = False) -> EegRecording:
    """Derive bipolar channels ``POS - NEG`` in montage order.

    Recordings whose labels already contain every derivation name are treated
    as pre-montaged and only reordered. With ``pad`` set, the output is
    zero-padded or truncated to ``montage.expected_channels``; otherwise a
    count mismatch raises.
    """
    names = montage.names
    lookup: dict[str, int] = {}
    for i, label in enumerate(rec.channel_labels):
        lookup.setdefault(_normalize_label(label), i)
    wanted = [_normalize_label(n) for n in names]

    if all(w in lookup for w in wanted):
        index = [lookup[w] for w in wanted]
        if index == list(range(rec.n_channels)) and list(rec.channel_labels) == names:
            out_samples, out_labels = rec.samples, list(rec.channel_labels)
        else:
            out_samples = rec.samples[index]
            out_labels = list(names)
    else:
        rows = []
        for pos, neg in montage.derivations:
            for electrode in (pos, neg):
                if _normalize_label(electrode) not in lookup:
                    raise ValueError(f"missing electrode {electrode}")
            rows.append(rec.samples[lookup[_normalize_label(pos)]]
                        - rec.samples[lookup[_normalize_label(neg)]])
        out_samples = np.vstack(rows)
        out_labels = list(names)

    expected = montage.expected_channels
    if len(out_labels) != expected:
        if not pad:
            raise ValueError(
                f"montage yields {len(out_labels)} channels, expected {expected}"
            )
        if len(out_labels) > expected:
            out_samples, out_labels = out_samples[:expected], out_labels[:expected]
        else:
            extra = expected - len(out_labels)
            out_samples = np.vstack([out_samples, np.zeros((extra, rec.n_samples))])
            out_labels = out_labels + [f"PAD{i}" for i in range(extra)]

    if out_samples is rec.samples:
        return rec
    return replace(rec, samples=out_samples, channel_labels=out_labels)


def design_lowpass(cutoff: float, sampling_rate: float, order: int = 4) -> np.ndarray:
    return butter(order, cutoff, btype="low", fs=sampling_rate, output="sos")


def lowpass_filter(rec: EegRecording, cutoff: float, order: int = 4) -> EegRecording:
    """Zero-phase Butterworth low-pass; identity when ``cutoff`` >= Nyquist."""
    if cutoff <= 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    if cutoff >= rec.sampling_rate / 2:
        return rec
    sos = design_lowpass(cutoff, rec.sampling_rate, order)
    return replace(rec, samples=sosfiltfilt(sos, rec.samples, axis=1))
