"""From per-epoch class probabilities to smoothed traces, alarms and per-recording scores."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import PipelineConfig
from .dataset import EpochSet, ICTAL, PREICTAL, epoch_labels
from .network import NetworkParameters, predict_proba


@dataclass
class PredictionTrace:
    times: np.ndarray
    p: np.ndarray
    s: np.ndarray
    alarms: list[float]
    recording_id: str = ""
    labels: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None  # full class distribution, n x 3


@dataclass
class RecordingScore:
    """Outcome for one recording.

    ``predicted`` is None for onset-free recordings. ``prediction_time`` is
    seconds before onset of the earliest in-horizon alarm.
    """

    predicted: Optional[bool]
    prediction_time: Optional[float]
    false_alarm_times: list[float] = field(default_factory=list)
    interictal_duration: float = 0.0  # hours
    recording_id: str = ""


def oncoming_probability(p0, p1, p2):
    """Probability that a seizure is oncoming: 1 - p(interictal)."""
    p0, p1, p2 = (np.asarray(v, dtype=np.float64) for v in (p0, p1, p2))
    total = p0 + p1 + p2
    if (np.any(np.abs(total - 1.0) > 1e-6) or np.any(p0 < 0) or np.any(p1 < 0)
            or np.any(p2 < 0) or np.any(p0 > 1) or np.any(p1 > 1) or np.any(p2 > 1)):
        raise ValueError("inputs are not a probability distribution")
    out = 1.0 - p0
    return float(out) if out.ndim == 0 else out


def smooth(p, alpha: float) -> np.ndarray:
    """Exponential smoothing: s(0) = p(0), s(t) = alpha p(t) + (1 - alpha) s(t-1)."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty series")
    s = np.empty_like(p)
    s[0] = p[0]
    keep = 1.0 - alpha
    for t in range(1, len(p)):
        s[t] = alpha * p[t] + keep * s[t - 1]
    return s


def detect_alarms(s, times, threshold: float, sustain: int, refractory: float) -> list[float]:
    """Alarm at the first epoch of each run of >= ``sustain`` epochs with s >= threshold.

    An alarm within ``refractory`` seconds of the previous one is dropped.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if sustain < 1:
        raise ValueError("sustain must be >= 1")
    s = np.asarray(s, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    above = s >= threshold
    alarms: list[float] = []
    run_start = None
    for i, hit in enumerate(np.append(above, False)):
        if hit and run_start is None:
            run_start = i
        elif not hit and run_start is not None:
            if i - run_start >= sustain:
                t = float(times[run_start])
                if not alarms or t - alarms[-1] >= refractory:
                    alarms.append(t)
            run_start = None
    return alarms


def score_recording(alarms: Sequence[float], onset: Optional[float], l: float,
                    duration: float, recording_id: str = "") -> RecordingScore:
    """Score alarms against the prediction horizon [onset - 60 l, onset).

    Alarms before the horizon are false predictions; alarms at or after onset
    count as neither. The interictal duration excludes the horizon and
    everything after onset.
    """
    alarms = sorted(float(a) for a in alarms)
    if onset is None:
        return RecordingScore(None, None, alarms, duration / 3600.0, recording_id)
    horizon_start = onset - 60.0 * l
    hits = [a for a in alarms if horizon_start <= a < onset]
    false = [a for a in alarms if a < horizon_start]
    interictal = min(duration, max(0.0, horizon_start)) / 3600.0
    if hits:
        return RecordingScore(True, onset - hits[0], false, interictal, recording_id)
    return RecordingScore(False, None, false, interictal, recording_id)


def predict_trace(params: NetworkParameters, epochs: EpochSet, config: PipelineConfig,
                  onset: Optional[float] = None) -> PredictionTrace:
    """Run the network over a recording's epochs (in time order) and smooth."""
    probs = predict_proba(params, epochs.data)
    p = np.clip(1.0 - probs[:, 0], 0.0, 1.0)
    s = smooth(p, config.alpha)
    alarms = detect_alarms(s, epochs.start_times, config.threshold, config.sustain,
                           config.refractory)
    labels = epochs.labels
    if labels is None:
        labels = epoch_labels(epochs.start_times, onset, config.preictal_length)
    rid = str(epochs.recording_ids[0]) if len(epochs) else ""
    return PredictionTrace(np.asarray(epochs.start_times, dtype=np.float64), p, s, alarms,
                           rid, labels, probs)


def oncoming_labels(labels) -> np.ndarray:
    """Binary truth: 1 for preictal or ictal epochs."""
    labels = np.asarray(labels)
    return ((labels == PREICTAL) | (labels == ICTAL)).astype(np.int64)


def write_trace_csv(path, trace: PredictionTrace) -> None:
    """Columns: time_s, p, s, alarm_flag, label."""
    alarm_set = set(trace.alarms)
    labels = trace.labels if trace.labels is not None else np.full(len(trace.times), -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "p", "s", "alarm_flag", "label"])
        for t, p, s, lab in zip(trace.times, trace.p, trace.s, labels):
            writer.writerow([f"{t:.6f}", f"{p:.9f}", f"{s:.9f}",
                             int(float(t) in alarm_set), int(lab)])


def read_trace_csv(path, recording_id: str = "") -> PredictionTrace:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    times = np.array([float(r["time_s"]) for r in rows])
    flags = np.array([int(r["alarm_flag"]) for r in rows], dtype=bool)
    return PredictionTrace(
        times=times,
        p=np.array([float(r["p"]) for r in rows]),
        s=np.array([float(r["s"]) for r in rows]),
        alarms=[float(t) for t in times[flags]],
        recording_id=recording_id,
        labels=np.array([int(r["label"]) for r in rows]),
    )
