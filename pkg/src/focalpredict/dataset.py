"""Epoch segmentation, three-way labelling, normalisation, balancing and folds."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import PipelineConfig
from .wavelet import WaveletTensor

INTERICTAL, PREICTAL, ICTAL = 0, 1, 2
CLASS_NAMES = ("interictal", "preictal", "ictal")

STD_FLOOR = 1e-8


@dataclass
class LabeledEpoch:
    """One window. ``data`` is scale x time x channel."""

    data: np.ndarray
    label: int
    start_time: float
    recording_id: str


@dataclass
class EpochSet:
    """A batch of epochs stored as one array.

    ``data`` has shape (n, scale, time, channel). ``labels`` is None until
    :func:`label_epochs` has run.
    """

    data: np.ndarray
    start_times: np.ndarray
    recording_ids: np.ndarray
    labels: Optional[np.ndarray] = None
    sampling_rate: int = 256

    def __len__(self) -> int:
        return len(self.start_times)

    def __getitem__(self, i: int) -> LabeledEpoch:
        label = -1 if self.labels is None else int(self.labels[i])
        return LabeledEpoch(self.data[i], label, float(self.start_times[i]),
                            str(self.recording_ids[i]))

    def subset(self, index) -> "EpochSet":
        index = np.asarray(index)
        return EpochSet(
            data=self.data[index],
            start_times=self.start_times[index],
            recording_ids=self.recording_ids[index],
            labels=None if self.labels is None else self.labels[index],
            sampling_rate=self.sampling_rate,
        )

    def class_counts(self) -> tuple[int, int, int]:
        counts = np.bincount(self.labels, minlength=3)
        return int(counts[0]), int(counts[1]), int(counts[2])

    @classmethod
    def concatenate(cls, sets: Sequence["EpochSet"]) -> "EpochSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            raise ValueError("nothing to concatenate")
        labels = None
        if all(s.labels is not None for s in sets):
            labels = np.concatenate([s.labels for s in sets])
        return cls(
            data=np.concatenate([s.data for s in sets]),
            start_times=np.concatenate([s.start_times for s in sets]),
            recording_ids=np.concatenate([s.recording_ids for s in sets]),
            labels=labels,
            sampling_rate=sets[0].sampling_rate,
        )


def segment(tensor: WaveletTensor, e: float, o: float) -> EpochSet:
    """Cut the tensor into windows of ``e`` seconds overlapping by fraction ``o``.

    The returned data is a read-only view on the tensor; the trailing partial
    window is discarded.
    """
    fs = tensor.sampling_rate
    width = int(round(e * fs))
    if width < 1:
        raise ValueError("epoch shorter than one sample")
    if not 0 <= o < 1:
        raise ValueError("overlap must lie in [0, 1)")
    step = int(round(e * (1 - o) * fs))
    if step < 1:
        raise ValueError("window step shorter than one sample")
    coeffs = tensor.coefficients
    n = tensor.n_samples
    if n < width:
        data = np.empty((0, coeffs.shape[1], width, coeffs.shape[2]), dtype=coeffs.dtype)
        starts = np.empty(0)
    else:
        count = (n - width) // step + 1
        # (windows, scale, channel, time) -> (windows, scale, time, channel)
        windows = sliding_window_view(coeffs, width, axis=0)[: count * step: step]
        data = windows.transpose(0, 1, 3, 2)
        starts = np.arange(count) * step / fs
    ids = np.full(len(starts), tensor.recording_id, dtype=object)
    return EpochSet(data=data, start_times=starts, recording_ids=ids, sampling_rate=fs)


def epoch_labels(start_times, onset_time: Optional[float], l: float) -> np.ndarray:
    if l <= 0:
        raise ValueError("preictal length must be positive")
    starts = np.asarray(start_times, dtype=np.float64)
    labels = np.full(starts.shape, INTERICTAL, dtype=np.int64)
    if onset_time is None:
        return labels
    labels[(starts >= onset_time - 60.0 * l) & (starts < onset_time)] = PREICTAL
    labels[starts >= onset_time] = ICTAL
    return labels


def label_epochs(epochs: EpochSet, onset_time: Optional[float], l: float) -> EpochSet:
    """Label by window start: ictal from onset on, preictal within ``l`` minutes before it."""
    return EpochSet(
        data=epochs.data, start_times=epochs.start_times, recording_ids=epochs.recording_ids,
        labels=epoch_labels(epochs.start_times, onset_time, l),
        sampling_rate=epochs.sampling_rate,
    )


def normalize_epoch(epoch: np.ndarray) -> np.ndarray:
    """Z-score each channel (last axis) over all of its scale and time entries.

    Works on a single scale x time x channel epoch or on a stack of them.
    Uses the population std, floored at 1e-8 so constant channels become zero.
    """
    x = np.asarray(epoch)
    out_dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    # shift by one sample first so a constant channel is exactly zero before
    # the mean is taken; otherwise its rounding residue gets divided by the floor
    x64 = x.astype(np.float64)
    x64 = x64 - x64[..., :1, :1, :]
    axes = (-3, -2)
    mean = x64.mean(axis=axes, keepdims=True)
    std = x64.std(axis=axes, keepdims=True)
    return ((x64 - mean) / np.maximum(std, STD_FLOOR)).astype(out_dtype)


def normalize_epochs(epochs: EpochSet, chunk: int = 512) -> EpochSet:
    out = np.empty(epochs.data.shape, dtype=np.float32)
    for i in range(0, len(epochs), chunk):
        out[i:i + chunk] = normalize_epoch(epochs.data[i:i + chunk])
    return EpochSet(out, epochs.start_times, epochs.recording_ids, epochs.labels,
                    epochs.sampling_rate)


def build_epochs(tensor: WaveletTensor, config: PipelineConfig) -> EpochSet:
    """Segment, label and normalise one recording's tensor."""
    epochs = segment(tensor, config.epoch_length, config.overlap)
    epochs = label_epochs(epochs, tensor.onset_time, config.preictal_length)
    return normalize_epochs(epochs)


def balance_target(n_preictal: int, n_ictal: int) -> int:
    return int(math.floor((n_preictal + n_ictal) / 2 + 0.5))


def balance(dataset: EpochSet, seed: int) -> EpochSet:
    """Undersample interictal epochs to the mean of the preictal and ictal counts.

    Minority classes are kept whole; the result is shuffled with the same seed.
    """
    labels = dataset.labels
    pre = np.flatnonzero(labels == PREICTAL)
    ict = np.flatnonzero(labels == ICTAL)
    inter = np.flatnonzero(labels == INTERICTAL)
    if len(pre) == 0 or len(ict) == 0:
        raise ValueError("cannot balance: preictal or ictal class is empty")
    rng = np.random.default_rng(seed)
    target = balance_target(len(pre), len(ict))
    if len(inter) > target:
        inter = np.sort(rng.choice(inter, size=target, replace=False))
    keep = np.concatenate([inter, pre, ict])
    return dataset.subset(keep[rng.permutation(len(keep))])


def fold_assignment(recording_ids: Sequence[str], k: int, seed: int) -> dict[str, int]:
    """Map each distinct recording to one of ``k`` folds of near-equal size."""
    unique = sorted(set(str(r) for r in recording_ids))
    if len(unique) < k:
        raise ValueError(f"{len(unique)} recordings cannot be split into {k} folds")
    order = np.random.default_rng(seed).permutation(len(unique))
    return {unique[j]: pos % k for pos, j in enumerate(order)}


def kfold_split(dataset: EpochSet, k: int, fold_index: int, seed: int = 0) -> tuple[EpochSet, EpochSet]:
    """(train, validation) for one fold, grouping epochs by recording."""
    if not 0 <= fold_index < k:
        raise ValueError(f"fold_index {fold_index} outside [0, {k})")
    if len(dataset) < k:
        raise ValueError("fewer epochs than folds")
    folds = fold_assignment(dataset.recording_ids, k, seed)
    member = np.array([folds[str(r)] for r in dataset.recording_ids])
    return (dataset.subset(np.flatnonzero(member != fold_index)),
            dataset.subset(np.flatnonzero(member == fold_index)))


def write_label_sidecar(path, epochs: EpochSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording_id", "start_time", "label"])
        for rid, t, lab in zip(epochs.recording_ids, epochs.start_times, epochs.labels):
            writer.writerow([rid, f"{t:.6f}", int(lab)])


def read_label_sidecar(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([r["recording_id"] for r in rows], dtype=object),
            np.array([float(r["start_time"]) for r in rows]),
            np.array([int(r["label"]) for r in rows]))
