"""Sensitivity, false prediction rate, ROC-AUC, MCC and the unspecific random predictor."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .predictor import RecordingScore


@dataclass(frozen=True)
class RandomPredictorParams:
    """``sop`` in hours, ``fpr`` in false predictions per hour."""

    sop: float
    fpr: float
    n_seizures: int
    n_features: int = 100
    alpha_sig: float = 0.05

    @property
    def p(self) -> float:
        return self.sop * self.fpr


@dataclass(frozen=True)
class RandomPredictorBounds:
    sigma_low: float
    sigma_up: float
    k_low: int
    k_up: int
    unbeatable: bool = False

    def __iter__(self):
        return iter((self.sigma_low, self.sigma_up))


@dataclass
class EvaluationReport:
    sensitivity: float
    fpr_per_hour: float
    auc_per_recording: dict[str, float] = field(default_factory=dict)
    mcc: Optional[float] = None
    sigma_low: Optional[float] = None
    sigma_up: Optional[float] = None
    prediction_times_s: list[float] = field(default_factory=list)

    KEYS = ("sensitivity", "fpr_per_hour", "auc_per_recording", "mcc",
            "sigma_low", "sigma_up", "prediction_times_s")

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in self.KEYS}, indent=2)


def sensitivity(scores: Sequence[RecordingScore]) -> float:
    """Fraction of onset-bearing recordings whose seizure was predicted."""
    with_onset = [s for s in scores if s.predicted is not None]
    if not with_onset:
        raise ValueError("no recordings with a seizure onset")
    return sum(bool(s.predicted) for s in with_onset) / len(with_onset)


def false_prediction_rate(scores: Sequence[RecordingScore]) -> float:
    """False alarms per hour of interictal-only time."""
    hours = sum(s.interictal_duration for s in scores)
    if hours <= 0:
        raise ValueError("total interictal duration must be positive")
    return sum(len(s.false_alarm_times) for s in scores) / hours


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative; ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion(predicted, truth) -> tuple[int, int, int, int]:
    predicted = np.asarray(predicted).astype(bool)
    truth = np.asarray(truth).astype(bool)
    return (int(np.sum(predicted & truth)), int(np.sum(~predicted & ~truth)),
            int(np.sum(predicted & ~truth)), int(np.sum(~predicted & truth)))


def mcc(tp: int, tn: int, fp: int, fn: int) -> float:
    """Matthews correlation coefficient; 0 when any marginal is empty."""
    if min(tp, tn, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    denom = float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def _binomial_tail(k: int, n: int, p: float) -> float:
    # P[X >= k] for X ~ Binomial(n, p), summed exactly term by term
    if k <= 0:
        return 1.0
    return math.fsum(math.comb(n, j) * p ** j * (1.0 - p) ** (n - j) for j in range(k, n + 1))


def random_predictor_bounds(params: RandomPredictorParams) -> RandomPredictorBounds:
    """Sensitivity range (sigma_low, sigma_up) of the unspecific random predictor.

    A random predictor raising alarms at rate ``fpr`` hits a given seizure with
    probability P = SOP * FPr. sigma_low is k/K for the smallest k whose
    chance of >= k hits out of K drops below ``alpha_sig``; sigma_up applies
    the same test to the best of ``n_features`` independent such predictors.
    If no k <= K qualifies the range is (1, 1) with ``unbeatable`` set.
    """
    K, d, a = params.n_seizures, params.n_features, params.alpha_sig
    P = params.p
    if K < 1:
        raise ValueError("need at least one seizure")
    if not 0 <= P < 1:
        raise ValueError(f"P = SOP * FPr must lie in [0, 1), got {P}")
    if not 0 < a < 1:
        raise ValueError("alpha_sig must lie in (0, 1)")
    if d < 1:
        raise ValueError("need at least one feature")

    k_low = k_up = None
    for k in range(1, K + 1):
        tail = _binomial_tail(k, K, P)
        if k_low is None and tail < a:
            k_low = k
        # 1 - (1 - tail)**d, computed without cancellation
        family = -math.expm1(d * math.log1p(-tail)) if tail < 1 else 1.0
        if k_up is None and family < a:
            k_up = k
        if k_low is not None and k_up is not None:
            break
    if k_low is None or k_up is None:
        return RandomPredictorBounds(1.0, 1.0, K if k_low is None else k_low,
                                     K if k_up is None else k_up, unbeatable=True)
    return RandomPredictorBounds(k_low / K, k_up / K, k_low, k_up)


def write_report_csv(path, scores: Sequence[RecordingScore], aucs: dict[str, float]) -> None:
    """One row per recording, mirroring the per-recording results tables."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording_id", "type", "prediction_time_s", "false_predictions",
                         "roc_auc", "interictal_hours"])
        for s in scores:
            kind = "interictal" if s.predicted is None else "seizure"
            pt = "N/A" if s.prediction_time is None else f"{s.prediction_time:.1f}"
            auc = aucs.get(s.recording_id)
            writer.writerow([s.recording_id, kind, pt, len(s.false_alarm_times),
                             "N/A" if auc is None else f"{auc:.3f}",
                             f"{s.interictal_duration:.4f}"])
