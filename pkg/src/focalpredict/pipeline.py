"""End-to-end wiring: recordings -> tensors -> training -> traces -> scores -> analyses."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import analysis
from .config import PipelineConfig
from .dataset import EpochSet, balance, build_epochs, kfold_split
from .evaluation import (
    EvaluationReport, RandomPredictorParams, confusion, false_prediction_rate, mcc,
    random_predictor_bounds, roc_auc, sensitivity,
)
from .ingest import EegRecording, MontageSpec, apply_montage, lowpass_filter
from .network import (
    GridSearchResult, History, NetworkParameters, extract_features, fit, grid_search,
)
from .predictor import PredictionTrace, RecordingScore, oncoming_labels, predict_trace, score_recording
from .synth import SynthSpec, generate
from .wavelet import WaveletTensor, build_wavelet_tensor, raw_tensor

log = logging.getLogger(__name__)


def preprocess(rec: EegRecording, config: PipelineConfig) -> EegRecording:
    """Bipolar montage (when one is configured) followed by the low-pass filter."""
    if config.montage:
        montage = MontageSpec.from_names(config.montage)
        rec = apply_montage(rec, montage, pad=config.montage_pad)
    return lowpass_filter(rec, config.lowpass_cutoff)


def to_tensor(rec: EegRecording, config: PipelineConfig) -> WaveletTensor:
    if config.input_mode == "raw":
        return raw_tensor(rec)
    return build_wavelet_tensor(rec, config.scales)


def train_model(tensors: Sequence[WaveletTensor], config: PipelineConfig,
                fold: int = 0) -> tuple[NetworkParameters, History]:
    """Fit on all but one fold of recordings, early-stopping on the held-out fold."""
    if not tensors:
        raise ValueError("no input recordings")
    data = EpochSet.concatenate([build_epochs(t, config) for t in tensors])
    k = min(config.folds, len({t.recording_id for t in tensors}))
    train, val = kfold_split(data, k, fold, config.seed)
    train = balance(train, config.seed)
    return fit(train, val, config)


@dataclass
class RecordingResult:
    trace: PredictionTrace
    score: RecordingScore
    auc: Optional[float]


def evaluate_tensor(params: NetworkParameters, tensor: WaveletTensor,
                    config: PipelineConfig) -> RecordingResult:
    epochs = build_epochs(tensor, config)
    trace = predict_trace(params, epochs, config, tensor.onset_time)
    score = score_recording(trace.alarms, tensor.onset_time, config.preictal_length,
                            tensor.duration, tensor.recording_id)
    truth = oncoming_labels(trace.labels)
    auc = roc_auc(trace.s, truth) if 0 < truth.sum() < len(truth) else None
    return RecordingResult(trace, score, auc)


def build_report(results: Sequence[RecordingResult], config: PipelineConfig,
                 sop_hours: Optional[float] = None, n_features: int = 100,
                 alpha_sig: float = 0.05) -> EvaluationReport:
    """Aggregate per-recording results. MCC is on oncoming-vs-interictal epoch
    classification with the raw network output thresholded at 0.5."""
    scores = [r.score for r in results]
    with_onset = [s for s in scores if s.predicted is not None]
    sens = sensitivity(scores) if with_onset else math.nan
    hours = sum(s.interictal_duration for s in scores)
    fpr = false_prediction_rate(scores) if hours > 0 else math.nan
    predicted = np.concatenate([r.trace.p >= 0.5 for r in results])
    truth = np.concatenate([oncoming_labels(r.trace.labels) for r in results])
    report = EvaluationReport(
        sensitivity=sens,
        fpr_per_hour=fpr,
        auc_per_recording={r.score.recording_id: r.auc for r in results if r.auc is not None},
        mcc=mcc(*confusion(predicted, truth)),
        prediction_times_s=[s.prediction_time for s in with_onset if s.predicted],
    )
    if with_onset and not math.isnan(fpr):
        sop = config.preictal_length / 60.0 if sop_hours is None else sop_hours
        if sop * fpr < 1:
            bounds = random_predictor_bounds(
                RandomPredictorParams(sop, fpr, len(with_onset), n_features, alpha_sig))
            report.sigma_low, report.sigma_up = bounds.sigma_low, bounds.sigma_up
    return report


def kl_change_point(params: NetworkParameters, tensor: WaveletTensor, config: PipelineConfig,
                    ) -> analysis.ChangePointResult:
    """Change point of the decorrelated penultimate-layer features of one recording."""
    epochs = build_epochs(tensor, config)
    feats = extract_features(params, epochs)
    step = config.epoch_length * (1.0 - config.overlap)
    baseline = int(round(config.kl_baseline_minutes * 60.0 / step))
    white = analysis.decorrelate(feats, baseline, config.k_keep)
    return analysis.change_point(white, baseline, config.kl_window, times=epochs.start_times,
                                 epoch_step=step)


# --------------------------------------------------------------------------
# Synthetic end-to-end experiment
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSetup:
    """Desk-scale experiment layout: transition 600 s before onset."""

    n_train: int = 10
    n_test: int = 10
    duration: float = 2520.0
    onset_time: float = 2400.0
    transition_lead: float = 600.0
    channels: int = 4
    sampling_rate: int = 64
    seed: int = 0
    theta_start_uv: float = 50.0
    theta_end_uv: float = 80.0

    def spec(self, index: int, split: str) -> SynthSpec:
        offset = 0 if split == "train" else 1000
        return SynthSpec(
            duration=self.duration, onset_time=self.onset_time,
            transition_time=self.onset_time - self.transition_lead,
            channels=self.channels, sampling_rate=self.sampling_rate,
            theta_start_uv=self.theta_start_uv, theta_end_uv=self.theta_end_uv,
            seed=self.seed * 10000 + offset + index, recording_id=f"{split}{index:02d}",
        )


def desk_config(**changes) -> PipelineConfig:
    """Compact network and settings that keep the synthetic experiment to minutes on one core."""
    base = PipelineConfig(
        montage=(), conv_filters=(8, 8, 8, 8, 8, 8), dense_units=(250, 100),
        folds=2, patience=2, max_passes=12,
        grid_preictal_lengths=(5.0, 10.0, 20.0),
    )
    return base.replace(**changes)


@dataclass
class ExperimentResult:
    grid: Optional[GridSearchResult]
    config: PipelineConfig
    history: History
    results: list[RecordingResult]
    report: EvaluationReport
    change_points: list[Optional[float]]
    transitions: list[float]
    params: NetworkParameters = field(repr=False, default=None)


def synthetic_tensors(setup: SyntheticSetup, split: str, config: PipelineConfig) -> list[WaveletTensor]:
    n = setup.n_train if split == "train" else setup.n_test
    return [to_tensor(preprocess(generate(setup.spec(i, split)), config), config)
            for i in range(n)]


def run_synthetic_experiment(setup: SyntheticSetup = SyntheticSetup(),
                             config: Optional[PipelineConfig] = None,
                             search: bool = True) -> ExperimentResult:
    """Grid-search the preictal length on training recordings, train, then
    predict, score and run the KL change-point analysis on test recordings."""
    config = desk_config() if config is None else config
    train = synthetic_tensors(setup, "train", config)
    grid = None
    if search:
        grid = grid_search(config.candidates(), train, config.folds)
        config = grid.best
        log.info("grid search: %s -> l=%g", grid.mean_losses, config.preictal_length)
    params, history = train_model(train, config)
    del train
    test = synthetic_tensors(setup, "test", config)
    results = [evaluate_tensor(params, t, config) for t in test]
    report = build_report(results, config)
    change_points = [kl_change_point(params, t, config).detection_time for t in test]
    transitions = [setup.onset_time - setup.transition_lead] * len(test)
    return ExperimentResult(grid, config, history, results, report, change_points,
                            transitions, params)
