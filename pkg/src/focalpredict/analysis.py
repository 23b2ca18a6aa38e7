"""Change-point analysis on extracted features, and conditioning of wavelet slices."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

VARIANCE_FLOOR = 1e-6
MIN_ACTIVE = 0.5
REGULARIZATION = 1e-8


@dataclass
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray
    n: int = 0

    @property
    def k(self) -> int:
        return len(self.mean)

    @classmethod
    def from_samples(cls, x: np.ndarray, regularize: bool = True) -> "GaussianSummary":
        """Sample mean and covariance of the rows of ``x``.

        With ``regularize`` set, 1e-8 * trace/k is added to the diagonal.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mean = x.mean(axis=0)
        cov = np.atleast_2d(np.cov(x, rowvar=False))
        cov = 0.5 * (cov + cov.T)
        if regularize:
            k = cov.shape[0]
            ridge = REGULARIZATION * np.trace(cov) / k
            cov = cov + (ridge if ridge > 0 else REGULARIZATION) * np.eye(k)
        return cls(mean, cov, x.shape[0])


@dataclass
class SpectralMetrics:
    spectral_gap: float
    numerical_rank: float
    condition_number: float


@dataclass
class Decorrelation:
    """Feature mask plus whitening projection learnt on baseline rows."""

    keep: np.ndarray
    mean: np.ndarray
    projection: np.ndarray  # kept features x k_keep

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64)[:, self.keep] - self.mean) @ self.projection


def fit_decorrelation(baseline: np.ndarray, k_keep: int,
                      min_active: float = MIN_ACTIVE) -> Decorrelation:
    """Select features, then fit a whitening PCA on the baseline rows.

    A feature is kept when its baseline variance is at least 1e-6 and it is
    non-zero in at least ``min_active`` of the baseline rows. The second rule
    drops ReLU units that are silent most of the time: their rare bursts
    dominate the top principal components and make windowed covariances
    nearly singular.
    """
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.shape[0] < k_keep + 1:
        raise ValueError(f"need at least {k_keep + 1} baseline rows, got {baseline.shape[0]}")
    if not 0 <= min_active <= 1:
        raise ValueError("min_active must lie in [0, 1]")
    active = (baseline != 0).mean(axis=0)
    keep = np.flatnonzero((baseline.var(axis=0) >= VARIANCE_FLOOR) & (active >= min_active))
    if len(keep) < k_keep:
        raise ValueError(f"only {len(keep)} features survive selection, need {k_keep}")
    b = baseline[:, keep]
    mean = b.mean(axis=0)
    cov = np.atleast_2d(np.cov(b, rowvar=False))
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k_keep]
    evals, evecs = evals[order], evecs[:, order]
    if evals[-1] <= 1e-10 * max(evals[0], 1e-300):
        raise ValueError(f"baseline covariance has fewer than {k_keep} non-degenerate directions")
    return Decorrelation(keep, mean, evecs / np.sqrt(evals))


def decorrelate(features: np.ndarray, baseline_rows, k_keep: int = 10,
                min_active: float = MIN_ACTIVE) -> np.ndarray:
    """Drop near-constant and mostly-silent features, then project onto the
    top ``k_keep`` principal components of the baseline and whiten them.

    ``baseline_rows`` is a row count (the leading rows) or an index/slice.
    """
    features = np.asarray(features, dtype=np.float64)
    if isinstance(baseline_rows, (int, np.integer)):
        baseline = features[:baseline_rows]
    else:
        baseline = features[baseline_rows]
    return fit_decorrelation(baseline, k_keep, min_active).transform(features)


def _logdet(chol: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def kl_divergence(g0: GaussianSummary, g1: GaussianSummary) -> float:
    """D = 1/2 [tr(S1^-1 S0) + (m1-m0)^T S1^-1 (m1-m0) - k + ln(det S1 / det S0)].

    Evaluated through Cholesky factors of both covariances.
    """
    if g0.k != g1.k:
        raise ValueError(f"dimension mismatch: {g0.k} vs {g1.k}")
    try:
        c1 = cho_factor(g1.cov, lower=True)
    except LinAlgError:
        raise np.linalg.LinAlgError("covariance of the current window is singular") from None
    try:
        c0 = cho_factor(g0.cov, lower=True)
    except LinAlgError:
        raise np.linalg.LinAlgError("baseline covariance is singular") from None
    diff = g1.mean - g0.mean
    trace = float(np.trace(cho_solve(c1, g0.cov)))
    maha = float(diff @ cho_solve(c1, diff))
    return 0.5 * (trace + maha - g0.k + _logdet(c1[0]) - _logdet(c0[0]))


@dataclass
class ChangePointResult:
    divergence: np.ndarray  # D(t) per epoch, NaN where no full window exists
    threshold: float
    detection_index: Optional[int]
    detection_time: Optional[float]


def change_point(features: np.ndarray, baseline_span: int, window: int = 60,
                 times: Optional[Sequence[float]] = None, epoch_step: float = 1.0,
                 sustain_seconds: float = 30.0, mad_factor: float = 5.0) -> ChangePointResult:
    """Earliest sustained departure of the windowed feature distribution from baseline.

    The baseline Gaussian comes from the first ``baseline_span`` rows. D(t)
    compares it with the Gaussian of rows t-window+1..t. The threshold is
    median + 5 MAD of D over windows inside the baseline (10x median if the
    MAD is zero); detection is the first t >= baseline_span + window whose D
    stays above threshold for ``sustain_seconds``.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if n <= baseline_span + window:
        raise ValueError("recording too short for the baseline span plus one window")
    if window < 2 or baseline_span < window:
        raise ValueError("need window >= 2 and baseline_span >= window")
    times = np.arange(n) * epoch_step if times is None else np.asarray(times, dtype=np.float64)

    g0 = GaussianSummary.from_samples(x[:baseline_span])
    d = np.full(n, np.nan)
    for t in range(window - 1, n):
        g1 = GaussianSummary.from_samples(x[t - window + 1:t + 1])
        d[t] = kl_divergence(g0, g1)

    base = d[window - 1:baseline_span]
    med = float(np.median(base))
    mad = float(np.median(np.abs(base - med)))
    threshold = med + mad_factor * mad if mad > 0 else 10.0 * med

    need = max(1, int(math.ceil(sustain_seconds / epoch_step)))
    above = d > threshold
    start = baseline_span + window
    run = 0
    for t in range(start, n):
        run = run + 1 if above[t] else 0
        if run >= need:
            first = t - need + 1
            return ChangePointResult(d, threshold, first, float(times[first]))
    return ChangePointResult(d, threshold, None, None)


def spectral_metrics(matrix: np.ndarray) -> SpectralMetrics:
    """Spectral gap s2/s1, numerical rank ||A||_F^2 / ||A||_2^2 and condition s1/s_r."""
    a = np.asarray(matrix, dtype=np.float64)
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        raise ValueError("matrix is all zeros")
    nonzero = sv[sv > 1e-12 * sv[0]]
    gap = float(nonzero[1] / nonzero[0]) if len(nonzero) > 1 else 0.0
    nrank = float(np.sum(sv ** 2) / sv[0] ** 2)
    return SpectralMetrics(gap, nrank, float(nonzero[0] / nonzero[-1]))


def write_kl_csv(path, times, divergence) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "D"])
        for t, d in zip(times, divergence):
            writer.writerow([f"{t:.6f}", "" if np.isnan(d) else f"{d:.9g}"])


def write_spectral_csv(path, rows) -> None:
    """``rows`` are (recording_id, channel, SpectralMetrics) triples."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording_id", "channel", "gap", "nrank", "cond"])
        for rid, channel, m in rows:
            writer.writerow([rid, channel, f"{m.spectral_gap:.9g}", f"{m.numerical_rank:.9g}",
                             f"{m.condition_number:.9g}"])
