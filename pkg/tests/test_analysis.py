import numpy as np
import pytest
from hypothesis import given, strategies as st

from focalpredict.analysis import (
    GaussianSummary, SpectralMetrics, change_point, decorrelate, fit_decorrelation, kl_divergence,
    spectral_metrics, write_kl_csv, write_spectral_csv,
)


def gauss(mean, cov):
    return GaussianSummary(np.asarray(mean, float), np.asarray(cov, float))


def test_kl_examples():
    assert kl_divergence(gauss([0.0], [[1.0]]), gauss([1.0], [[1.0]])) == pytest.approx(0.5)
    # N(0, 1) against N(0, 2): 0.5 * (1/2 - 1 + ln 2)
    expected = 0.5 * (0.5 - 1 + np.log(2))
    assert kl_divergence(gauss([0.0], [[1.0]]), gauss([0.0], [[2.0]])) == pytest.approx(expected)
    assert expected == pytest.approx(0.0966, abs=1e-4)
    assert kl_divergence(gauss([1, 2], np.eye(2)), gauss([1, 2], np.eye(2))) == 0.0


def closed_form_kl(m0, s0, m1, s1):
    """Explicit inverse and slogdet."""
    inv = np.linalg.inv(s1)
    diff = m1 - m0
    _, ld1 = np.linalg.slogdet(s1)
    _, ld0 = np.linalg.slogdet(s0)
    return 0.5 * (np.trace(inv @ s0) + diff @ inv @ diff - len(m0) + ld1 - ld0)


def random_spd(rng, k):
    a = rng.normal(size=(k, k))
    return a @ a.T + k * 0.1 * np.eye(k)


def test_kl_matches_closed_form_on_100_cases():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 11))
        m0, m1 = rng.normal(size=k), rng.normal(size=k)
        s0, s1 = random_spd(rng, k), random_spd(rng, k)
        worst = max(worst, abs(kl_divergence(gauss(m0, s0), gauss(m1, s1))
                               - closed_form_kl(m0, s0, m1, s1)))
    assert worst <= 1e-6


@given(st.integers(1, 8), st.integers(0, 10_000))
def test_kl_non_negative_and_zero_on_self(k, seed):
    rng = np.random.default_rng(seed)
    g0 = gauss(rng.normal(size=k), random_spd(rng, k))
    g1 = gauss(rng.normal(size=k), random_spd(rng, k))
    assert kl_divergence(g0, g1) >= -1e-9
    assert abs(kl_divergence(g0, g0)) < 1e-9


def test_kl_errors():
    with pytest.raises(np.linalg.LinAlgError, match="singular"):
        kl_divergence(gauss([0, 0], np.eye(2)), gauss([0, 0], [[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        kl_divergence(gauss([0], [[1.0]]), gauss([0, 0], np.eye(2)))


def test_from_samples_regularizes():
    x = np.ones((20, 3))
    g = GaussianSummary.from_samples(x)
    np.testing.assert_allclose(g.cov, 1e-8 * np.eye(3))
    assert g.n == 20


# ---- decorrelation ------------------------------------------------------


def test_decorrelated_baseline_is_white():
    rng = np.random.default_rng(0)
    mix = rng.normal(size=(30, 30))
    feats = rng.normal(size=(500, 30)) @ mix + 5.0
    out = decorrelate(feats, 400, k_keep=10)
    assert out.shape == (500, 10)
    np.testing.assert_allclose(np.cov(out[:400], rowvar=False), np.eye(10), atol=1e-8)
    np.testing.assert_allclose(out[:400].mean(axis=0), 0, atol=1e-10)


def test_duplicate_column_does_not_break_whitening():
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(300, 12))
    feats = np.hstack([feats, feats[:, :1]])
    out = decorrelate(feats, 300, k_keep=10)
    np.testing.assert_allclose(np.cov(out, rowvar=False), np.eye(10), atol=1e-8)


def test_single_component_tracks_the_shared_signal():
    rng = np.random.default_rng(2)
    signal = rng.normal(size=400)
    feats = np.outer(signal, rng.uniform(1, 2, 15)) + 0.01 * rng.normal(size=(400, 15))
    out = decorrelate(feats, 400, k_keep=1)[:, 0]
    assert abs(np.corrcoef(out, signal)[0, 1]) > 0.999


def test_selection_drops_constant_and_silent_features():
    rng = np.random.default_rng(3)
    feats = np.abs(rng.normal(size=(200, 14)))
    feats[:, 0] = 3.0            # constant
    feats[:180, 1] = 0.0         # silent 90 % of the time
    dec = fit_decorrelation(feats, 5)
    assert 0 not in dec.keep and 1 not in dec.keep
    assert len(dec.keep) == 12
    assert 1 in fit_decorrelation(feats, 5, min_active=0.0).keep


def test_selection_errors():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError, match="survive"):
        decorrelate(np.hstack([rng.normal(size=(100, 3)), np.zeros((100, 20))]), 100, 10)
    with pytest.raises(ValueError, match="baseline rows"):
        decorrelate(rng.normal(size=(5, 20)), 5, 10)
    with pytest.raises(ValueError):
        fit_decorrelation(rng.normal(size=(50, 20)), 5, min_active=1.5)


# ---- change point -------------------------------------------------------


def _first_sustained_run(res, start, need=30):
    run = 0
    for t in range(start, len(res.divergence)):
        run = run + 1 if res.divergence[t] > res.threshold else 0
        if run >= need:
            return t - need + 1
    return None


def test_divergence_window_layout():
    x = np.random.default_rng(5).normal(size=(1500, 3))
    res = change_point(x, 600, 60)
    assert np.isnan(res.divergence[:59]).all() and not np.isnan(res.divergence[59:]).any()


def _stationary_detections(n_seeds=20):
    return sum(change_point(np.random.default_rng(s).normal(size=(1500, 3)), 600, 60)
               .detection_time is not None for s in range(n_seeds))


@pytest.mark.xfail(strict=True, reason=(
    "median + 5 MAD over overlapping baseline windows underestimates the null tail of D; "
    "about 4 in 20 stationary 3-feature streams cross it for 30 s"))
def test_stationary_features_have_no_change_point():
    assert _stationary_detections() == 0


def test_stationary_detections_are_a_minority():
    assert _stationary_detections() <= 10


@pytest.mark.parametrize("seed", range(20))
def test_mean_shift_response_within_two_windows(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1500, 3))
    t_star = 1000
    x[t_star:] += 3.0
    res = change_point(x, 600, 60)
    # the earliest detection is never later than the response to the shift
    assert res.detection_index is not None and res.detection_index <= t_star + 2 * 60
    onset = _first_sustained_run(res, t_star)
    assert onset is not None and t_star <= onset <= t_star + 2 * 60


def test_zero_mad_falls_back_to_ten_times_median():
    x = np.zeros((400, 2))
    x[:, 0] = np.tile([1.0, -1.0], 200)
    x[:, 1] = np.tile([1.0, 1.0, -1.0, -1.0], 100)
    res = change_point(x, 200, 20)
    base = res.divergence[19:200]
    assert np.ptp(base) < 1e-12
    assert res.threshold == pytest.approx(10 * np.median(base))


def test_change_point_errors():
    x = np.zeros((100, 2))
    with pytest.raises(ValueError):
        change_point(x, 60, 60)
    with pytest.raises(ValueError):
        change_point(np.zeros((500, 2)), 30, 60)


# ---- spectral metrics ---------------------------------------------------


def test_spectral_examples():
    m = spectral_metrics(np.eye(4))
    assert (m.spectral_gap, m.numerical_rank, m.condition_number) == (1.0, 4.0, 1.0)
    r1 = spectral_metrics(np.outer([1.0, 2.0, 3.0], [1.0, -1.0]))
    assert r1.spectral_gap == 0.0 and r1.numerical_rank == pytest.approx(1.0)
    d = spectral_metrics(np.diag([2.0, 1.0]))
    assert (d.spectral_gap, d.numerical_rank, d.condition_number) == (0.5, 1.25, 2.0)
    with pytest.raises(ValueError):
        spectral_metrics(np.zeros((3, 3)))


def svd_oracle(a):
    s = np.linalg.svd(a, compute_uv=False)
    r = np.linalg.matrix_rank(a)
    return s[1] / s[0], (s ** 2).sum() / s[0] ** 2, s[0] / s[r - 1]


@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 10_000))
def test_spectral_matches_svd_oracle(m, n, seed):
    a = np.random.default_rng(seed).normal(size=(m, n))
    got = spectral_metrics(a)
    gap, nrank, cond = svd_oracle(a)
    assert got.spectral_gap == pytest.approx(gap, abs=1e-9)
    assert got.numerical_rank == pytest.approx(nrank, abs=1e-9)
    assert got.condition_number == pytest.approx(cond, rel=1e-9)
    assert 1 <= got.numerical_rank <= np.linalg.matrix_rank(a) + 1e-9


def test_csv_writers(tmp_path):
    write_kl_csv(tmp_path / "kl.csv", [0.0, 1.0], np.array([np.nan, 0.25]))
    assert (tmp_path / "kl.csv").read_text().splitlines() == ["time_s,D", "0.000000,", "1.000000,0.25"]
    write_spectral_csv(tmp_path / "s.csv", [("r", "FP1-F7", SpectralMetrics(0.5, 1.25, 2.0))])
    assert (tmp_path / "s.csv").read_text().splitlines()[1] == "r,FP1-F7,0.5,1.25,2"
