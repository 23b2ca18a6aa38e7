import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from focalpredict.ingest import EegRecording
from focalpredict.wavelet import (
    DYADIC_SCALES, build_wavelet_tensor, cwt_channel, load_tensor, mexican_hat_kernel,
    peak_frequency, raw_tensor, save_tensor,
)


def test_kernel_centre_value_at_scale_one():
    k = mexican_hat_kernel(1.0)
    centre = k[len(k) // 2]
    assert centre == pytest.approx(2.0 / (math.sqrt(3.0) * math.pi ** 0.25), abs=1e-12)
    assert centre == pytest.approx(0.8673, abs=1e-4)


@pytest.mark.parametrize("scale", DYADIC_SCALES)
def test_kernel_is_even(scale):
    k = mexican_hat_kernel(scale)
    np.testing.assert_array_equal(k, k[::-1])


def test_kernel_sum_vanishes():
    k = mexican_hat_kernel(8.0, support=80)
    assert len(k) == 161
    assert abs(math.fsum(k)) < 1e-6 * k.max()


def test_kernel_matches_formula_pointwise():
    a = 4.0
    k = mexican_hat_kernel(a, support=20)
    for n in (-20, -7, 0, 3, 20):
        u = n / a
        ref = 2 / (math.sqrt(3) * math.pi ** 0.25) * (1 - u * u) * math.exp(-u * u / 2) / math.sqrt(a)
        assert k[n + 20] == pytest.approx(ref, abs=1e-15)


def test_kernel_errors():
    with pytest.raises(ValueError):
        mexican_hat_kernel(0.0)
    with pytest.raises(ValueError):
        mexican_hat_kernel(4.0, support=19)


def _spectral_peak(kernel, fs, n_fft=1 << 16):
    spectrum = np.abs(np.fft.rfft(kernel, n_fft))
    return np.fft.rfftfreq(n_fft, 1.0 / fs)[np.argmax(spectrum)]


def test_eight_hz_tone_selects_the_matching_scale():
    fs = 256
    t = np.arange(fs * 20) / fs
    coeffs = cwt_channel(np.sin(2 * np.pi * 8.0 * t), DYADIC_SCALES)
    strongest = DYADIC_SCALES[int(np.argmax(np.abs(coeffs[fs:-fs]).mean(axis=0)))]
    # oracle: the kernel whose measured spectral peak lies closest to 8 Hz
    peaks = [_spectral_peak(mexican_hat_kernel(a), fs) for a in DYADIC_SCALES]
    nearest = DYADIC_SCALES[int(np.argmin([abs(p - 8.0) for p in peaks]))]
    assert strongest == nearest == 8.0


@pytest.mark.parametrize("scale", [2.0, 4.0, 8.0, 16.0])
def test_peak_frequency_formula(scale):
    measured = _spectral_peak(mexican_hat_kernel(scale), 256)
    assert measured == pytest.approx(peak_frequency(scale, 256), rel=0.01)


def test_zero_signal_gives_zero_coefficients():
    assert not np.any(cwt_channel(np.zeros(300), DYADIC_SCALES))


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_cwt_is_homogeneous(alpha):
    x = np.random.default_rng(0).normal(size=256)
    np.testing.assert_allclose(cwt_channel(alpha * x, (1.0, 4.0, 16.0)),
                               alpha * cwt_channel(x, (1.0, 4.0, 16.0)), atol=1e-9, rtol=1e-9)


@given(st.integers(1, 40))
def test_shift_moves_coefficients(shift):
    rng = np.random.default_rng(1)
    x = np.zeros(600)
    x[200:400] = rng.normal(size=200)
    scales = (1.0, 2.0, 4.0)
    base = cwt_channel(x, scales)
    moved = cwt_channel(np.roll(x, shift), scales)
    np.testing.assert_allclose(moved[100 + shift:500 + shift], base[100:500], atol=1e-12)


def test_column_is_same_length_convolution():
    x = np.random.default_rng(2).normal(size=100)
    k = mexican_hat_kernel(2.0)
    full = np.convolve(x, k)
    half = len(k) // 2
    np.testing.assert_allclose(cwt_channel(x, (2.0,))[:, 0], full[half:half + 100], atol=1e-12)


def test_scale_list_validation():
    with pytest.raises(ValueError):
        cwt_channel(np.ones(10), ())
    with pytest.raises(ValueError):
        cwt_channel(np.ones(10), (4.0, 2.0))


def _recording(channels=22, seconds=60, fs=256, seed=0):
    rng = np.random.default_rng(seed)
    return EegRecording(rng.normal(size=(channels, seconds * fs)), fs,
                        [f"C{i}" for i in range(channels)], onset_time=seconds / 2)


def test_tensor_shape_for_one_minute_of_22_channels():
    tensor = build_wavelet_tensor(_recording())
    assert tensor.coefficients.shape == (15360, 10, 22)
    assert tensor.coefficients.dtype == np.float32
    assert tensor.onset_time == 30.0


def test_tensor_slices_match_channel_transform_and_permutation():
    rec = _recording(channels=3, seconds=4)
    tensor = build_wavelet_tensor(rec)
    for c in range(3):
        np.testing.assert_allclose(tensor.coefficients[:, :, c], cwt_channel(rec.samples[c], DYADIC_SCALES),
                                   rtol=1e-5, atol=1e-4)
    perm = [2, 0, 1]
    swapped = EegRecording(rec.samples[perm], rec.sampling_rate, [rec.channel_labels[i] for i in perm])
    np.testing.assert_array_equal(build_wavelet_tensor(swapped).coefficients,
                                  tensor.coefficients[:, :, perm])


def test_tensor_cache_round_trip(tmp_path):
    tensor = build_wavelet_tensor(_recording(channels=2, seconds=2))
    save_tensor(tmp_path / "t.fpwt", tensor)
    back = load_tensor(tmp_path / "t.fpwt")
    np.testing.assert_array_equal(back.coefficients, tensor.coefficients)
    assert back.scales == tensor.scales
    assert back.sampling_rate == 256
    assert back.onset_time == 1.0
    raw = (tmp_path / "t.fpwt").read_bytes()
    (tmp_path / "cut.fpwt").write_bytes(raw[:-10])
    with pytest.raises(ValueError, match="truncated"):
        load_tensor(tmp_path / "cut.fpwt")


def test_raw_tensor_layout():
    rec = _recording(channels=4, seconds=2)
    t = raw_tensor(rec)
    assert t.coefficients.shape == (512, 1, 4)
    np.testing.assert_allclose(t.coefficients[:, 0, :], rec.samples.T, rtol=1e-6)
