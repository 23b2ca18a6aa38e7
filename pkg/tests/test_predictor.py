import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from focalpredict.predictor import (
    PredictionTrace, detect_alarms, oncoming_probability, read_trace_csv, score_recording,
    smooth, write_trace_csv,
)

probabilities = arrays(np.float64, st.integers(1, 60), elements=st.floats(0, 1))


def test_oncoming_probability_examples():
    assert oncoming_probability(1, 0, 0) == 0.0
    assert oncoming_probability(0, 0.4, 0.6) == 1.0
    assert oncoming_probability(0.2, 0.5, 0.3) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        oncoming_probability(0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        oncoming_probability(-0.1, 0.6, 0.5)


def test_smooth_examples():
    np.testing.assert_allclose(smooth([1.0, 0.0], 0.7), [1.0, 0.3])
    p = np.array([0.1, 0.9, 0.4])
    np.testing.assert_array_equal(smooth(p, 1.0), p)
    np.testing.assert_allclose(smooth(np.full(20, 0.37), 0.7), 0.37, atol=1e-15)
    with pytest.raises(ValueError):
        smooth([], 0.5)
    with pytest.raises(ValueError):
        smooth([0.5], 0.0)


def closed_form(p, alpha):
    """s(t) = alpha * sum_{i=1..t} (1-alpha)^(t-i) p(i) + (1-alpha)^t p(0)."""
    out = np.empty(len(p))
    for t in range(len(p)):
        terms = [alpha * (1 - alpha) ** (t - i) * p[i] for i in range(1, t + 1)]
        out[t] = sum(terms) + (1 - alpha) ** t * p[0]
    return out


@given(probabilities, st.floats(0.01, 1.0))
def test_smooth_matches_closed_form(p, alpha):
    np.testing.assert_allclose(smooth(p, alpha), closed_form(p, alpha), rtol=0, atol=1e-12)


@given(probabilities, st.floats(0.01, 1.0))
def test_smooth_stays_within_prefix_range(p, alpha):
    s = smooth(p, alpha)
    for t in range(len(p)):
        assert p[:t + 1].min() - 1e-12 <= s[t] <= p[:t + 1].max() + 1e-12


@given(probabilities, st.floats(0.01, 1.0), st.integers(0, 1000))
def test_smooth_is_monotone(p, alpha, seed):
    bump = np.random.default_rng(seed).uniform(0, 1, len(p)) * (1 - p)
    assert np.all(smooth(p + bump, alpha) >= smooth(p, alpha) - 1e-12)


def test_alarm_examples():
    t = np.arange(10.0)
    assert detect_alarms(np.full(10, 0.5), t, 0.6, 1, 0) == []
    assert detect_alarms(np.array([0.2, 0.7, 0.7, 0.7]), t[:4], 0.6, 3, 0) == [1.0]
    assert detect_alarms(np.array([0.7, 0.5] * 4), t[:8], 0.6, 2, 0) == []


def test_refractory_drops_close_alarms():
    s = np.zeros(100)
    s[10:20] = s[30:40] = s[80:90] = 0.9
    t = np.arange(100.0)
    assert detect_alarms(s, t, 0.6, 5, 0.0) == [10.0, 30.0, 80.0]
    assert detect_alarms(s, t, 0.6, 5, 50.0) == [10.0, 80.0]


@given(arrays(np.float64, st.integers(1, 200), elements=st.floats(0, 1)),
       st.integers(1, 6), st.floats(0, 60))
def test_alarms_sorted_and_spaced(s, m, refractory):
    alarms = detect_alarms(s, np.arange(len(s), dtype=float), 0.6, m, refractory)
    assert alarms == sorted(alarms)
    assert all(b - a >= refractory for a, b in zip(alarms, alarms[1:]))


def test_score_examples():
    hit = score_recording([3300.0], 3600.0, 10, 4000.0)
    assert hit.predicted and hit.prediction_time == 300.0 and hit.false_alarm_times == []
    early = score_recording([2700.0], 3600.0, 10, 4000.0)
    assert early.predicted is False and early.false_alarm_times == [2700.0]
    free = score_recording([100.0, 200.0], None, 10, 3600.0)
    assert free.predicted is None and len(free.false_alarm_times) == 2
    assert free.interictal_duration == 1.0


def test_score_horizon_edges_and_interictal_time():
    s = score_recording([3000.0, 3650.0], 3600.0, 10, 4000.0)
    assert s.predicted and s.prediction_time == 600.0
    assert s.false_alarm_times == []
    # horizon [3000, 3600) and the ictal part are excluded
    assert s.interictal_duration == pytest.approx(3000 / 3600)
    late = score_recording([3600.0], 3600.0, 10, 4000.0)
    assert late.predicted is False and late.false_alarm_times == []


@given(st.lists(st.floats(0, 5000), max_size=8), st.floats(700, 4999), st.sampled_from([5, 10, 20]))
def test_prediction_time_within_horizon(alarms, onset, l):
    s = score_recording(sorted(alarms), onset, l, 5000.0)
    if s.predicted:
        assert 0 < s.prediction_time <= 60 * l


def test_trace_csv_round_trip(tmp_path):
    trace = PredictionTrace(np.arange(4.0), np.array([0.1, 0.7, 0.8, 0.2]),
                            np.array([0.1, 0.52, 0.716, 0.355]), [1.0], "r", np.array([0, 1, 1, 2]))
    write_trace_csv(tmp_path / "t.csv", trace)
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "time_s,p,s,alarm_flag,label"
    back = read_trace_csv(tmp_path / "t.csv")
    np.testing.assert_allclose(back.s, trace.s)
    assert back.alarms == [1.0]
    np.testing.assert_array_equal(back.labels, trace.labels)
