import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from teinfluence.data import MaskSpec, Trajectory, WindowConfig, extract_windows
from teinfluence.errors import InvalidArgumentError
from teinfluence.mlp import GaussianMLP, GaussianPrediction, TrainConfig, train
from teinfluence.sim import SimConfig, simulate_interaction
from teinfluence.te import (
    TeSeries,
    attributed_window,
    compute_te_series,
    differential_entropy,
    find_te_peaks,
    load_peaks_csv,
    load_te_csv,
    lowpass_filter,
    peak_prominences,
    save_peaks_csv,
    save_te_csv,
    select_peak_indices,
    transfer_entropy_at,
)

H1 = 0.5 * (1 + math.log(2 * math.pi))
sigmas = st.floats(1e-3, 1e3)


# --- entropy and TE ---------------------------------------------------------------


def test_entropy_examples():
    assert differential_entropy(GaussianPrediction(0, 1.0)) == pytest.approx(1.4189385, abs=1e-7)
    assert differential_entropy(GaussianPrediction(0, (2 * math.pi * math.e) ** -0.5)) == pytest.approx(0, abs=1e-12)
    diff = differential_entropy(GaussianPrediction(0, 2.0)) - differential_entropy(GaussianPrediction(0, 1.0))
    assert diff == pytest.approx(math.log(2), abs=1e-12)


@pytest.mark.parametrize("sigma", [0.0, -0.1, float("nan")])
def test_entropy_rejects_bad_std(sigma):
    with pytest.raises(InvalidArgumentError):
        differential_entropy(GaussianPrediction(0, sigma))


@pytest.mark.parametrize("ratio, expected", [(1.0, 0.0), (2.0, math.log(2)), (0.5, -math.log(2))])
def test_te_examples(ratio, expected):
    assert transfer_entropy_at(GaussianPrediction(0, 1.3), GaussianPrediction(0, 1.3 * ratio)) == pytest.approx(expected, abs=1e-12)


@given(sigmas, sigmas, st.floats(-5, 5), st.floats(-5, 5))
def test_te_is_entropy_difference(sf, sm, mf, mm):
    full, masked = GaussianPrediction(mf, sf), GaussianPrediction(mm, sm)
    te = transfer_entropy_at(full, masked)
    assert abs(te - (differential_entropy(masked) - differential_entropy(full))) <= 1e-12
    assert transfer_entropy_at(full, full) == 0.0


@given(sigmas)
def test_entropy_closed_form(s):
    assert abs(differential_entropy(GaussianPrediction(0, s)) - (H1 + math.log(s))) <= 1e-12


def test_te_rejects_bad_std():
    with pytest.raises(InvalidArgumentError):
        transfer_entropy_at(GaussianPrediction(0, 0.0), GaussianPrediction(0, 1.0))


# --- TE series ------------------------------------------------------------------


def small_samples(T=60, seed=0):
    rng = np.random.default_rng(seed)
    return extract_windows(Trajectory(10.0, rng.random((T, 1)), rng.random((T, 2))), WindowConfig())


def test_input_blind_spread_head_gives_zero_te():
    rng = np.random.default_rng(0)
    model = GaussianMLP.initialize((80, 32, 16, 2), rng)
    W, b = model.layers[-1]
    W[1] = 0.0  # spread no longer depends on the input
    b[1] = -1.0
    samples = small_samples()
    series = compute_te_series(model, samples, MaskSpec.from_window(WindowConfig()))
    assert len(series) == len(samples)
    assert np.all(series.values == 0.0)
    assert list(series.anchors) == [s.anchor_t for s in samples]


def test_empty_samples_give_empty_series():
    assert len(compute_te_series(GaussianMLP((80, 2)), [], MaskSpec(()))) == 0


@pytest.fixture(scope="module")
def planted():
    # shorter recordings hold too few bursts for the model to learn the response reliably
    traj, truth = simulate_interaction(SimConfig(duration_s=900.0, rng_seed=11))
    wc = WindowConfig()
    mask = MaskSpec.from_window(wc)
    samples = extract_windows(traj, wc)
    model = train(samples, mask, TrainConfig(epochs=200, rng_seed=11))
    return truth, samples, mask, compute_te_series(model, samples, mask)


def test_event_anchors_carry_more_te(planted):
    truth, samples, mask, series = planted
    on_event = np.zeros(len(series), dtype=bool)
    for i, t in enumerate(series.anchors):
        a, b = attributed_window(int(t), WindowConfig())
        on_event[i] = truth.causal[a : b + 1].any()
    assert on_event.any() and (~on_event).any()
    assert series.values[on_event].mean() > series.values[~on_event].mean()


# --- filter -----------------------------------------------------------------------


def test_filter_dc_gain():
    assert np.allclose(lowpass_filter(np.full(100, 3.5), 0.5, 10.0), 3.5, atol=1e-12)


def test_filter_attenuation_at_cutoff():
    fs, fc = 10.0, 0.5
    t = np.arange(2000) / fs
    x = np.sin(2 * np.pi * fc * t)
    y = lowpass_filter(x, fc, fs)
    mid = slice(400, 1600)
    ratio = np.sqrt(np.mean(y[mid] ** 2) / np.mean(x[mid] ** 2))
    assert ratio == pytest.approx(0.5, rel=0.05)


def test_filter_zero_phase_on_symmetric_pulse():
    x = np.zeros(201)
    x[90:111] = np.hanning(21)
    y = lowpass_filter(x, 0.5, 10.0)
    assert int(np.argmax(y)) == 100


@pytest.mark.parametrize("cutoff", [0.0, 5.0, 7.0, -1.0])
def test_filter_rejects_cutoff(cutoff):
    with pytest.raises(InvalidArgumentError):
        lowpass_filter(np.zeros(50), cutoff, 10.0)


@settings(max_examples=40)
@given(
    arrays(np.float64, 80, elements=st.floats(-10, 10)),
    arrays(np.float64, 80, elements=st.floats(-10, 10)),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_filter_linear(x, y, a, b):
    lhs = lowpass_filter(a * x + b * y, 0.5, 10.0)
    rhs = a * lowpass_filter(x, 0.5, 10.0) + b * lowpass_filter(y, 0.5, 10.0)
    assert np.abs(lhs - rhs).max() <= 1e-9
    assert lhs.shape == x.shape


def test_filter_short_series():
    assert lowpass_filter([1.0], 0.5, 10.0).tolist() == [1.0]
    assert lowpass_filter(np.arange(5.0), 0.5, 10.0).shape == (5,)


# --- peaks ------------------------------------------------------------------------


def test_peak_examples():
    assert list(select_peak_indices([0, 1, 0.2, 2, 0.5], 1, 0.0)) == [1, 3]
    assert list(select_peak_indices([-1, -0.5, -2], 1, 0.0)) == []
    assert list(select_peak_indices([0, 3, 2.9, 3.05, 0], 5)) == [3]


def test_peak_rejects_distance():
    with pytest.raises(InvalidArgumentError):
        select_peak_indices([0, 1, 0], 0, 0.0)


def brute_prominence(x, p):
    # highest of the two side minima before reaching strictly higher ground
    h = x[p]
    left = [x[i] for i in range(p, -1, -1)]
    right = [x[i] for i in range(p, len(x))]

    def side_min(vals):
        m = h
        for v in vals[1:]:
            if v > h:
                break
            m = min(m, v)
        return m

    return h - max(side_min(left), side_min(right))


@given(arrays(np.float64, st.integers(3, 40), elements=st.floats(-2, 2)))
def test_prominence_oracle(x):
    peaks = np.array([i for i in range(1, len(x) - 1) if x[i] > x[i - 1] and x[i] > x[i + 1]], dtype=int)
    got = peak_prominences(x, peaks)
    assert np.allclose(got, [brute_prominence(x, p) for p in peaks], atol=0)


@settings(max_examples=200)
@given(
    arrays(np.float64, st.integers(3, 30), elements=st.floats(-1, 2, allow_subnormal=False)),
    st.integers(1, 8),
    st.sampled_from([0.0, 0.05, 0.3]),
)
def test_pruning_oracle(x, d, prom):
    got = list(select_peak_indices(x, d, prom))
    pos = np.maximum(x, 0.0)
    cands = [
        i for i in range(1, len(x) - 1)
        if x[i] > x[i - 1] and x[i] > x[i + 1] and x[i] > 0 and brute_prominence(pos, i) >= prom
    ]
    assert set(got) <= set(cands)
    for a, b in combinations(got, 2):
        assert abs(a - b) >= d
    # every dropped candidate is shadowed by a kept peak at least as tall
    for c in set(cands) - set(got):
        assert any(abs(c - k) < d and x[k] >= x[c] for k in got)
    # and no kept peak is shadowed by a taller kept-or-dropped candidate it should have lost to
    for k in got:
        assert not any(abs(c - k) < d and x[c] > x[k] and c in got for c in cands if c != k)


@given(arrays(np.float64, st.integers(3, 40), elements=st.floats(0.01, 2)), st.floats(0.0, 5.0))
def test_peak_locations_invariant_to_positive_offset(x, c):
    # series kept positive so the positivity rule does not interfere
    assert list(select_peak_indices(x, 3, 0.0)) == list(select_peak_indices(x + c, 3, 0.0))


def test_find_peaks_attributes_window():
    samples = small_samples(T=60, seed=2)
    mask = MaskSpec.from_window(WindowConfig())
    values = np.zeros(len(samples))
    values[10] = 1.0
    series = TeSeries(values, [s.anchor_t for s in samples])
    (peak,) = find_te_peaks(series, samples, mask)
    t = samples[10].anchor_t
    assert peak.anchor_t == t and peak.te_value == 1.0
    assert (peak.window_start_t, peak.window_end_t) == (t - 19, t - 5) == attributed_window(t, WindowConfig())
    assert peak.action_window.shape == (15, 2)
    assert np.array_equal(peak.action_window, samples[10].act_window[:15])


def test_find_peaks_alignment_checked():
    samples = small_samples()
    with pytest.raises(InvalidArgumentError):
        find_te_peaks(TeSeries(np.zeros(3), [0, 1, 2]), samples, MaskSpec(()))


def test_te_and_peak_files_round_trip(tmp_path):
    samples = small_samples(T=80, seed=4)
    rng = np.random.default_rng(4)
    raw = TeSeries(rng.normal(0, 0.3, len(samples)), [s.anchor_t for s in samples])
    smooth = raw.with_values(lowpass_filter(raw.values, 0.5, 10.0))
    peaks = find_te_peaks(smooth, samples, MaskSpec.from_window(WindowConfig()), 5, 0.0)
    save_te_csv(tmp_path / "te.csv", raw, smooth, peaks)
    save_peaks_csv(tmp_path / "p.csv", peaks)
    r2, s2, flags = load_te_csv(tmp_path / "te.csv")
    assert np.array_equal(r2.values, raw.values) and np.array_equal(s2.values, smooth.values)
    assert set(r2.anchors[flags]) == {p.anchor_t for p in peaks}
    back = load_peaks_csv(tmp_path / "p.csv")
    assert [(p.anchor_t, p.te_value, p.window_start_t, p.window_end_t) for p in back] == [
        (p.anchor_t, p.te_value, p.window_start_t, p.window_end_t) for p in peaks
    ]


def test_empty_peaks_file_is_valid(tmp_path):
    save_peaks_csv(tmp_path / "p.csv", [])
    assert (tmp_path / "p.csv").read_text() == "anchor_t,te_value,window_start_t,window_end_t\n"
    assert load_peaks_csv(tmp_path / "p.csv") == []
