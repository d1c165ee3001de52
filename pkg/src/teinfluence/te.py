"""Transfer entropy from paired masked/unmasked Gaussian predictions.

For each anchor frame the same model predicts the next observation twice:
once from the full action window and once with the older action span masked.
The transfer entropy is the entropy of the masked prediction minus the entropy
of the full one, in nats.  Positive values mean the masked actions reduce
uncertainty about the next observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal

from .data import MaskSpec, Trajectory, WindowConfig, WindowSample, read_csv_columns, save_series
from .errors import ParseError
from .errors import InvalidArgumentError
from .mlp import GaussianMLP, GaussianPrediction, model_encoding

GAUSSIAN_ENTROPY_CONST = 0.5 * (1.0 + math.log(2.0 * math.pi))


@dataclass(frozen=True)
class TeSeries:
    values: np.ndarray  # nats, one per anchor
    anchors: np.ndarray  # trajectory frame index of each value

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        a = np.array(self.anchors, dtype=np.int64)
        if v.shape != a.shape or v.ndim != 1:
            raise InvalidArgumentError("values and anchors must be 1-D and equally long")
        v.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "anchors", a)

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values) -> "TeSeries":
        return TeSeries(values, self.anchors)


@dataclass(frozen=True)
class TePeak:
    anchor_t: int
    te_value: float
    action_window: np.ndarray  # (masked span, d_a)
    window_start_t: int
    window_end_t: int


@dataclass(frozen=True)
class TeAnalysis:
    """Everything ``analyze`` derives from one trajectory."""

    series: TeSeries
    full_mean: np.ndarray
    full_std: np.ndarray
    masked_mean: np.ndarray
    masked_std: np.ndarray


def differential_entropy(pred: GaussianPrediction) -> float:
    """Entropy of a univariate Gaussian: ``0.5 (1 + log 2π) + log σ``."""
    if not pred.std > 0:
        raise InvalidArgumentError(f"standard deviation must be positive, got {pred.std}")
    return GAUSSIAN_ENTROPY_CONST + math.log(pred.std)


def transfer_entropy_at(full: GaussianPrediction, masked: GaussianPrediction) -> float:
    if not (full.std > 0 and masked.std > 0):
        raise InvalidArgumentError("standard deviations must be positive")
    return math.log(masked.std / full.std)


def _paired_predictions(model: GaussianMLP, samples: Sequence[WindowSample], mask: MaskSpec):
    W, n_obs = samples[0].obs_window.shape
    enc = model_encoding(model, W, n_obs, samples[0].act_window.shape[1])
    mask.check(W)
    X = enc.encode(samples)
    full_mean, full_std = model.predict(X)
    masked_mean, masked_std = model.predict(enc.apply_mask(X, mask))
    return full_mean, full_std, masked_mean, masked_std


def analyze_samples(model: GaussianMLP, samples: Sequence[WindowSample], mask: MaskSpec) -> TeAnalysis:
    fm, fs, mm, ms = _paired_predictions(model, samples, mask)
    anchors = np.array([s.anchor_t for s in samples], dtype=np.int64)
    return TeAnalysis(TeSeries(np.log(ms / fs), anchors), fm, fs, mm, ms)


def compute_te_series(model: GaussianMLP, samples: Sequence[WindowSample], mask: MaskSpec) -> TeSeries:
    if not samples:
        return TeSeries(np.zeros(0), np.zeros(0, dtype=np.int64))
    return analyze_samples(model, samples, mask).series


def lowpass_filter(series, cutoff_hz: float, sample_rate_hz: float, order: int = 2) -> np.ndarray:
    """Zero-phase Butterworth low-pass (forward-backward), reflect-padded at both ends.

    The pad length is one period of the cutoff frequency, clipped to what the
    series length allows.  The forward-backward pass squares the magnitude
    response, so the gain at ``cutoff_hz`` is 0.5.
    """
    if not sample_rate_hz > 0:
        raise InvalidArgumentError("sample_rate_hz must be positive")
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise InvalidArgumentError(f"cutoff must lie in (0, {sample_rate_hz / 2}) Hz, got {cutoff_hz}")
    x = np.asarray(series, dtype=np.float64)
    if x.size < 2:
        return x.copy()
    b, a = signal.butter(order, cutoff_hz, btype="low", fs=sample_rate_hz)
    padlen = min(int(math.ceil(sample_rate_hz / cutoff_hz)), x.size - 1)
    return signal.filtfilt(b, a, x, padtype="even", padlen=padlen)


def peak_prominences(x: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    """Topographic prominence of each peak over the whole series.

    From each peak, walk outward until a strictly higher sample or the border;
    the reference level is the higher of the two minima found on the way.
    """
    out = np.empty(len(peaks))
    for k, p in enumerate(peaks):
        h = x[p]
        i = p
        left_min = h
        while i > 0 and x[i - 1] <= h:
            i -= 1
            left_min = min(left_min, x[i])
        j = p
        right_min = h
        n = x.size
        while j < n - 1 and x[j + 1] <= h:
            j += 1
            right_min = min(right_min, x[j])
        out[k] = h - max(left_min, right_min)
    return out


def _local_maxima(x: np.ndarray) -> np.ndarray:
    if x.size < 3:
        return np.zeros(0, dtype=np.intp)
    inner = (x[1:-1] > x[:-2]) & (x[1:-1] > x[2:])
    return np.flatnonzero(inner) + 1


def select_peak_indices(values, min_distance_frames: int = 10, min_prominence: float = 0.05) -> np.ndarray:
    """Indices of strictly positive local maxima after prominence and distance pruning.

    A local maximum exceeds both neighbours.  Candidates below
    ``min_prominence`` are dropped; then, visiting survivors from the highest
    down, any peak closer than ``min_distance_frames`` to an already kept
    peak is discarded.
    """
    if min_distance_frames < 1:
        raise InvalidArgumentError("min_distance_frames must be >= 1")
    x = np.asarray(values, dtype=np.float64)
    cand = _local_maxima(x)
    cand = cand[x[cand] > 0.0]
    if cand.size == 0:
        return cand
    prom = peak_prominences(np.maximum(x, 0.0), cand)
    cand = cand[prom >= min_prominence]
    # stable sort keeps the earlier index first among equal heights
    order = cand[np.argsort(-x[cand], kind="stable")]
    kept: list[int] = []
    for p in order:
        if all(abs(int(p) - q) >= min_distance_frames for q in kept):
            kept.append(int(p))
    return np.array(sorted(kept), dtype=np.intp)


def find_te_peaks(
    smoothed: TeSeries,
    samples: Sequence[WindowSample],
    mask: MaskSpec,
    min_distance_frames: int = 10,
    min_prominence: float = 0.05,
) -> list[TePeak]:
    """TE peaks with the masked action frames attributed to each.

    ``samples`` must be aligned with ``smoothed`` (same order and anchors).
    """
    if len(samples) != len(smoothed):
        raise InvalidArgumentError("samples are not aligned with the TE series")
    idx = select_peak_indices(smoothed.values, min_distance_frames, min_prominence)
    frames = list(mask.masked_frames)
    peaks = []
    for i in idx:
        s = samples[i]
        W = s.act_window.shape[0]
        t = int(s.anchor_t)
        start = t - (W - 1) + frames[0] if frames else t
        end = t - (W - 1) + frames[-1] if frames else t
        peaks.append(TePeak(t, float(smoothed.values[i]), s.act_window[frames].copy(), start, end))
    return peaks


def attributed_window(anchor_t: int, cfg: WindowConfig) -> tuple[int, int]:
    """First and last trajectory frame of the masked span for anchor ``t``."""
    return anchor_t - cfg.mask_start_offset, anchor_t - cfg.mask_end_offset


TE_HEADER = ("anchor_t", "te_raw", "te_smoothed", "is_peak")
PEAKS_HEADER = ("anchor_t", "te_value", "window_start_t", "window_end_t")


def save_te_csv(path, raw: TeSeries, smoothed: TeSeries, peaks: Sequence[TePeak]) -> None:
    if not np.array_equal(raw.anchors, smoothed.anchors):
        raise InvalidArgumentError("raw and smoothed series must share anchors")
    flagged = {p.anchor_t for p in peaks}
    rows = (
        (int(t), float(r), float(m), int(t) in flagged)
        for t, r, m in zip(raw.anchors, raw.values, smoothed.values)
    )
    save_series(path, TE_HEADER, rows)


def load_te_csv(path) -> tuple[TeSeries, TeSeries, np.ndarray]:
    """Raw series, smoothed series and the boolean peak flags."""
    cols = read_csv_columns(path, TE_HEADER)
    anchors = cols["anchor_t"].astype(np.int64)
    return TeSeries(cols["te_raw"], anchors), TeSeries(cols["te_smoothed"], anchors), cols["is_peak"] != 0


def save_peaks_csv(path, peaks: Sequence[TePeak]) -> None:
    save_series(path, PEAKS_HEADER, ((p.anchor_t, p.te_value, p.window_start_t, p.window_end_t) for p in peaks))


def load_peaks_csv(path, traj: Trajectory | None = None) -> list[TePeak]:
    """Read a peaks file; with ``traj`` the attributed action frames are re-attached.

    Without a trajectory each peak carries an empty ``(0, 0)`` action window.
    """
    cols = read_csv_columns(path, PEAKS_HEADER)
    peaks = []
    for k, (t, v, a, b) in enumerate(
        zip(cols["anchor_t"], cols["te_value"], cols["window_start_t"], cols["window_end_t"])
    ):
        a, b = int(a), int(b)
        if traj is None:
            window = np.zeros((0, 0))
        else:
            if not 0 <= a <= b < len(traj):
                raise ParseError(f"window {a}..{b} lies outside the trajectory", path, k + 2)
            window = traj.actions[a : b + 1].copy()
        peaks.append(TePeak(int(t), float(v), window, a, b))
    return peaks
