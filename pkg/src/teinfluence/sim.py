"""Synthetic robot/human proximity interactions with planted causal influence.

The robot performs trapezoidal velocity bursts: forward, backward, or a turn
in place.  Relative depth follows robot kinematics instantly, plus a human
response that is a lagged first-order step:

* after a forward burst ends, the human retreats by ``human_gain`` times the
  burst displacement, starting ``human_reaction_lag_s`` after the last moving
  frame;
* when a backward burst begins, the human advances by the same amount,
  starting ``human_reaction_lag_s`` after the first moving frame;
* turns leave depth untouched.

Measurement noise is i.i.d. Gaussian per frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import Trajectory, normalize_actions, normalize_depth, read_csv_text, save_series
from .errors import InvalidArgumentError, ParseError

EVENT_TYPES = ("forward", "backward", "turn_left", "turn_right")


@dataclass(frozen=True)
class SimConfig:
    duration_s: float = 900.0
    sample_rate_hz: float = 10.0
    event_rate: float = 5.0  # bursts per minute
    rise_s: float = 0.3
    hold_min_s: float = 0.5
    hold_max_s: float = 1.5
    fall_s: float = 0.3
    linear_speed: float = 0.4  # m/s
    angular_speed: float = 0.6  # rad/s
    human_reaction_lag_s: float = 0.8
    human_gain: float = 1.0
    human_time_constant_s: float = 0.1
    noise_std: float = 0.02  # m
    base_depth: float = 1.2  # m
    rotation_bursts: bool = True
    turn_fraction: float = 1.0 / 3.0
    settle_s: float = 3.0  # quiet time after a response before the next burst
    rng_seed: int = 0

    def __post_init__(self):
        checks = [
            (self.duration_s > 0, "duration_s must be positive"),
            (self.sample_rate_hz > 0, "sample_rate_hz must be positive"),
            (self.event_rate >= 0, "event_rate must be non-negative"),
            (self.rise_s >= 0 and self.fall_s >= 0, "rise_s and fall_s must be non-negative"),
            (0 < self.hold_min_s <= self.hold_max_s, "need 0 < hold_min_s <= hold_max_s"),
            (self.linear_speed >= 0 and self.angular_speed >= 0, "speeds must be non-negative"),
            (0.5 < self.human_reaction_lag_s < 2.0, "human_reaction_lag_s must lie in (0.5, 2.0) s"),
            (self.human_time_constant_s > 0, "human_time_constant_s must be positive"),
            (self.noise_std >= 0, "noise_std must be non-negative"),
            (0.0 <= self.turn_fraction <= 1.0, "turn_fraction must lie in [0, 1]"),
            (self.settle_s >= 0, "settle_s must be non-negative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidArgumentError(msg)

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))


@dataclass(frozen=True)
class SimEvent:
    start: int  # first moving frame
    end: int  # last moving frame
    type: str
    displacement: float = 0.0  # metres travelled (linear bursts)
    responsive: bool = False  # produces a depth response


@dataclass(frozen=True)
class GroundTruth:
    events: tuple[SimEvent, ...]
    causal: np.ndarray  # per-frame flag: frame belongs to a responsive burst

    @property
    def responsive_events(self) -> tuple[SimEvent, ...]:
        return tuple(e for e in self.events if e.responsive)

    @property
    def turn_events(self) -> tuple[SimEvent, ...]:
        return tuple(e for e in self.events if e.type in ("turn_left", "turn_right"))


@dataclass(frozen=True)
class RawInteraction:
    """Simulated signals in physical units before normalization."""

    sample_rate_hz: float
    depth: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray
    truth: GroundTruth


def burst_profile(n_rise: int, n_hold: int, n_fall: int) -> np.ndarray:
    """Unit-height trapezoid: linear ramps around a flat top."""
    rise = np.arange(1, n_rise + 1) / (n_rise + 1)
    fall = np.arange(n_fall, 0, -1) / (n_fall + 1)
    return np.concatenate([rise, np.ones(n_hold), fall])


def lagged_step(n_frames: int, trigger_s: float, dt: float, tau: float) -> np.ndarray:
    """First-order step response ``1 - exp(-(t - trigger)/tau)`` for ``t >= trigger``, else 0."""
    t = np.arange(n_frames) * dt
    x = (t - trigger_s) / tau
    return np.where(x >= 0.0, -np.expm1(-np.maximum(x, 0.0)), 0.0)


def _schedule(cfg: SimConfig, rng: np.random.Generator) -> list[tuple[int, int, str]]:
    fs = cfg.sample_rate_hz
    n = cfg.n_frames
    n_rise, n_fall = int(round(cfg.rise_s * fs)), int(round(cfg.fall_s * fs))
    reserve = int(math.ceil((cfg.human_reaction_lag_s + cfg.settle_s) * fs))
    out = []
    if cfg.event_rate <= 0:
        return out
    interval = 60.0 * fs / cfg.event_rate  # mean frames between burst starts
    mean_hold = 0.5 * (cfg.hold_min_s + cfg.hold_max_s) * fs
    extra = max(interval - (n_rise + n_fall + mean_hold + reserve), 1.0)
    cursor = reserve + int(rng.exponential(extra))
    while True:
        n_hold = int(round(rng.uniform(cfg.hold_min_s, cfg.hold_max_s) * fs))
        length = n_rise + n_hold + n_fall
        start, end = cursor, cursor + length - 1
        if end + reserve >= n:
            break
        if cfg.rotation_bursts and rng.random() < cfg.turn_fraction:
            kind = "turn_left" if rng.random() < 0.5 else "turn_right"
        else:
            kind = "forward" if rng.random() < 0.5 else "backward"
        out.append((start, n_hold, kind))
        cursor = end + 1 + reserve + int(rng.exponential(extra))
    return out


def simulate_raw(cfg: SimConfig) -> RawInteraction:
    rng = np.random.default_rng(cfg.rng_seed)
    fs, n = cfg.sample_rate_hz, cfg.n_frames
    dt = 1.0 / fs
    tau, lag = cfg.human_time_constant_s, cfg.human_reaction_lag_s
    n_rise, n_fall = int(round(cfg.rise_s * fs)), int(round(cfg.fall_s * fs))

    lin = np.zeros(n)
    ang = np.zeros(n)
    human = np.zeros(n)
    events = []
    causal = np.zeros(n, dtype=bool)
    for start, n_hold, kind in _schedule(cfg, rng):
        prof = burst_profile(n_rise, n_hold, n_fall)
        end = start + prof.size - 1
        if kind in ("forward", "backward"):
            sign = 1.0 if kind == "forward" else -1.0
            lin[start : end + 1] = sign * cfg.linear_speed * prof
            disp = float(cfg.linear_speed * prof.sum() * dt)
            responsive = cfg.human_gain != 0.0 and disp > 0.0
            if kind == "forward":
                # human retreats once the robot has stopped
                human += cfg.human_gain * disp * lagged_step(n, (end + 1) * dt + lag, dt, tau)
            else:
                # human follows as soon as the robot starts moving away
                human -= cfg.human_gain * disp * lagged_step(n, start * dt + lag, dt, tau)
            if responsive:
                causal[start : end + 1] = True
            events.append(SimEvent(start, end, kind, disp, responsive))
        else:
            sign = 1.0 if kind == "turn_left" else -1.0
            ang[start : end + 1] = sign * cfg.angular_speed * prof
            events.append(SimEvent(start, end, kind))

    # depth at frame t reflects robot motion up to frame t-1
    robot = np.concatenate([[0.0], np.cumsum(lin[:-1]) * dt])
    depth = cfg.base_depth - robot + human
    if cfg.noise_std > 0:
        depth = depth + rng.normal(0.0, cfg.noise_std, size=n)
    causal.setflags(write=False)
    return RawInteraction(fs, depth, lin, ang, GroundTruth(tuple(events), causal))


def simulate_interaction(cfg: SimConfig, v_max: Sequence[float] = (0.5, 1.0)) -> tuple[Trajectory, GroundTruth]:
    """Simulate and normalize: depth min-max, velocities symmetric about 0.5."""
    raw = simulate_raw(cfg)
    traj = Trajectory(
        cfg.sample_rate_hz,
        normalize_depth(raw.depth)[:, None],
        np.column_stack([normalize_actions(raw.lin_vel, v_max[0]), normalize_actions(raw.ang_vel, v_max[1])]),
    )
    return traj, raw.truth


def derive_seed(seed: int, index: int) -> int:
    """Independent per-trajectory seed derived from a base seed."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _overlaps(a0: int, a1: int, b0: int, b1: int) -> bool:
    return a0 <= b1 and b0 <= a1


def evaluate_detection(peaks, truth: GroundTruth, tolerance_frames: int = 5) -> tuple[float, float]:
    """Recall over responsive events and precision over peaks.

    A peak matches an event when its attributed window overlaps the event's
    frames widened by ``tolerance_frames`` on both sides.  Peaks and events
    are paired one-to-one by a maximum matching.  With no peaks the precision
    is 1.0 by convention; with no responsive events the recall is 1.0.
    """
    if tolerance_frames < 0:
        raise InvalidArgumentError("tolerance_frames must be >= 0")
    events = truth.responsive_events
    peaks = list(peaks)
    if not peaks:
        return (0.0 if events else 1.0), 1.0
    if not events:
        return 1.0, 0.0
    hit = np.array(
        [
            [
                _overlaps(p.window_start_t, p.window_end_t, e.start - tolerance_frames, e.end + tolerance_frames)
                for e in events
            ]
            for p in peaks
        ]
    )
    rows, cols = linear_sum_assignment(hit.astype(float), maximize=True)
    matched = int(hit[rows, cols].sum())
    return matched / len(events), matched / len(peaks)


def turn_peak_fraction(peaks, truth: GroundTruth) -> float:
    """Fraction of peaks whose attributed window overlaps a turn-only burst."""
    peaks = list(peaks)
    if not peaks:
        return 0.0
    turns = truth.turn_events
    n = sum(
        any(_overlaps(p.window_start_t, p.window_end_t, e.start, e.end) for e in turns) for p in peaks
    )
    return n / len(peaks)


def planted_action_shapes(
    n: int, noise_std: float = 0.05, length: int = 15, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Two prototype linear-velocity windows with jitter and noise, alternating labels.

    Label 0 ends a forward burst (high, ramping back to 0.5); label 1 starts a
    backward burst (0.5, then stepping below).
    """
    rng = rng or np.random.default_rng(0)
    t = np.arange(length)
    seqs, labels = [], []
    for i in range(n):
        label = i % 2
        shift = rng.integers(-2, 3)
        if label == 0:
            edge = length // 2 + shift
            base = np.where(t < edge - 3, 0.8, np.where(t < edge, 0.8 - 0.1 * (t - edge + 4), 0.5))
        else:
            edge = length // 2 + 2 + shift
            base = np.where(t < edge, 0.5, np.where(t < edge + 3, 0.5 - 0.1 * (t - edge + 1), 0.2))
        seqs.append(np.clip(base + rng.normal(0.0, noise_std, size=length), 0.0, 1.0))
        labels.append(label)
    return np.array(seqs), np.array(labels)


TRUTH_HEADER = ("event_id", "type", "start_t", "end_t")


def save_truth(path, truth: GroundTruth) -> None:
    """Ground-truth events as CSV; ``start_t``/``end_t`` are inclusive frame indices."""
    save_series(path, TRUTH_HEADER, ((i, e.type, e.start, e.end) for i, e in enumerate(truth.events)))


def load_truth(path, n_frames: int | None = None, responsive_types: Sequence[str] = ("forward", "backward")) -> GroundTruth:
    """Read a ground-truth CSV.

    The file does not record response magnitudes, so events whose type is in
    ``responsive_types`` are treated as responsive.
    """
    rows = read_csv_text(path, TRUTH_HEADER)
    events = []
    for rowno, r in rows:
        if r["type"] not in EVENT_TYPES:
            raise ParseError(f"unknown event type {r['type']!r}", path, rowno)
        try:
            start, end = int(r["start_t"]), int(r["end_t"])
        except ValueError:
            raise ParseError("start_t and end_t must be integers", path, rowno) from None
        if end < start or start < 0:
            raise ParseError("need 0 <= start_t <= end_t", path, rowno)
        events.append(SimEvent(start, end, r["type"], responsive=r["type"] in responsive_types))
    n = n_frames if n_frames is not None else (max((e.end for e in events), default=-1) + 1)
    causal = np.zeros(n, dtype=bool)
    for e in events:
        if e.responsive:
            causal[e.start : e.end + 1] = True
    causal.setflags(write=False)
    return GroundTruth(tuple(events), causal)


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return replace(cfg, rng_seed=int(seed))
