"""Trajectories, windowing, masking and CSV ingestion.

A trajectory holds synchronized observation and action channels sampled at a
fixed rate, all normalized to [0, 1].  Velocities map symmetrically so that
0.5 is exactly zero velocity; depth is min-max normalized per trajectory.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientDataError, InvalidArgumentError, ParseError


def _frozen(arr, ndim: int, name: str) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    if out.ndim == 1 and ndim == 2:
        out = out[:, None]
    if out.ndim != ndim:
        raise InvalidArgumentError(f"{name} must be {ndim}-dimensional, got shape {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Trajectory:
    sample_rate_hz: float
    observations: np.ndarray  # (T, d_o)
    actions: np.ndarray  # (T, d_a)
    observation_names: tuple[str, ...] = ("depth",)
    action_names: tuple[str, ...] = ("lin_vel", "ang_vel")

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise InvalidArgumentError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        obs = _frozen(self.observations, 2, "observations")
        act = _frozen(self.actions, 2, "actions")
        if obs.shape[0] != act.shape[0]:
            raise InvalidArgumentError(
                f"observations ({obs.shape[0]} frames) and actions ({act.shape[0]} frames) differ in length"
            )
        for name, arr in (("observations", obs), ("actions", act)):
            if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
                raise InvalidArgumentError(f"{name} must lie in [0, 1]")
        if len(self.observation_names) != obs.shape[1] or len(self.action_names) != act.shape[1]:
            raise InvalidArgumentError("channel names do not match channel counts")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "actions", act)
        object.__setattr__(self, "observation_names", tuple(self.observation_names))
        object.__setattr__(self, "action_names", tuple(self.action_names))

    def __len__(self) -> int:
        return self.observations.shape[0]

    @property
    def n_obs(self) -> int:
        return self.observations.shape[1]

    @property
    def n_act(self) -> int:
        return self.actions.shape[1]


@dataclass(frozen=True)
class WindowConfig:
    """Window geometry relative to the anchor frame ``t``.

    The mask covers frames ``t - mask_start_offset`` to ``t - mask_end_offset``
    inclusive; the target is the observation at ``t + 1``.
    """

    window_len: int = 20
    mask_start_offset: int = 19
    mask_end_offset: int = 5
    horizon: int = 1

    def __post_init__(self):
        if self.horizon != 1:
            raise InvalidArgumentError("horizon is fixed at 1 frame")
        if self.window_len < 1:
            raise InvalidArgumentError("window_len must be >= 1")
        if not self.window_len >= self.mask_start_offset + 1:
            raise InvalidArgumentError("window_len must be >= mask_start_offset + 1")
        if not self.mask_start_offset >= self.mask_end_offset >= 0:
            raise InvalidArgumentError("need mask_start_offset >= mask_end_offset >= 0")

    @property
    def masked_span(self) -> int:
        return self.mask_start_offset - self.mask_end_offset + 1

    def masked_offsets(self) -> tuple[int, ...]:
        """Offsets within the window (0 = oldest frame) covered by the mask."""
        last = self.window_len - 1
        return tuple(range(last - self.mask_start_offset, last - self.mask_end_offset + 1))


@dataclass(frozen=True)
class WindowSample:
    obs_window: np.ndarray  # (W, d_o)
    act_window: np.ndarray  # (W, d_a)
    target: float
    anchor_t: int

    def __post_init__(self):
        object.__setattr__(self, "obs_window", _frozen(self.obs_window, 2, "obs_window"))
        object.__setattr__(self, "act_window", _frozen(self.act_window, 2, "act_window"))
        if self.obs_window.shape[0] != self.act_window.shape[0]:
            raise InvalidArgumentError("observation and action windows differ in length")

    @property
    def input_size(self) -> int:
        return self.obs_window.size + self.act_window.size

    def flat(self) -> np.ndarray:
        """Model input: observation window then action window, both row-major."""
        return np.concatenate([self.obs_window.ravel(), self.act_window.ravel()])


@dataclass(frozen=True)
class MaskSpec:
    masked_frames: tuple[int, ...] = ()
    mask_value: float = 0.0

    def __post_init__(self):
        frames = tuple(sorted(set(int(f) for f in self.masked_frames)))
        object.__setattr__(self, "masked_frames", frames)

    @classmethod
    def from_window(cls, cfg: WindowConfig, mask_value: float = 0.0) -> "MaskSpec":
        return cls(cfg.masked_offsets(), mask_value)

    def check(self, window_len: int) -> None:
        for f in self.masked_frames:
            if not 0 <= f < window_len:
                raise InvalidArgumentError(f"mask offset {f} outside window of {window_len} frames")


def normalize_actions(raw_velocities, v_max: float) -> np.ndarray:
    """Map velocities in [-v_max, v_max] to [0, 1] with zero velocity at 0.5.

    Values beyond ``v_max`` are clamped.
    """
    if not v_max > 0:
        raise InvalidArgumentError(f"v_max must be positive, got {v_max}")
    v = np.clip(np.asarray(raw_velocities, dtype=np.float64), -v_max, v_max)
    return 0.5 + 0.5 * v / v_max


def normalize_depth(raw_depths) -> np.ndarray:
    d = np.asarray(raw_depths, dtype=np.float64)
    if d.size == 0:
        raise InvalidArgumentError("cannot normalize an empty depth sequence")
    lo, hi = d.min(), d.max()
    if hi == lo:
        return np.full_like(d, 0.5)
    return (d - lo) / (hi - lo)


def depth_from_histogram(depth_values, n_bins: int) -> float:
    """Relative depth of the dominant surface in a depth patch.

    Histograms the values over their own range and returns the center of the
    fullest bin.  Equal counts resolve to the nearer (smaller) depth, since
    ``argmax`` returns the first maximum.
    """
    values = np.asarray(depth_values, dtype=np.float64).ravel()
    if values.size == 0:
        raise InvalidArgumentError("depth array is empty")
    if n_bins < 1:
        raise InvalidArgumentError("n_bins must be >= 1")
    lo, hi = values.min(), values.max()
    if lo == hi:
        return float(lo)
    counts, edges = np.histogram(values, bins=n_bins, range=(lo, hi))
    k = int(np.argmax(counts))
    return float(0.5 * (edges[k] + edges[k + 1]))


def extract_windows(traj: Trajectory, cfg: WindowConfig) -> list[WindowSample]:
    """One sample per anchor ``t`` in ``[W-1, T-2]``; target is obs channel 0 at ``t+1``."""
    T, W = len(traj), cfg.window_len
    if T < W + 1:
        raise InsufficientDataError(f"trajectory has {T} frames, need at least {W + 1}")
    obs, act = traj.observations, traj.actions
    return [
        WindowSample(obs[t - W + 1 : t + 1], act[t - W + 1 : t + 1], float(obs[t + 1, 0]), t)
        for t in range(W - 1, T - 1)
    ]


def apply_mask(sample: WindowSample, mask: MaskSpec) -> WindowSample:
    W = sample.act_window.shape[0]
    mask.check(W)
    if not mask.masked_frames:
        return sample
    act = sample.act_window.copy()
    act[list(mask.masked_frames), :] = mask.mask_value
    return WindowSample(sample.obs_window, act, sample.target, sample.anchor_t)


def stack_samples(samples: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into an input matrix ``X`` (n, W*(d_o+d_a)) and target vector ``y``."""
    if not samples:
        raise InvalidArgumentError("no samples to stack")
    X = np.stack([s.flat() for s in samples])
    y = np.array([s.target for s in samples], dtype=np.float64)
    return X, y


def mask_columns(mask: MaskSpec, window_len: int, n_obs: int, n_act: int) -> np.ndarray:
    """Column indices of the flattened sample touched by ``mask``."""
    mask.check(window_len)
    base = window_len * n_obs
    return np.array(
        [base + f * n_act + c for f in mask.masked_frames for c in range(n_act)], dtype=np.intp
    )


@dataclass(frozen=True)
class InputEncoding:
    """Layout of the model input built from a window sample.

    The input is the flattened observation window, then the flattened action
    window, then (with ``mask_indicator``) one flag per frame that is 1 where
    the actions were masked.  The flag keeps a masked frame distinguishable
    from a genuine action whose normalized value happens to be near the mask
    value.
    """

    window_len: int
    n_obs: int
    n_act: int
    mask_indicator: bool = True

    @classmethod
    def for_samples(cls, samples: Sequence[WindowSample], mask_indicator: bool = True) -> "InputEncoding":
        if not samples:
            raise InvalidArgumentError("no samples")
        W, n_obs = samples[0].obs_window.shape
        return cls(W, n_obs, samples[0].act_window.shape[1], mask_indicator)

    @property
    def size(self) -> int:
        return self.window_len * (self.n_obs + self.n_act + int(self.mask_indicator))

    def encode(self, samples: Sequence[WindowSample]) -> np.ndarray:
        X, _ = stack_samples(samples)
        if X.shape[1] != self.window_len * (self.n_obs + self.n_act):
            raise InvalidArgumentError("samples do not match the input encoding")
        if self.mask_indicator:
            X = np.hstack([X, np.zeros((X.shape[0], self.window_len))])
        return X

    def indicator_columns(self, mask: MaskSpec) -> np.ndarray:
        base = self.window_len * (self.n_obs + self.n_act)
        return np.array([base + f for f in mask.masked_frames], dtype=np.intp)

    def apply_mask(self, X: np.ndarray, mask: MaskSpec, rows=None) -> np.ndarray:
        """Masked copy of ``X``; ``rows`` (bool or index array) restricts which rows are masked."""
        out = np.array(X, dtype=np.float64, copy=True)
        cols = mask_columns(mask, self.window_len, self.n_obs, self.n_act)
        sel = slice(None) if rows is None else rows
        if cols.size:
            out[np.ix_(np.arange(out.shape[0])[sel], cols)] = mask.mask_value
            if self.mask_indicator:
                out[np.ix_(np.arange(out.shape[0])[sel], self.indicator_columns(mask))] = 1.0
        return out

    def to_dict(self) -> dict:
        return {
            "window_len": self.window_len,
            "n_obs": self.n_obs,
            "n_act": self.n_act,
            "mask_indicator": self.mask_indicator,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InputEncoding":
        return cls(int(d["window_len"]), int(d["n_obs"]), int(d["n_act"]), bool(d["mask_indicator"]))


# --- CSV ingestion -----------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySchema:
    """Column mapping of a trajectory CSV.

    When ``normalized`` is false, observation columns are min-max normalized
    and action column ``i`` is scaled by ``action_v_max[i]``.
    """

    time_column: str = "t"
    observation_columns: tuple[str, ...] = ("depth",)
    action_columns: tuple[str, ...] = ("lin_vel", "ang_vel")
    normalized: bool = False
    action_v_max: tuple[float, ...] = (0.5, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "observation_columns", tuple(self.observation_columns))
        object.__setattr__(self, "action_columns", tuple(self.action_columns))
        object.__setattr__(self, "action_v_max", tuple(float(v) for v in self.action_v_max))
        if not self.observation_columns:
            raise InvalidArgumentError("schema needs at least one observation column")
        if not self.normalized and len(self.action_v_max) != len(self.action_columns):
            raise InvalidArgumentError("action_v_max must give one bound per action column")

    @property
    def columns(self) -> tuple[str, ...]:
        return (self.time_column, *self.observation_columns, *self.action_columns)


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v == 0.0:
            return "0.0"  # drops the sign of -0.0
        return repr(v)
    return str(v)


def _current_umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling file and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_current_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def save_series(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write rows as CSV with the given column order; floats use round-trip repr."""
    atomic_write_text(path, render_csv(header, rows))


def save_trajectory(path, traj: Trajectory, schema: TrajectorySchema | None = None) -> None:
    """Write a normalized trajectory, one row per frame."""
    schema = schema or TrajectorySchema(
        observation_columns=traj.observation_names, action_columns=traj.action_names, normalized=True
    )
    dt = 1.0 / traj.sample_rate_hz
    rows = (
        [round(i * dt, 9), *traj.observations[i], *traj.actions[i]] for i in range(len(traj))
    )
    save_series(path, schema.columns, rows)


def read_csv_columns(path, required: Sequence[str]) -> dict[str, np.ndarray]:
    """Parse a headered numeric CSV, returning the ``required`` columns as float arrays."""
    cols: dict[str, list[float]] = {c: [] for c in required}
    for rowno, row in read_csv_text(path, required):
        for name in required:
            try:
                v = float(row[name])
            except ValueError:
                raise ParseError(f"non-numeric value {row[name]!r} in column {name}", path, rowno) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite value in column {name}", path, rowno)
            cols[name].append(v)
    return {name: np.array(c, dtype=np.float64) for name, c in cols.items()}


def read_csv_text(path, required: Sequence[str]) -> list[tuple[int, dict[str, str]]]:
    """Rows of a headered CSV as ``(row number, {column: text})`` for the ``required`` columns."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("file is empty", path) from None
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(f"missing column(s) {', '.join(missing)}", path, 1)
        idx = {c: header.index(c) for c in required}
        out = []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, found {len(row)}", path, rowno)
            out.append((rowno, {c: row[i].strip() for c, i in idx.items()}))
    return out


def load_trajectory(path, schema: TrajectorySchema | None = None, sample_rate_hz: float = 10.0) -> Trajectory:
    schema = schema or TrajectorySchema()
    cols = read_csv_columns(path, schema.columns)
    if cols[schema.time_column].size == 0:
        raise ParseError("no data rows", path)
    obs = np.column_stack([cols[c] for c in schema.observation_columns])
    if schema.normalized:
        act = np.column_stack([cols[c] for c in schema.action_columns]) if schema.action_columns else np.zeros((obs.shape[0], 0))
    else:
        obs = np.column_stack([normalize_depth(obs[:, j]) for j in range(obs.shape[1])])
        act = (
            np.column_stack([normalize_actions(cols[c], v) for c, v in zip(schema.action_columns, schema.action_v_max)])
            if schema.action_columns
            else np.zeros((obs.shape[0], 0))
        )
    try:
        return Trajectory(
            sample_rate_hz,
            obs,
            act,
            observation_names=schema.observation_columns,
            action_names=schema.action_columns,
        )
    except InvalidArgumentError as exc:
        raise ParseError(str(exc), path) from None
