"""Pipeline configuration.

The config file is a JSON object.  Every key is optional; omitted keys take
the defaults below.  Unknown keys are rejected so that typos do not silently
fall back to defaults.

    {
      "seed": 0,
      "out": "out",
      "experiments": 3,
      "paths": {"inputs": null, "truth_dir": null, "model": null},
      "simulate": {"duration_s": 900.0, "human_reaction_lag_s": 0.8, ...},
      "schema": {"sample_rate_hz": 10.0, "normalized": false, "action_v_max": [0.5, 1.0], ...},
      "window": {"window_len": 20, "mask_start_offset": 19, "mask_end_offset": 5, "mask_value": 0.0},
      "train": {"epochs": 200, "learning_rate": 0.003, ...},
      "analysis": {"cutoff_hz": 0.5, "filter_order": 2, "min_distance_frames": 10, "min_prominence": 0.05},
      "cluster": {"k": 2, "restarts": 10, "channel": "lin_vel", ...},
      "report": {"tolerance_frames": 5}
    }

``paths.inputs`` lists trajectory CSVs; when null, every ``<out>/data/*.csv``
is used.  ``paths.truth_dir`` defaults to ``<out>/truth`` and ``paths.model``
to ``<out>/model.json``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data import MaskSpec, TrajectorySchema, WindowConfig
from .errors import InvalidArgumentError, ParseError
from .mlp import TrainConfig
from .sim import SimConfig


@dataclass(frozen=True)
class PathsConfig:
    inputs: tuple[str, ...] | None = None
    truth_dir: str | None = None
    model: str | None = None


@dataclass(frozen=True)
class SchemaConfig:
    sample_rate_hz: float = 10.0
    time_column: str = "t"
    observation_columns: tuple[str, ...] = ("depth",)
    action_columns: tuple[str, ...] = ("lin_vel", "ang_vel")
    normalized: bool = False
    action_v_max: tuple[float, ...] = (0.5, 1.0)

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise InvalidArgumentError("schema.sample_rate_hz must be positive")
        self.trajectory_schema()  # validates the column layout

    def trajectory_schema(self) -> TrajectorySchema:
        return TrajectorySchema(
            time_column=self.time_column,
            observation_columns=tuple(self.observation_columns),
            action_columns=tuple(self.action_columns),
            normalized=self.normalized,
            action_v_max=tuple(self.action_v_max),
        )


@dataclass(frozen=True)
class WindowSection:
    window_len: int = 20
    mask_start_offset: int = 19
    mask_end_offset: int = 5
    mask_value: float = 0.0

    def __post_init__(self):
        self.window_config()
        if self.mask_value not in (0.0, 0.5):
            raise InvalidArgumentError("window.mask_value must be 0.0 or 0.5")

    def window_config(self) -> WindowConfig:
        return WindowConfig(self.window_len, self.mask_start_offset, self.mask_end_offset)

    def mask(self) -> MaskSpec:
        return MaskSpec.from_window(self.window_config(), self.mask_value)


@dataclass(frozen=True)
class AnalysisConfig:
    cutoff_hz: float = 0.5
    filter_order: int = 2
    min_distance_frames: int = 10
    min_prominence: float = 0.05

    def __post_init__(self):
        if self.filter_order < 1:
            raise InvalidArgumentError("analysis.filter_order must be >= 1")
        if self.min_distance_frames < 1:
            raise InvalidArgumentError("analysis.min_distance_frames must be >= 1")
        if self.min_prominence < 0:
            raise InvalidArgumentError("analysis.min_prominence must be non-negative")


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 2
    restarts: int = 10
    max_iter: int = 50
    dba_iterations: int = 10
    band: int | None = None
    channel: str = "lin_vel"

    def __post_init__(self):
        if self.k < 1 or self.restarts < 1 or self.max_iter < 1:
            raise InvalidArgumentError("cluster.k, restarts and max_iter must be >= 1")
        if self.dba_iterations < 0:
            raise InvalidArgumentError("cluster.dba_iterations must be non-negative")
        if self.band is not None and self.band < 0:
            raise InvalidArgumentError("cluster.band must be non-negative")


@dataclass(frozen=True)
class ReportConfig:
    tolerance_frames: int = 5

    def __post_init__(self):
        if self.tolerance_frames < 0:
            raise InvalidArgumentError("report.tolerance_frames must be >= 0")


_SIM_FIELDS = [f.name for f in dataclasses.fields(SimConfig) if f.name != "rng_seed"]
_TRAIN_FIELDS = [f.name for f in dataclasses.fields(TrainConfig) if f.name != "rng_seed"]


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out: str = "out"
    experiments: int = 3
    paths: PathsConfig = field(default_factory=PathsConfig)
    simulate: dict = field(default_factory=dict)  # SimConfig overrides, seed excluded
    schema: SchemaConfig = field(default_factory=SchemaConfig)
    window: WindowSection = field(default_factory=WindowSection)
    train: dict = field(default_factory=dict)  # TrainConfig overrides, seed excluded
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self):
        if self.experiments < 1:
            raise InvalidArgumentError("experiments must be >= 1")
        _check_keys(self.simulate, _SIM_FIELDS, "simulate")
        _check_keys(self.train, _TRAIN_FIELDS, "train")
        self.sim_config(0)
        self.train_config()

    # derived objects -------------------------------------------------------

    def sim_config(self, rng_seed: int) -> SimConfig:
        return _build(SimConfig, {**self.simulate, "rng_seed": rng_seed}, "simulate")

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, {**self.train, "rng_seed": self.seed}, "train")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def data_dir(self) -> Path:
        return self.out_dir / "data"

    @property
    def truth_dir(self) -> Path:
        return Path(self.paths.truth_dir) if self.paths.truth_dir else self.out_dir / "truth"

    @property
    def analysis_dir(self) -> Path:
        return self.out_dir / "analysis"

    @property
    def model_path(self) -> Path:
        return Path(self.paths.model) if self.paths.model else self.out_dir / "model.json"

    def input_paths(self) -> list[Path]:
        if self.paths.inputs is not None:
            return [Path(p) for p in self.paths.inputs]
        return sorted(self.data_dir.glob("*.csv"))

    def to_dict(self) -> dict:
        """Fully resolved configuration, including defaults, as plain JSON data."""
        d = dataclasses.asdict(self)
        d["simulate"] = {k: v for k, v in dataclasses.asdict(self.sim_config(0)).items() if k != "rng_seed"}
        d["train"] = {k: v for k, v in dataclasses.asdict(self.train_config()).items() if k != "rng_seed"}
        return json.loads(json.dumps(d))


def _check_keys(d: dict, allowed, section: str) -> None:
    if not isinstance(d, dict):
        raise InvalidArgumentError(f"{section} must be an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise InvalidArgumentError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def _build(cls, d: dict, section: str):
    allowed = [f.name for f in dataclasses.fields(cls)]
    _check_keys(d, allowed, section)
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidArgumentError(f"{section}: {exc}") from None


_SECTIONS = {
    "paths": PathsConfig,
    "schema": SchemaConfig,
    "window": WindowSection,
    "analysis": AnalysisConfig,
    "cluster": ClusterConfig,
    "report": ReportConfig,
}


def config_from_dict(d: dict) -> PipelineConfig:
    _check_keys(d, [f.name for f in dataclasses.fields(PipelineConfig)], "config")
    kwargs: dict[str, Any] = {}
    for key, value in d.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise InvalidArgumentError(f"{key} must be an object")
            kwargs[key] = _build(_SECTIONS[key], value, key)
        elif key in ("simulate", "train"):
            _check_keys(value, _SIM_FIELDS if key == "simulate" else _TRAIN_FIELDS, key)
            kwargs[key] = dict(value)
        else:
            kwargs[key] = value
    if not isinstance(kwargs.get("seed", 0), int) or isinstance(kwargs.get("seed", 0), bool):
        raise InvalidArgumentError("seed must be an integer")
    if not isinstance(kwargs.get("experiments", 1), int):
        raise InvalidArgumentError("experiments must be an integer")
    return PipelineConfig(**kwargs)


def set_path(d: dict, dotted: str, value) -> None:
    """Assign ``value`` at a dotted key path such as ``train.epochs``."""
    keys = dotted.split(".")
    if not all(keys):
        raise InvalidArgumentError(f"bad key path {dotted!r}")
    node = d
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise InvalidArgumentError(f"{dotted!r}: {k} is not a section")
    node[keys[-1]] = value


def parse_assignment(text: str) -> tuple[str, Any]:
    """Split ``key=value``; the value is read as JSON, falling back to a plain string."""
    if "=" not in text:
        raise InvalidArgumentError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path=None, seed: int | None = None, out: str | None = None, assignments=()) -> PipelineConfig:
    """Read the JSON config (if any) and apply flag overrides in order: ``--set``, ``--seed``, ``--out``."""
    d: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"no such config file: {p}")
        try:
            d = json.loads(p.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ParseError(f"invalid JSON ({exc})", p) from None
        if not isinstance(d, dict):
            raise ParseError("config must be a JSON object", p)
    for a in assignments:
        set_path(d, *parse_assignment(a))
    if seed is not None:
        d["seed"] = int(seed)
    if out is not None:
        d["out"] = str(out)
    return config_from_dict(d)
