"""Command-line pipeline: simulate, train, analyze, cluster, report.

Output layout under ``--out`` (default ``out``)::

    data/<exp>.csv          trajectories
    truth/<exp>.csv         simulated ground truth
    model.json              trained checkpoint
    analysis/<exp>.te.csv   per-anchor TE, raw and smoothed
    analysis/<exp>.peaks.csv
    analysis/<exp>.svg      actions / depth predictions / TE
    clusters.csv, centroids.csv, clusters.svg
    report.json

Failures print one line ``error: <category>: <message>`` to stderr and exit
with status 2 (1 for unexpected internal errors).
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .clustering import kmeans_dtw, save_centroids_csv, save_clusters_csv, select_channel
from .config import PipelineConfig, load_config
from .data import (
    Trajectory,
    atomic_write_text,
    extract_windows,
    load_trajectory,
    normalize_actions,
    normalize_depth,
    save_series,
)
from .errors import InvalidArgumentError, TeInfluenceError
from .mlp import load_checkpoint, save_checkpoint, train_pooled
from .sim import derive_seed, evaluate_detection, load_truth, save_truth, simulate_raw, turn_peak_fraction
from .svg import analysis_figure, cluster_figure
from .te import analyze_samples, find_te_peaks, load_peaks_csv, lowpass_filter, save_peaks_csv, save_te_csv

COMMANDS = ("simulate", "train", "analyze", "cluster", "report")


def experiment_id(index: int) -> str:
    return f"exp{index:02d}"


def _load_inputs(cfg: PipelineConfig) -> list[tuple[str, Trajectory]]:
    paths = cfg.input_paths()
    if not paths:
        raise FileNotFoundError(f"no trajectory files in {cfg.data_dir}")
    schema = cfg.schema.trajectory_schema()
    return [(p.stem, load_trajectory(p, schema, cfg.schema.sample_rate_hz)) for p in paths]


def cmd_simulate(cfg: PipelineConfig) -> list[Path]:
    """Write ``experiments`` simulated trajectories plus their ground truth."""
    schema = cfg.schema.trajectory_schema()
    if len(schema.observation_columns) != 1 or len(schema.action_columns) != 2:
        raise InvalidArgumentError("simulation needs a schema with one observation and two action columns")
    v_max = cfg.schema.action_v_max
    # generate everything before writing anything
    results = []
    for i in range(cfg.experiments):
        sim_cfg = cfg.sim_config(derive_seed(cfg.seed, i))
        if sim_cfg.sample_rate_hz != cfg.schema.sample_rate_hz:
            raise InvalidArgumentError("simulate.sample_rate_hz must equal schema.sample_rate_hz")
        results.append(simulate_raw(sim_cfg))
    written = []
    for i, raw in enumerate(results):
        dt = 1.0 / raw.sample_rate_hz
        if schema.normalized:
            cols = (normalize_depth(raw.depth), normalize_actions(raw.lin_vel, v_max[0]), normalize_actions(raw.ang_vel, v_max[1]))
        else:
            cols = (raw.depth, raw.lin_vel, raw.ang_vel)
        rows = ([round(k * dt, 9), *(float(c[k]) for c in cols)] for k in range(raw.depth.size))
        data_path = cfg.data_dir / f"{experiment_id(i)}.csv"
        save_series(data_path, schema.columns, rows)
        truth_path = cfg.truth_dir / f"{experiment_id(i)}.csv"
        save_truth(truth_path, raw.truth)
        written += [data_path, truth_path]
    return written


def cmd_train(cfg: PipelineConfig) -> Path:
    inputs = _load_inputs(cfg)
    wc = cfg.window.window_config()
    mask = cfg.window.mask()
    sample_sets = [extract_windows(traj, wc) for _, traj in inputs]
    model = train_pooled(sample_sets, mask, cfg.train_config())
    schema = cfg.schema.trajectory_schema()
    model.metadata["normalization"] = {
        "normalized_input": schema.normalized,
        "depth": "min-max per trajectory",
        "action_v_max": list(schema.action_v_max),
        "observation_columns": list(schema.observation_columns),
        "action_columns": list(schema.action_columns),
    }
    model.metadata["window"] = {
        "window_len": wc.window_len,
        "mask_start_offset": wc.mask_start_offset,
        "mask_end_offset": wc.mask_end_offset,
    }
    model.metadata["rng_seed"] = cfg.seed
    model.metadata["experiments"] = [name for name, _ in inputs]
    save_checkpoint(cfg.model_path, model)
    return cfg.model_path


def cmd_analyze(cfg: PipelineConfig) -> list[Path]:
    model = load_checkpoint(cfg.model_path)
    inputs = _load_inputs(cfg)
    wc = cfg.window.window_config()
    mask = cfg.window.mask()
    a = cfg.analysis
    outputs = []
    for name, traj in inputs:
        samples = extract_windows(traj, wc)
        analysis = analyze_samples(model, samples, mask)
        raw = analysis.series
        smoothed = raw.with_values(lowpass_filter(raw.values, a.cutoff_hz, traj.sample_rate_hz, a.filter_order))
        peaks = find_te_peaks(smoothed, samples, mask, a.min_distance_frames, a.min_prominence)
        outputs.append((name, traj, analysis, smoothed, peaks))
    written = []
    for name, traj, analysis, smoothed, peaks in outputs:
        dt = 1.0 / traj.sample_rate_hz
        te_path = cfg.analysis_dir / f"{name}.te.csv"
        peaks_path = cfg.analysis_dir / f"{name}.peaks.csv"
        svg_path = cfg.analysis_dir / f"{name}.svg"
        save_te_csv(te_path, analysis.series, smoothed, peaks)
        save_peaks_csv(peaks_path, peaks)
        anchors = analysis.series.anchors
        time_s = np.arange(len(traj)) * dt
        svg = analysis_figure(
            name,
            time_s,
            traj.actions,
            traj.action_names,
            traj.observations[:, 0],
            (anchors + 1) * dt,  # predictions target the frame after the anchor
            analysis.full_mean,
            analysis.full_std,
            analysis.masked_mean,
            analysis.masked_std,
            anchors * dt,
            analysis.series.values,
            smoothed.values,
            np.array([p.anchor_t * dt for p in peaks]),
            np.array([p.te_value for p in peaks]),
        )
        atomic_write_text(svg_path, svg)
        written += [te_path, peaks_path, svg_path]
    return written


def cmd_cluster(cfg: PipelineConfig) -> list[Path]:
    c = cfg.cluster
    sequences = []
    for name, traj in _load_inputs(cfg):
        peaks_path = cfg.analysis_dir / f"{name}.peaks.csv"
        peaks = load_peaks_csv(peaks_path, traj)
        sequences += select_channel(peaks, c.channel, traj.action_names, name)
    if len(sequences) < c.k:
        raise InvalidArgumentError(f"k={c.k} exceeds the number of detected sequences ({len(sequences)})")
    X = np.array([s.values for s in sequences])
    result = kmeans_dtw(X, c.k, c.restarts, cfg.seed, c.max_iter, c.dba_iterations, c.band)
    clusters_path = cfg.out_dir / "clusters.csv"
    centroids_path = cfg.out_dir / "centroids.csv"
    svg_path = cfg.out_dir / "clusters.svg"
    save_clusters_csv(clusters_path, sequences, result)
    save_centroids_csv(centroids_path, result)
    atomic_write_text(svg_path, cluster_figure(f"{c.channel}: {len(sequences)} sequences, k={c.k}", X, result.assignments, result.centroids))
    return [clusters_path, centroids_path, svg_path]


def cmd_report(cfg: PipelineConfig) -> Path:
    gain = cfg.sim_config(0).human_gain
    responsive = ("forward", "backward") if gain != 0 else ()
    per_exp = {}
    for name, traj in _load_inputs(cfg):
        truth = load_truth(cfg.truth_dir / f"{name}.csv", len(traj), responsive)
        peaks = load_peaks_csv(cfg.analysis_dir / f"{name}.peaks.csv")
        recall, precision = evaluate_detection(peaks, truth, cfg.report.tolerance_frames)
        per_exp[name] = {
            "recall": recall,
            "precision": precision,
            "turn_peak_fraction": turn_peak_fraction(peaks, truth),
            "n_peaks": len(peaks),
            "n_responsive_events": len(truth.responsive_events),
            "n_turn_events": len(truth.turn_events),
        }
    report = {
        "experiments": per_exp,
        "mean_recall": float(np.mean([v["recall"] for v in per_exp.values()])),
        "mean_precision": float(np.mean([v["precision"] for v in per_exp.values()])),
        "seeds": {
            "global": cfg.seed,
            "training": cfg.seed,
            "clustering": cfg.seed,
            "simulation": {experiment_id(i): derive_seed(cfg.seed, i) for i in range(cfg.experiments)},
        },
        "config": cfg.to_dict(),
        "versions": {
            "teinfluence": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
    }
    path = cfg.out_dir / "report.json"
    atomic_write_text(path, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


HANDLERS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "analyze": cmd_analyze,
    "cluster": cmd_cluster,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="teinfluence", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="global seed (overrides the config)")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key, e.g. --set train.epochs=50 (value parsed as JSON)",
    )
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, args.seed, args.out, args.set)
        result = HANDLERS[args.command](cfg)
    except TeInfluenceError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file-not-found: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io-error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort one-line report
        print(f"error: internal: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    paths = result if isinstance(result, list) else [result]
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
