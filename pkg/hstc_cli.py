"""Command-line front end: train, evaluate, map, rank bands, sweep, synthesize, convert.

Usage::

    python hstc_cli.py train --cube data/pines --model-type tensor_lr --out-dir runs/a
    python hstc_cli.py eval --model runs/a/model.json --cube data/pines --out-dir runs/a
    python hstc_cli.py map --model runs/a/model.json --cube data/pines --out-dir runs/a
    python hstc_cli.py bands --model runs/a/model.json -n 10 --out-dir runs/a

Every failure prints one ``error: ...`` line to stderr. Invalid configuration
exits with 2, other failures with 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import numpy as np

from band_selection import band_importance
from data_io import (
    build_dataset,
    convert_mat,
    cube_paths,
    default_labels_path,
    load_cube,
    load_labels,
    load_model,
    save_cube,
    save_labels,
    save_model,
    split_per_class,
)
from errors import ConfigError, HSTCError, ShapeError
from experiments import band_reduction_experiment, param_summary, run_pipeline, run_sweep, summarize
from linear_model import INIT_MODES, TrainConfig
from memory_monitor import log_memory_if_high
from reporting import (
    class_map,
    evaluate,
    misclassification_map,
    predict_labels,
    write_pgm,
    write_report,
    write_trace,
)
from run_config import MODEL_TYPES, build_run_config, resolve_hidden, worker_count
from synthetic import planted_band_cube

logger = logging.getLogger("hstc")

MODEL_FILE = "model.json"
TRACE_FILE = "trace.csv"
CLASS_MAP_FILE = "class_map.pgm"
ERROR_MAP_FILE = "misclassified.pgm"
REDUCTION_FILE = "bands_reduction.csv"
DEFAULT_TOP_BANDS = 10


def configure_logging(debug: bool = False) -> None:
    log_level = "DEBUG" if debug else os.environ.get("LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, log_level, logging.WARNING),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def str_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# Shared input handling
# ---------------------------------------------------------------------------


def require_files(*paths) -> None:
    for path in paths:
        if not Path(path).exists():
            raise ConfigError(f"input file not found: {path}")


def load_inputs(cube_path, labels_path=None) -> tuple:
    labels_path = Path(labels_path) if labels_path else default_labels_path(cube_path)
    require_files(*cube_paths(cube_path), labels_path)
    cube = load_cube(cube_path)
    labels = load_labels(labels_path, cube.height, cube.width)
    log_memory_if_high(f"loading {cube_path}", cube.array, labels.grid)
    return cube, labels


def load_trained(model_path) -> tuple:
    require_files(model_path)
    return load_model(model_path, with_metadata=True)


def check_model_fits(model, cube) -> None:
    if model.input_shape[-1] != cube.bands:
        raise ShapeError(f"model expects {model.input_shape[-1]} bands, cube has {cube.bands}")


def window_of(model) -> int:
    return int(model.input_shape[0])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _run_overrides(args) -> dict:
    keys = (
        "cube", "labels", "model_type", "window", "hidden", "samples_per_class",
        "train_fraction", "out_dir", "max_sweeps", "inner_steps", "learning_rate",
        "l2", "rel_tol", "seed", "init_scale", "max_halvings", "augment_ones", "init",
    )
    return {k: getattr(args, k, None) for k in keys}


def cmd_train(args) -> int:
    run = build_run_config(args.config, _run_overrides(args)).validate()
    cube, labels = load_inputs(run.cube, run.labels_path)
    outcome = run_pipeline(cube, labels, run)
    out_dir = Path(run.out_dir)
    metadata = {
        "seed": run.seed,
        "samples_per_class": run.samples_per_class,
        "train_fraction": run.train_fraction,
        "window": run.window,
        "sweeps": outcome.result.sweeps,
        "converged": outcome.result.converged,
        "train": asdict(run.train),
    }
    model_path = save_model(outcome.model, out_dir / MODEL_FILE, metadata)
    write_trace(outcome.result.trace, out_dir / TRACE_FILE)
    counts = param_summary(run.model_type, outcome.train.input_shape, outcome.train.num_classes, run.hidden)
    for name, count in counts.items():
        print(f"{name} parameters: {count}")
    print(f"model written to {model_path}")
    return 0


def _recorded_split(model, metadata: dict, cube, labels) -> tuple:
    if "seed" not in metadata or "samples_per_class" not in metadata:
        raise ConfigError("model file has no recorded split; retrain with this tool")
    return split_per_class(
        cube, labels,
        int(metadata["samples_per_class"]),
        int(metadata["seed"]),
        int(metadata.get("window") or window_of(model)),
        metadata.get("train_fraction"),
    )


def recorded_train_config(model, metadata: dict) -> TrainConfig:
    """Optimizer settings the model was trained with; older files keep the defaults."""
    recorded = metadata.get("train") or {}
    settings = {k: v for k, v in recorded.items() if k in TrainConfig.field_names()}
    settings.setdefault("seed", int(metadata.get("seed", 0)))
    settings.setdefault("augment_ones", model.augment_ones)
    return TrainConfig(**settings).validate()


def cmd_eval(args) -> int:
    model, metadata = load_trained(args.model)
    cube, labels = load_inputs(args.cube, args.labels)
    check_model_fits(model, cube)
    _, test = _recorded_split(model, metadata, cube, labels)
    report = evaluate(model, test, worker_count())
    logger.info("Evaluation took %.3fs", report.wall_time)
    json_path, _ = write_report(report, args.out_dir, record_timing=args.record_timing)
    print(f"overall accuracy: {report.overall_accuracy:.4f} ({report.total} test pixels)")
    print(f"report written to {json_path}")
    return 0


def cmd_map(args) -> int:
    model, _ = load_trained(args.model)
    cube, labels = load_inputs(args.cube, args.labels)
    check_model_fits(model, cube)
    coords = labels.labeled_coords()
    data = build_dataset(cube, labels, coords, window_of(model), model.num_classes)
    predicted = np.zeros(labels.shape, dtype=np.int64)
    predicted[coords[:, 0], coords[:, 1]] = predict_labels(model, data.patches, worker_count())
    out_dir = Path(args.out_dir)
    write_pgm(class_map(predicted, labels, model.num_classes), out_dir / CLASS_MAP_FILE)
    write_pgm(misclassification_map(predicted, labels), out_dir / ERROR_MAP_FILE)
    print(f"maps written to {out_dir / CLASS_MAP_FILE} and {out_dir / ERROR_MAP_FILE}")
    return 0


def cmd_bands(args) -> int:
    model, metadata = load_trained(args.model)
    ranking = band_importance(model, source_model=str(args.model))
    n = min(args.n, ranking.num_bands)
    if n < args.n:
        logger.warning("Only %d bands available; emitting all of them", n)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = ranking.to_frame(n)
    table.to_csv(out_dir / "bands.csv", index=False, float_format="%.17g")
    with open(out_dir / "bands.json", "w", encoding="utf-8") as f:
        json.dump({
            "n": n,
            "bands": table["band"].tolist(),
            "scores": table["score"].tolist(),
        }, f, indent=2)
        f.write("\n")
    print("top bands: " + " ".join(str(b) for b in table["band"]))
    if args.reduce:
        if not args.cube:
            raise ConfigError("--reduce needs --cube to retrain on the recorded split")
        cube, labels = load_inputs(args.cube, args.labels)
        check_model_fits(model, cube)
        train, test = _recorded_split(model, metadata, cube, labels)
        cfg = recorded_train_config(model, metadata)
        reduced = band_reduction_experiment(train, test, ranking, args.reduce, cfg)
        reduced.to_csv(out_dir / REDUCTION_FILE, index=False, float_format="%.17g")
        print(f"band reduction results written to {out_dir / REDUCTION_FILE}")
    return 0


def cmd_sweep(args) -> int:
    base = build_run_config(args.config, _run_overrides(args)).validate()
    grid = {}
    if args.grid_models:
        unknown = set(args.grid_models) - set(MODEL_TYPES)
        if unknown:
            raise ConfigError(f"unknown model types {sorted(unknown)}")
        grid["model_type"] = args.grid_models
    if args.grid_samples:
        grid["samples_per_class"] = args.grid_samples
    if args.grid_window:
        grid["window"] = args.grid_window
    if args.grid_hidden:
        grid["hidden"] = args.grid_hidden
    if not grid:
        grid["model_type"] = [base.model_type]
    cube, labels = load_inputs(base.cube, base.labels_path)
    runs = run_sweep(cube, labels, base, grid, args.runs)
    summary = summarize(runs)
    out_dir = Path(base.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs.to_csv(out_dir / "sweep_runs.csv", index=False, float_format="%.17g")
    summary.to_csv(out_dir / "sweep_summary.csv", index=False, float_format="%.17g")
    print(summary.to_string(index=False))
    return 0


def cmd_synth(args) -> int:
    informative = [b - 1 for b in args.informative]
    cube, labels = planted_band_cube(args.height, args.width, args.bands, informative,
                                     args.classes, args.amplitude, args.seed)
    header, _ = save_cube(cube, args.out)
    labels_path = save_labels(labels, default_labels_path(args.out))
    print(f"cube written to {header}, labels to {labels_path}")
    return 0


def cmd_convert(args) -> int:
    require_files(args.cube_mat, *([args.labels_mat] if args.labels_mat else []))
    header, _, labels_path = convert_mat(args.cube_mat, args.out, args.cube_key,
                                         args.labels_mat, args.labels_key)
    print(f"cube written to {header}" + (f", labels to {labels_path}" if labels_path else ""))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_run_arguments(p: argparse.ArgumentParser) -> None:
    """Training flags; each defaults to None so the config file wins when it is absent."""
    p.add_argument("--config", help="JSON file with run settings")
    p.add_argument("--cube", help="cube stem or header path")
    p.add_argument("--labels", help="label file (default: <cube>.labels.raw)")
    p.add_argument("--model-type", dest="model_type", choices=MODEL_TYPES)
    p.add_argument("--window", type=positive_int, help="odd patch size s")
    p.add_argument("--hidden", type=resolve_hidden, help="hidden neurons Q or preset (indian_pines, pavia)")
    p.add_argument("--samples-per-class", dest="samples_per_class", type=positive_int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    p.add_argument("--inner-steps", dest="inner_steps", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--rel-tol", dest="rel_tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-scale", dest="init_scale", type=float)
    p.add_argument("--max-halvings", dest="max_halvings", type=int)
    p.add_argument("--init", choices=INIT_MODES, help="start from the training data (default) or at random")
    p.add_argument("--augment-ones", dest="augment_ones", action="store_true", default=None,
                   help="append an all-ones band so the model learns a bias")


def _add_model_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--cube", required=True, help="cube stem or header path")
    p.add_argument("--labels", help="label file (default: <cube>.labels.raw)")
    p.add_argument("--out-dir", dest="out_dir", default=".")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hstc", description="Tensor-structured classifiers for hyperspectral patches"
    )
    parser.add_argument("--debug", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write model.json and trace.csv")
    _add_run_arguments(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate on the recorded test split")
    _add_model_inputs(p)
    p.add_argument("--record-timing", dest="record_timing", action="store_true",
                   help="include wall time in report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("map", help="write class and misclassification maps")
    _add_model_inputs(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("bands", help="rank spectral bands of a tensor_lr model")
    p.add_argument("--model", required=True, help="trained tensor_lr model file")
    p.add_argument("-n", type=positive_int, default=DEFAULT_TOP_BANDS,
                   help="number of bands to emit (default: %(default)s)")
    p.add_argument("--out-dir", dest="out_dir", default=".")
    p.add_argument("--reduce", type=int_list, help="retrain on the top-n bands for each listed n, e.g. 10,15,20")
    p.add_argument("--cube", help="cube stem for --reduce")
    p.add_argument("--labels", help="label file for --reduce (default: <cube>.labels.raw)")
    p.set_defaults(func=cmd_bands)

    p = sub.add_parser("sweep", help="repeat training over a parameter grid")
    _add_run_arguments(p)
    p.add_argument("--runs", type=positive_int, default=10, help="runs per grid point (default: %(default)s)")
    p.add_argument("--grid-models", dest="grid_models", type=str_list)
    p.add_argument("--grid-samples", dest="grid_samples", type=int_list)
    p.add_argument("--grid-window", dest="grid_window", type=int_list)
    p.add_argument("--grid-hidden", dest="grid_hidden", type=int_list)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a planted-band demo cube and labels")
    p.add_argument("--out", required=True, help="output cube stem")
    p.add_argument("--height", type=positive_int, default=24)
    p.add_argument("--width", type=positive_int, default=24)
    p.add_argument("--bands", type=positive_int, default=16)
    p.add_argument("--informative", type=int_list, default=[2, 5],
                   help="1-based informative band numbers (default: 2,5)")
    p.add_argument("--classes", type=positive_int, default=3)
    p.add_argument("--amplitude", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert .mat containers to the cube format")
    p.add_argument("--cube-mat", dest="cube_mat", required=True)
    p.add_argument("--cube-key", dest="cube_key")
    p.add_argument("--labels-mat", dest="labels_mat")
    p.add_argument("--labels-key", dest="labels_key")
    p.add_argument("--out", required=True, help="output cube stem")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.debug)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HSTCError, OSError) as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
