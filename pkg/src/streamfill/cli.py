"""Command-line front end.

Four commands: ``impute`` completes one file as a single window,
``stream`` runs the continuous variants over tumbling windows, ``eval``
compares methods under random masking, and ``gen`` writes a synthetic
correlated stream. Every run echoes its fully resolved configuration
into its output so results are reproducible from the artifacts alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import continuous as cont
from .errors import (
    ConfigurationError,
    IngestionError,
    ParseError,
    SchemaError,
    StreamfillError,
)
from .evaluation import (
    WindowRecord,
    generate_synthetic,
    knn_impute,
    mae,
    mask_random,
    mean_impute,
    mre,
    write_metrics_csv,
    write_metrics_json,
)
from .graph import knn_graph, make_knn_builder, mean_fill
from .network import TrainConfig, train_impute
from .propagation import DEFAULT_MAX_ITERS, DEFAULT_TOL, feaprop_impute
from .records import DataChunk, parse_records, tumbling_windows
from .serialize import (
    load_model_state,
    load_reservoir,
    save_model_state,
    save_reservoir,
)

logger = logging.getLogger(__name__)

METHODS = ("mean", "knn", "feaprop", "mpin")

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_USAGE = 2


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training")
    group.add_argument("--epochs", type=int, default=200)
    group.add_argument("--learning-rate", type=float, default=0.01)
    group.add_argument("--weight-decay", type=float, default=0.1)
    group.add_argument("--lambda1", type=float, default=1.0)
    group.add_argument("--lambda2", type=float, default=1.0)
    group.add_argument("--validation-ratio", type=float, default=0.05)
    group.add_argument("--hidden-dim", type=int, default=None)
    group.add_argument(
        "--early-stop-patience",
        type=int,
        default=30,
        help="epochs without improvement before stopping; -1 disables",
    )


def _add_graph_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("graph")
    group.add_argument("--k", type=int, default=10, help="neighbor count")
    group.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")


def _train_config(args: argparse.Namespace) -> TrainConfig:
    patience = args.early_stop_patience
    return TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        validation_ratio=args.validation_ratio,
        hidden_dim=args.hidden_dim,
        seed=args.seed,
        early_stop_patience=None if patience is not None and patience < 0 else patience,
    )


def _config_echo(args: argparse.Namespace) -> dict:
    echo = {k: v for k, v in sorted(vars(args).items()) if k != "handler"}
    for key, value in echo.items():
        if isinstance(value, Path):
            echo[key] = str(value)
    return echo


def _write_echo_sidecar(output: Path, echo: dict) -> None:
    sidecar = output.with_suffix(output.suffix + ".run.json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump({"config": echo}, fh, indent=2)
        fh.write("\n")


def _load_single_chunk(args: argparse.Namespace) -> DataChunk:
    instances = parse_records(args.input, format=args.format)
    if not instances:
        raise ConfigurationError(f"{args.input}: no records to impute")
    dim = instances[0].dim
    return DataChunk(window_index=0, rows=tuple(instances), dim=dim)


def _impute_chunk(
    chunk: DataChunk, method: str, args: argparse.Namespace
) -> np.ndarray:
    """Dispatch one chunk to the requested imputation method."""
    if method == "mean":
        return mean_impute(chunk)
    if chunk.n_rows < 2:
        raise ConfigurationError(f"method {method!r} needs at least 2 rows")
    k_eff = min(args.k, chunk.n_rows - 1)
    if method == "knn":
        return knn_impute(chunk, k_eff)
    if method == "feaprop":
        graph = knn_graph(mean_fill(chunk), k=k_eff, metric=args.metric)
        return feaprop_impute(chunk, graph, max_iters=args.max_iters, tol=args.tol)
    if method == "mpin":
        result = train_impute(
            chunk,
            make_knn_builder(k=args.k, metric=args.metric),
            _train_config(args),
        )
        return result.completed
    raise ConfigurationError(f"unknown method {method!r}")


def _write_completed_csv(path: Path, chunk: DataChunk, completed: np.ndarray) -> None:
    """Write imputed rows in input order, preserving metadata columns."""
    has_stream = any(row.stream_id is not None for row in chunk.rows)
    has_ts = any(row.timestamp is not None for row in chunk.rows)
    header = []
    if has_stream:
        header.append("stream_id")
    if has_ts:
        header.append("timestamp")
    header += [f"v{d}" for d in range(chunk.dim)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, row in enumerate(chunk.rows):
            cells = []
            if has_stream:
                cells.append(row.stream_id if row.stream_id is not None else "")
            if has_ts:
                cells.append("" if row.timestamp is None else repr(row.timestamp))
            cells += [repr(float(completed[i, d])) for d in range(chunk.dim)]
            writer.writerow(cells)


def cmd_impute(args: argparse.Namespace) -> int:
    chunk = _load_single_chunk(args)
    completed = _impute_chunk(chunk, args.method, args)
    output = Path(args.output)
    _write_completed_csv(output, chunk, completed)
    _write_echo_sidecar(output, _config_echo(args))
    logger.info("imputed %d rows -> %s", chunk.n_rows, output)
    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    output = Path(args.output)
    generate_synthetic(
        output,
        streams=args.streams,
        length=args.length,
        dim=args.dim,
        window_length=args.window_length,
        missing_rate=args.missing_rate,
        seed=args.seed,
        correlation=args.correlation,
    )
    _write_echo_sidecar(output, _config_echo(args))
    logger.info("generated %d x %d stream file -> %s", args.streams, args.length, output)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    chunk = _load_single_chunk(args)
    truth = chunk.values_matrix()
    masked, eval_mask = mask_random(chunk, args.missing_rate, args.seed)
    records = []
    for method in args.methods:
        started = time.perf_counter()
        completed = _impute_chunk(masked, method, args)
        seconds = time.perf_counter() - started
        has_eval = eval_mask.count > 0
        records.append(
            WindowRecord(
                window=0,
                method=method,
                mae=mae(truth, completed, eval_mask) if has_eval else None,
                mre=mre(truth, completed, eval_mask) if has_eval else None,
                seconds=seconds,
                n_rows=chunk.n_rows,
                n_eval_entries=eval_mask.count,
            )
        )
    report = Path(args.report)
    write_metrics_json(report, records, _config_echo(args))
    write_metrics_csv(report.with_suffix(".csv"), records)
    logger.info("evaluated %s -> %s", ", ".join(args.methods), report)
    return EXIT_OK


def cmd_stream(args: argparse.Namespace) -> int:
    instances = parse_records(args.input, format=args.format)
    windows = list(tumbling_windows(instances, args.window_length))

    reservoir = None
    state = None
    start_window = 0
    checkpoint_dir = Path(args.checkpoint_dir) if args.checkpoint_dir else None
    if args.resume:
        if checkpoint_dir is None:
            raise ConfigurationError("--resume requires --checkpoint-dir")
        reservoir, state, start_window = _load_checkpoint(checkpoint_dir)
    pending = [w for w in windows if w.window_index >= start_window]
    if args.max_windows is not None:
        pending = pending[: args.max_windows]

    eval_rate = args.missing_rate
    truth_by_window = {}
    eval_masks = {}
    run_windows = []
    for window in pending:
        if eval_rate > 0 and window.observed_count() > 0:
            seed = cont.window_seed(args.seed, window.window_index, 2)
            masked, emask = mask_random(window, eval_rate, seed)
            truth_by_window[window.window_index] = window.values_matrix()
            eval_masks[window.window_index] = emask
            run_windows.append(masked)
        else:
            run_windows.append(window)

    run = cont.run_continuous(
        run_windows,
        variant=args.variant,
        config=_train_config(args),
        eta=args.eta,
        k=args.k,
        metric=args.metric,
        initial_reservoir=reservoir,
        initial_state=state,
    )

    records = []
    for result in run.results:
        emask = eval_masks.get(result.window_index)
        scored = (
            emask is not None and emask.count > 0 and result.completed is not None
        )
        truth = truth_by_window.get(result.window_index)
        records.append(
            WindowRecord(
                window=result.window_index,
                method=f"mpin-{args.variant}",
                mae=mae(truth, result.completed, emask) if scored else None,
                mre=mre(truth, result.completed, emask) if scored else None,
                seconds=result.wall_time,
                n_rows=result.n_rows,
                n_eval_entries=emask.count if emask is not None else 0,
            )
        )
    report = Path(args.report)
    write_metrics_json(report, records, _config_echo(args))
    write_metrics_csv(report.with_suffix(".csv"), records)

    if args.imputed_out:
        _write_stream_csv(Path(args.imputed_out), run_windows, run.results)

    if checkpoint_dir is not None:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        next_window = max(start_window, run.next_window)
        _save_checkpoint(checkpoint_dir, run, next_window)
    logger.info("processed %d window(s) -> %s", len(run.results), report)
    return EXIT_OK


def _write_stream_csv(path: Path, windows: Sequence[DataChunk], results) -> None:
    chunks = {w.window_index: w for w in windows}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        dim = windows[0].dim if windows else 0
        writer.writerow(
            ["window", "stream_id", "timestamp"] + [f"v{d}" for d in range(dim)]
        )
        for result in results:
            if result.completed is None:
                continue
            chunk = chunks[result.window_index]
            for i, row in enumerate(chunk.rows):
                writer.writerow(
                    [
                        result.window_index,
                        row.stream_id if row.stream_id is not None else "",
                        "" if row.timestamp is None else repr(row.timestamp),
                    ]
                    + [repr(float(result.completed[i, d])) for d in range(dim)]
                )


def _save_checkpoint(directory: Path, run, next_window: int) -> None:
    progress = {"next_window": next_window}
    if run.final_reservoir is not None:
        save_reservoir(directory / "reservoir.bin", run.final_reservoir)
        progress["reservoir"] = "reservoir.bin"
    if run.final_state is not None:
        save_model_state(directory / "model.bin", run.final_state)
        progress["model"] = "model.bin"
    with open(directory / "progress.json", "w", encoding="utf-8") as fh:
        json.dump(progress, fh, indent=2)
        fh.write("\n")


def _load_checkpoint(directory: Path):
    progress_path = directory / "progress.json"
    if not progress_path.exists():
        raise ConfigurationError(f"no checkpoint found in {directory}")
    with open(progress_path, "r", encoding="utf-8") as fh:
        progress = json.load(fh)
    reservoir = None
    state = None
    if "reservoir" in progress:
        reservoir = load_reservoir(directory / progress["reservoir"])
    if "model" in progress:
        state = load_model_state(directory / progress["model"])
    return reservoir, state, int(progress["next_window"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamfill",
        description="Graph-based missing-value imputation for windowed sensor streams.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    _register_impute(subparsers)
    _register_stream(subparsers)
    _register_eval(subparsers)
    _register_gen(subparsers)
    return parser


def _register_impute(subparsers) -> None:
    p = subparsers.add_parser("impute", help="impute one file as a single window")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=("csv", "ndjson"), default="csv")
    p.add_argument("--method", choices=METHODS, default="mpin")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    _add_graph_flags(p)
    _add_train_flags(p)
    p.set_defaults(handler=cmd_impute)


def _register_stream(subparsers) -> None:
    p = subparsers.add_parser("stream", help="continuous imputation over windows")
    p.add_argument("--input", required=True)
    p.add_argument("--report", required=True, help="metrics JSON path (CSV twin beside it)")
    p.add_argument("--imputed-out", default=None, help="optional CSV of imputed rows")
    p.add_argument("--format", choices=("csv", "ndjson"), default="csv")
    p.add_argument("--variant", choices=cont.VARIANTS, default="DM")
    p.add_argument("--window-length", type=float, required=True)
    p.add_argument("--eta", type=float, default=cont.DEFAULT_ETA)
    p.add_argument(
        "--missing-rate",
        type=float,
        default=0.0,
        help="fraction of observed entries hidden per window for scoring; 0 disables",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-dir", default=None)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--max-windows", type=int, default=None)
    _add_graph_flags(p)
    _add_train_flags(p)
    p.set_defaults(handler=cmd_stream)


def _register_eval(subparsers) -> None:
    p = subparsers.add_parser("eval", help="mask, impute, and compare methods")
    p.add_argument("--input", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=("csv", "ndjson"), default="csv")
    p.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    p.add_argument("--missing-rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    _add_graph_flags(p)
    _add_train_flags(p)
    p.set_defaults(handler=cmd_eval)


def _register_gen(subparsers) -> None:
    p = subparsers.add_parser("gen", help="generate a synthetic stream file")
    p.add_argument("--output", required=True)
    p.add_argument("--streams", type=int, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--window-length", type=float, default=1.0)
    p.add_argument("--missing-rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--correlation", type=float, default=0.8)
    p.set_defaults(handler=cmd_gen)


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ParseError, SchemaError, IngestionError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StreamfillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
