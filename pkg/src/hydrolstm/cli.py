"""Batch command-line front end.

Subcommands cover the full experiment pipeline: synthesize data, prepare
(clean/segment/chunk) a raw CSV, train a model, sweep per-gage models,
analyze importance, select the top gages, evaluate, and predict.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Each failure writes one machine-parsable `category: reason` line to stderr.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import evaluation, importance, pipeline, synthetic, training
from .errors import DataError, DivergenceError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config_keys_epilog():
    lines = ["run config file keys (flat `key = value`):"]
    for key, doc in training.RUN_CONFIG_KEYS.items():
        lines.append(f"  {key:<22}{doc}")
    return "\n".join(lines)


def build_parser():
    parser = _Parser(
        prog="hydrolstm",
        description="LSTM rainfall-runoff modeling: train, sweep, select, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic watershed dataset")
    p.add_argument("--config", help="synth config file (key = value); defaults used if omitted")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("prepare", help="impute short gaps, split at long ones, chunk")
    p.add_argument("--in", dest="input", required=True, help="raw series CSV")
    p.add_argument("--out", required=True, help="output segment directory")
    p.add_argument("--max-gap", type=int, default=pipeline.DEFAULT_MAX_GAP_STEPS,
                   help="largest imputable gap in steps (default 6 = 90 minutes)")
    p.add_argument("--chunk", type=int, default=pipeline.DEFAULT_CHUNK_LEN,
                   help="max segment length in steps (default 2048)")

    p = sub.add_parser(
        "train", help="train a model on selected gages",
        epilog=_config_keys_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--data", required=True, help="prepared segment directory")
    p.add_argument("--config", help="run config file; paper defaults if omitted")
    p.add_argument("--gages", required=True,
                   help="comma-separated gage names, a file with one per line, or 'all'")
    p.add_argument("--out", required=True, help="output directory (model.json, report.json)")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("sweep", help="per-gage training error table (single-gage models)")
    p.add_argument("--data", required=True, help="prepared segment directory")
    p.add_argument("--config", help="run config file; sweep protocol is forced on top")
    p.add_argument("--out", required=True, help="output error table CSV")
    p.add_argument("--jobs", type=int, default=1, help="parallel trainings (default 1)")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("importance", help="weight norms of a trained model + correlations")
    p.add_argument("--model", required=True, help="model checkpoint JSON")
    p.add_argument("--errors", required=True, help="sweep error table CSV")
    p.add_argument("--out", required=True, help="output importance table CSV")
    p.add_argument("--coords", help="optional gage coordinates CSV (gage,x,y with an outlet row)")

    p = sub.add_parser("select", help="k gages with smallest sweep error")
    p.add_argument("--errors", required=True, help="sweep error table CSV")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", help="write the list here (one gage per line); default stdout")

    p = sub.add_parser("eval", help="NSE/RMSE per split and per test event")
    p.add_argument("--model", required=True, help="model checkpoint JSON")
    p.add_argument("--data", required=True, help="prepared segment directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--exclude-window", nargs=2, action="append", metavar=("START", "END"),
                   default=None, help="drop test points in [START, END]; repeatable")
    p.add_argument("--event-threshold", type=float,
                   default=evaluation.DEFAULT_EVENT_THRESHOLD_CMS,
                   help="minimum event peak in cms (default 30)")

    p = sub.add_parser("predict", help="discharge series from a rain CSV")
    p.add_argument("--model", required=True, help="model checkpoint JSON")
    p.add_argument("--rain", required=True, help="rain CSV with the model's gage channels")
    p.add_argument("--out", required=True, help="output CSV (timestamp, predicted)")
    return parser


def _parse_gages(spec_text, available):
    if spec_text == "all":
        return [c for c in available if c != synthetic.DISCHARGE_CHANNEL]
    if os.path.exists(spec_text):
        with open(spec_text, encoding="utf-8") as fh:
            gages = [line.strip() for line in fh if line.strip()]
    else:
        gages = [tok.strip() for tok in spec_text.split(",") if tok.strip()]
    if not gages:
        raise UsageError(f"--gages {spec_text!r} names no gages")
    return gages


def _load_split(data_dir, config):
    segments = pipeline.read_segments_dir(data_dir)
    return pipeline.split_by_year(
        segments, config.train_end_year, config.val_year, config.test_year
    )


def cmd_synth(args):
    config = synthetic.SynthConfig.from_file(args.config) if args.config else synthetic.SynthConfig()
    if args.seed is not None:
        config.seed = args.seed
    frame, manifest = synthetic.generate(config)
    os.makedirs(args.out, exist_ok=True)
    data_csv = os.path.join(args.out, "data.csv")
    pipeline.write_csv(frame, data_csv)
    synthetic.write_manifest(
        manifest,
        os.path.join(args.out, "relevance.csv"),
        os.path.join(args.out, "manifest.json"),
    )
    print(f"wrote {data_csv} ({frame.n_steps} steps, {len(frame.channels)} channels)")
    return EXIT_OK


def cmd_prepare(args):
    frame = pipeline.load_csv(args.input)
    segments = pipeline.impute_and_split(frame, args.max_gap)
    chunks = pipeline.chunk(segments, args.chunk)
    os.makedirs(args.out, exist_ok=True)
    pipeline.write_segments_dir(chunks, args.out)
    total = sum(s.n_steps for s in chunks)
    print(f"wrote {len(chunks)} segments ({total} clean steps) to {args.out}")
    return EXIT_OK


def cmd_train(args):
    config = training.RunConfig.from_file(args.config) if args.config else training.RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    segments = pipeline.read_segments_dir(args.data)
    if not segments:
        raise DataError(f"{args.data}: no segments")
    gages = _parse_gages(args.gages, segments[0].channels)
    split = pipeline.split_by_year(
        segments, config.train_end_year, config.val_year, config.test_year
    )
    model, report = training.train_model(config, split, gages)
    os.makedirs(args.out, exist_ok=True)
    model.save(os.path.join(args.out, "model.json"))
    report.save(os.path.join(args.out, "report.json"))
    best = report.best_epoch
    if report.val_scores:
        print(f"best epoch {best} validation {config.val_metric} {report.val_scores[best]:.6g}")
    else:
        print(f"best epoch {best} training loss {report.train_losses[best]:.6g}")
    return EXIT_OK


def cmd_sweep(args):
    config = training.RunConfig.from_file(args.config) if args.config else training.RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    segments = pipeline.read_segments_dir(args.data)
    if not segments:
        raise DataError(f"{args.data}: no segments")
    gages = [c for c in segments[0].channels if c != config.discharge_channel]
    split = pipeline.split_by_year(
        segments, config.train_end_year, config.val_year, config.test_year
    )
    results = importance.gage_sweep(gages, split, config, jobs=args.jobs)
    importance.write_sweep_csv(results, args.out)
    n_div = sum(r.diverged for r in results.values())
    print(f"swept {len(results)} gages ({n_div} diverged) -> {args.out}")
    return EXIT_OK


def cmd_importance(args):
    model = training.TrainedModel.load(args.model)
    errors = importance.read_sweep_csv(args.errors)
    coords = importance.read_coordinates_csv(args.coords) if args.coords else None
    table = importance.build_importance_table(model, errors, coords)
    table.write_csv(args.out)
    stats = importance.norm_error_correlations(table)
    for norm, vals in stats.items():
        print(
            f"{norm} pearson_r={vals['pearson_r']:.6g} pearson_p={vals['pearson_p']:.6g} "
            f"spearman_rho={vals['spearman_rho']:.6g} spearman_p={vals['spearman_p']:.6g}"
        )
    if coords is not None:
        dist = importance.distance_error_correlation(table)
        print(f"distance pearson_r={dist['pearson_r']:.6g} pearson_p={dist['pearson_p']:.6g}")
    return EXIT_OK


def cmd_select(args):
    errors = importance.read_sweep_csv(args.errors)
    chosen = importance.select_top_k(errors, args.k)
    text = "\n".join(chosen) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args):
    model = training.TrainedModel.load(args.model)
    split = _load_split(args.data, model.config)
    exclude = args.exclude_window
    report, per_step = evaluation.evaluate_model(
        model, split, threshold=args.event_threshold, exclude_windows=exclude
    )
    os.makedirs(args.out, exist_ok=True)
    evaluation.write_report_csv(report, os.path.join(args.out, "report.csv"))
    evaluation.write_events_csv(report, os.path.join(args.out, "events.csv"))
    for name, entry in per_step.items():
        evaluation.write_predictions_csv(
            entry, os.path.join(args.out, f"predictions_{name}.csv")
        )
    for row in report.splits:
        print(f"{row.dataset}: rmse={row.rmse:.6g} nse={row.nse:.6g} n={row.n_points}")
    return EXIT_OK


def cmd_predict(args):
    model = training.TrainedModel.load(args.model)
    frame = pipeline.load_csv(args.rain)
    timestamps, series = training.predict(model, frame)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("timestamp,predicted\n")
        for i in range(timestamps.shape[0]):
            stamp = np.datetime_as_string(timestamps[i], unit="s")
            fh.write(f"{stamp},{float(series[i])!r}\n")
    print(f"wrote {timestamps.shape[0]} predictions to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "importance": cmd_importance,
    "select": cmd_select,
    "eval": cmd_eval,
    "predict": cmd_predict,
}


def main(argv=None):
    logging.basicConfig(level=os.environ.get("HYDROLSTM_LOGLEVEL", "WARNING"))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as err:
        print(f"numeric: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, json.JSONDecodeError) as err:
        print(f"data: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
