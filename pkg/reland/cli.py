"""
Module for the ``reland`` command line: data generation, training, protocol
evaluation, importance reporting and risk-map export.
"""

from dataclasses import replace
import argparse
import json
import logging
import sys

import pandas as pd

from ._constants import \
    CELL_SIZE_M, DEFAULT_ALPHA, DEFAULT_ENV_FEATURE, DEFAULT_FINE_TUNE_LR, DEFAULT_PERMUTATIONS, \
    DEFAULT_PUSH_P_LR, REPORT_FORMAT_VERSION, RELAND_VERSION, ModelKind, Objective, Protocol, \
    WeightsScheme
from .api import RELand
from .checkpoint import Checkpoint
from .config import apply_values, build_train_config, read_config_file, split_config_values
from .dataset import SyntheticConfig
from .exceptions import RELandException, RELandValidationError, UsageError
from .protocols import render_table

_LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
_STDOUT = "-"


class _ArgumentParser(argparse.ArgumentParser):
    """Raises instead of exiting so usage errors share the diagnostic format."""

    def error(self, message):
        raise UsageError(message)


def _add_common(parser, seeded=False):
    parser.add_argument("--log-level", choices=_LOG_LEVELS, default="WARNING",
                        help="log level of the diagnostics written to stderr")
    if seeded:
        parser.add_argument("--seed", type=int, default=None, help="random seed")


def _add_training(parser):
    parser.add_argument("--model", choices=[kind.value for kind in ModelKind],
                        default=ModelKind.RELAND.value)
    parser.add_argument("--objective", choices=[objective.value for objective in Objective],
                        default=None)
    parser.add_argument("--env-feature", default=DEFAULT_ENV_FEATURE,
                        help="feature column that defines the Easy/Hard environments")
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None, help="RELand decision steps")
    parser.add_argument("--gamma", type=float, default=None, help="RELand mask relaxation")
    parser.add_argument("--feature", default=None, help="column read by lr-single")
    parser.add_argument("--irm-lambda", type=float, default=None)
    parser.add_argument("--push-p", type=float, default=None)


def build_parser():
    """
    The ``reland`` argument parser.
    """
    parser = _ArgumentParser(prog="reland", description="Landmine risk estimation toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {RELAND_VERSION}")
    commands = parser.add_subparsers(dest="command", parser_class=_ArgumentParser)
    commands.required = True

    gen = commands.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--config", default=None)
    gen.add_argument("--out", required=True)
    _add_common(gen, seeded=True)

    train = commands.add_parser("train", help="train a model into a checkpoint")
    train.add_argument("--data", required=True)
    train.add_argument("--val-data", default=None,
                       help="selection data; a 10%% municipality-stratified holdout otherwise")
    train.add_argument("--out", required=True)
    _add_training(train)
    _add_common(train, seeded=True)

    cv = commands.add_parser("cv", help="run a spatial validation protocol")
    cv.add_argument("--protocol", choices=[protocol.value for protocol in Protocol],
                    required=True)
    cv.add_argument("--data", default=None, help="blockcv dataset")
    cv.add_argument("--data-a", default=None, help="blockv/transfercv training region")
    cv.add_argument("--data-b", default=None, help="blockv/transfercv test region")
    cv.add_argument("--ckpt", default=None, help="transfercv starting checkpoint")
    cv.add_argument("--fine-tune-epochs", type=int, default=None)
    cv.add_argument("--fine-tune-lr", type=float, default=DEFAULT_FINE_TUNE_LR)
    cv.add_argument("--report", required=True)
    cv.add_argument("--jobs", type=int, default=1)
    cv.add_argument("--timing", action="store_true", help="keep fold timings in the report")
    _add_training(cv)
    _add_common(cv, seeded=True)

    evaluate = commands.add_parser("eval", help="evaluate a checkpoint")
    evaluate.add_argument("--ckpt", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--report", required=True)
    _add_common(evaluate)

    importance = commands.add_parser("importance", help="global feature importance")
    importance.add_argument("--ckpt", required=True)
    importance.add_argument("--data", required=True)
    importance.add_argument("--out", required=True)
    importance.add_argument("--per-sample", action="store_true",
                            help="average per-sample masks instead of the frozen mask")
    _add_common(importance)

    riskmap = commands.add_parser("riskmap", help="export a GeoJSON/HTML risk map")
    riskmap.add_argument("--ckpt", required=True)
    riskmap.add_argument("--data", required=True)
    riskmap.add_argument("--out", required=True)
    riskmap.add_argument("--html", default=None)
    riskmap.add_argument("--moran", action="store_true", help="add hazard cluster classes")
    riskmap.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    riskmap.add_argument("--perms", type=int, default=DEFAULT_PERMUTATIONS)
    riskmap.add_argument("--weights", choices=[scheme.value for scheme in WeightsScheme],
                         default=WeightsScheme.QUEEN.value)
    riskmap.add_argument("--cell-size", type=float, default=CELL_SIZE_M)
    _add_common(riskmap, seeded=True)
    return parser


def _write_text(path, text):
    if path == _STDOUT:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with open(path, "w", encoding="utf-8") as out_file:
        out_file.write(text)


def _config_values(args):
    return read_config_file(args.config) if getattr(args, "config", None) else {}


def _train_config(args):
    values = _config_values(args)
    objective = None if args.objective is None else Objective(args.objective)
    push_p = args.push_p
    # logistic regressions push with p = 2 unless told otherwise
    if push_p is None and "push.p" not in values and \
            ModelKind(args.model) in (ModelKind.LR, ModelKind.LR_SINGLE):
        push_p = DEFAULT_PUSH_P_LR
    return build_train_config(
        values, objective=objective, seed=args.seed, epochs=args.epochs,
        batch_size=args.batch_size, steps=args.steps, gamma=args.gamma, feature=args.feature,
        irm_lambda=args.irm_lambda, push_p=push_p)


def _run_gen(api, args):
    grouped = split_config_values(_config_values(args))
    config = apply_values(SyntheticConfig, SyntheticConfig(), grouped["synthetic"], "synthetic")
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    dataset = api.datasets.generate_synthetic(config)
    api.datasets.save_csv(dataset, args.out)


def _run_train(api, args):
    config = _train_config(args)
    train_ds = api.datasets.load_csv(args.data, args.env_feature)
    val_ds = api.datasets.load_csv(args.val_data, args.env_feature) if args.val_data else None
    checkpoint = api.trainer.train(ModelKind(args.model), train_ds, config, val_ds=val_ds)
    checkpoint.save(args.out)


def _run_cv(api, args):
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    api.set_jobs(args.jobs)
    config = _train_config(args)
    protocol = Protocol(args.protocol)
    kind = ModelKind(args.model)
    if protocol is Protocol.BLOCK_CV:
        if not args.data:
            raise UsageError("--protocol blockcv needs --data")
        report = api.protocols.block_cv(
            api.datasets.load_csv(args.data, args.env_feature), kind, config)
    else:
        if not (args.data_a and args.data_b):
            raise UsageError(f"--protocol {protocol.value} needs --data-a and --data-b")
        region_a = api.datasets.load_csv(args.data_a, args.env_feature)
        region_b = api.datasets.load_csv(args.data_b, args.env_feature)
        if protocol is Protocol.BLOCK_V:
            report = api.protocols.block_v(region_a, region_b, kind, config)
        else:
            if args.ckpt:
                checkpoint = Checkpoint.load(args.ckpt)
            else:
                checkpoint = api.protocols.block_v(region_a, region_b, kind, config).checkpoint
            report = api.protocols.transfer_cv(checkpoint, region_b, config,
                                               fine_tune_epochs=args.fine_tune_epochs,
                                               fine_tune_lr=args.fine_tune_lr)
    _write_text(args.report, report.to_json(include_timing=args.timing))
    if args.report != _STDOUT:
        print(render_table(report))


def _run_eval(api, args):
    checkpoint = Checkpoint.load(args.ckpt)
    dataset = api.datasets.load_csv(args.data, checkpoint.env_feature)
    metrics = api.trainer.evaluate(checkpoint, dataset)
    document = {
        "format_version": REPORT_FORMAT_VERSION,
        "model_kind": checkpoint.model_kind.value,
        "n_cells": len(dataset),
        "metrics": metrics.to_dict(),
    }
    _write_text(args.report, json.dumps(document, sort_keys=True, indent=2) + "\n")


def _run_importance(api, args):
    checkpoint = Checkpoint.load(args.ckpt)
    dataset = api.datasets.load_csv(args.data, checkpoint.env_feature)
    report = api.trainer.importance(checkpoint, dataset, per_sample=args.per_sample)
    frame = pd.DataFrame(report.rows(checkpoint.feature_names), columns=["feature", "importance"])
    _write_text(args.out, frame.to_csv(index=False, lineterminator="\n", float_format="%.17g"))


def _run_riskmap(api, args):
    checkpoint = Checkpoint.load(args.ckpt)
    dataset = api.datasets.load_csv(args.data, checkpoint.env_feature)
    scores = api.trainer.score(checkpoint, dataset)
    cluster_map = None
    if args.moran:
        weights = api.spatial.build_weights(dataset, WeightsScheme(args.weights))
        seed = 0 if args.seed is None else args.seed
        cluster_map = api.spatial.local_moran(scores, weights, n_permutations=args.perms,
                                              seed=seed, alpha=args.alpha)
    collection = api.spatial.export_riskmap(dataset, scores, cluster_map,
                                            cell_size_m=args.cell_size)
    api.spatial.write_geojson(collection, args.out)
    if args.html:
        api.spatial.export_html(collection, args.html)


_COMMANDS = {
    "gen": _run_gen,
    "train": _run_train,
    "cv": _run_cv,
    "eval": _run_eval,
    "importance": _run_importance,
    "riskmap": _run_riskmap,
}


def _diagnostic(category, err):
    message = " ".join(str(err).split())
    print(f"ERROR {category}: {message}", file=sys.stderr)


def main(argv=None):
    """
    Run the command line with ``argv`` (default ``sys.argv[1:]``) and return
    the exit code: 0 on success, 1 on validation errors, 2 on runtime errors.
    """
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level, stream=sys.stderr,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        api = RELand(log_level=getattr(logging, args.log_level))
        _COMMANDS[args.command](api, args)
    except RELandValidationError as err:
        _diagnostic(err.category, err)
        return 1
    except RELandException as err:
        _diagnostic(err.category, err)
        return 2
    except OSError as err:
        _diagnostic("io", err)
        return 2
    except Exception as err:  # pylint: disable=broad-except
        _diagnostic("runtime", err)
        return 2
    return 0
