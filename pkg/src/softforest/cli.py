"""Command-line interface: train, evaluate, gradcheck, predict.

Exit codes: 0 success, 1 runtime failure, 2 usage error. All randomness
flows from --seed; with --threads 1 two identical invocations produce
bit-identical model files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

from threadpoolctl import threadpool_limits

from . import model_io
from .attention import GATE_KINDS, softmax
from .data import (
    BINARY,
    MULTICLASS,
    REGRESSION,
    DataMatrix,
    DatasetSchema,
    apply_standardizer,
    fit_standardizer,
    load_csv,
    load_feature_csv,
    read_csv_header,
    split,
    standardize_rows,
)
from .backward import finite_difference_check, gradcheck_model
from .errors import SoftForestError
from .forest import sigmoid
from .objective import TaskBinding
from .optim import OPTIMIZER_KINDS
from .trainer import TrainConfig, evaluate, predict_rows, train

GRADCHECK_THRESHOLD = 1e-4


def _target_flag(value: str) -> int | str:
    """NAME_OR_INDEX: digit strings are 0-based column indices."""
    try:
        return int(value)
    except ValueError:
        return value


def _split_flag(value: str) -> tuple[float, float, float]:
    parts = value.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse fractions {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softforest",
        description="Differentiable decision forest with tree attention",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model on a CSV dataset")
    tr.add_argument("--data", help="single CSV, split by --split")
    tr.add_argument("--train", dest="train_path", help="pre-split training CSV")
    tr.add_argument("--val", dest="val_path", help="pre-split validation CSV")
    tr.add_argument("--test", dest="test_path", help="pre-split test CSV")
    tr.add_argument(
        "--task", required=True, choices=(REGRESSION, BINARY, MULTICLASS)
    )
    tr.add_argument("--classes", type=int, default=0, help="class count (multiclass)")
    tr.add_argument("--target", required=True, type=_target_flag)
    tr.add_argument("--split", type=_split_flag, default=(0.7, 0.15, 0.15))
    tr.add_argument("--trees", type=int, default=1024)
    tr.add_argument("--depth", type=int, default=5)
    tr.add_argument("--batch", type=int, default=512)
    tr.add_argument("--lr", type=float, default=0.002)
    tr.add_argument("--optimizer", choices=OPTIMIZER_KINDS, default="qhadam")
    tr.add_argument("--attention", choices=GATE_KINDS, default="sigmoid")
    tr.add_argument("--reduction", type=int, default=16)
    tr.add_argument("--epochs", type=int, default=256)
    tr.add_argument("--patience", type=int, default=16)
    tr.add_argument("--seed", type=int, default=42)
    tr.add_argument("--threads", type=int, default=1)
    tr.add_argument("--out", required=True, help="model file path")
    tr.add_argument("--metrics", help="metrics file path (default: OUT.metrics.json)")

    ev = sub.add_parser("evaluate", help="evaluate a saved model on a CSV")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--batch", type=int, default=512)
    ev.add_argument("--threads", type=int, default=1)

    gc = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--eps", type=float, default=1e-5)
    gc.add_argument("--task", choices=(REGRESSION, BINARY, MULTICLASS), default=REGRESSION)
    gc.add_argument("--classes", type=int, default=3)
    gc.add_argument("--trees", type=int, default=4)
    gc.add_argument("--depth", type=int, default=3)
    gc.add_argument("--features", type=int, default=10)
    gc.add_argument("--batch", type=int, default=8)
    gc.add_argument("--attention", choices=GATE_KINDS, default="sigmoid")
    gc.add_argument("--reduction", type=int, default=2)
    gc.add_argument("--threads", type=int, default=1)

    pr = sub.add_parser("predict", help="write predictions for a feature CSV")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--batch", type=int, default=512)
    pr.add_argument("--threads", type=int, default=1)
    return parser


def _binding_for(task: str, classes: int, parser_error) -> TaskBinding:
    if task == MULTICLASS:
        if classes < 2:
            parser_error("--task multiclass requires --classes >= 2")
        return TaskBinding.multiclass(classes)
    return TaskBinding(task)


def _load_splits(args, parser_error) -> tuple[DatasetSchema, DataMatrix, DataMatrix, DataMatrix]:
    pre_split = (args.train_path, args.val_path, args.test_path)
    if args.data and any(pre_split):
        parser_error("--data and --train/--val/--test are mutually exclusive")
    if args.data:
        header = read_csv_header(args.data)
        schema = DatasetSchema(
            feature_count=len(header) - 1,
            target_kind=args.task,
            target_column=args.target,
            classes=args.classes if args.task == MULTICLASS else 0,
        )
        full = load_csv(args.data, schema)
        return (schema, *split(full, args.split, args.seed))
    if not all(pre_split):
        parser_error("provide --data or all of --train/--val/--test")
    header = read_csv_header(args.train_path)
    schema = DatasetSchema(
        feature_count=len(header) - 1,
        target_kind=args.task,
        target_column=args.target,
        classes=args.classes if args.task == MULTICLASS else 0,
    )
    return (
        schema,
        load_csv(args.train_path, schema),
        load_csv(args.val_path, schema),
        load_csv(args.test_path, schema),
    )


def cmd_train(args, parser_error) -> int:
    binding = _binding_for(args.task, args.classes, parser_error)
    schema, train_raw, val_raw, test_raw = _load_splits(args, parser_error)
    standardizer = fit_standardizer(train_raw)
    config = TrainConfig(
        num_trees=args.trees,
        depth=args.depth,
        batch_size=args.batch,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        attention=args.attention,
        reduction=args.reduction,
        max_epochs=args.epochs,
        patience=min(args.patience, args.epochs),
        seed=args.seed,
        deterministic=args.threads == 1,
    )
    started = time.perf_counter()
    result = train(
        config,
        apply_standardizer(standardizer, train_raw),
        apply_standardizer(standardizer, val_raw),
        apply_standardizer(standardizer, test_raw),
        binding,
    )
    wall_time = time.perf_counter() - started

    model_io.save_model(args.out, schema, standardizer, result.forest, result.attention)
    metrics_path = args.metrics or f"{args.out}.metrics.json"
    report = result.report
    metrics = {
        "config": {
            "task": args.task,
            "classes": schema.classes,
            "trees": config.num_trees,
            "depth": config.depth,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "optimizer": config.optimizer,
            "attention": config.attention,
            "reduction": config.reduction,
            "max_epochs": config.max_epochs,
            "patience": config.patience,
            "seed": config.seed,
            "deterministic": config.deterministic,
        },
        "history": {
            "train_losses": report.train_losses,
            "val_metrics": report.val_metrics,
            "epoch_seconds": report.epoch_seconds,
        },
        "best_epoch": report.best_epoch,
        "test_metric": report.test_metric,
        "metric_name": binding.metric_name,
        "parameter_count": report.parameter_count,
        "model_bytes": report.model_bytes,
        "batch_buffer_bytes": report.batch_buffer_bytes,
        "wall_time_seconds": wall_time,
    }
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2)
        fh.write("\n")
    print(f"test {binding.metric_name} {report.test_metric:.17g}")
    return 0


def cmd_evaluate(args) -> int:
    loaded = model_io.load_model(args.model)
    data = load_csv(args.data, loaded.schema)
    value = evaluate(
        loaded.forest,
        loaded.attention,
        apply_standardizer(loaded.standardizer, data),
        loaded.binding,
        args.batch,
    )
    print(f"{loaded.binding.metric_name} {value:.17g}")
    return 0


def cmd_gradcheck(args, parser_error) -> int:
    binding = _binding_for(args.task, args.classes, parser_error)
    forest, attention, batch = gradcheck_model(
        num_trees=args.trees,
        depth=args.depth,
        num_features=args.features,
        batch_size=args.batch,
        binding=binding,
        reduction=args.reduction,
        gate_kind=args.attention,
        seed=args.seed,
    )
    report = finite_difference_check(
        forest, attention, batch, binding, epsilon=args.eps
    )
    print(report.format_table())
    if report.passed(GRADCHECK_THRESHOLD):
        print(f"gradcheck passed (threshold {GRADCHECK_THRESHOLD:g})")
        return 0
    failing = ", ".join(report.failing_groups(GRADCHECK_THRESHOLD))
    print(f"gradcheck FAILED for: {failing}", file=sys.stderr)
    return 1


def cmd_predict(args) -> int:
    loaded = model_io.load_model(args.model)
    rows = load_feature_csv(
        args.data, loaded.schema.feature_count, loaded.schema.target_column
    )
    pred = predict_rows(
        loaded.forest,
        loaded.attention,
        standardize_rows(loaded.standardizer, rows),
        args.batch,
    )
    binding = loaded.binding
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if binding.kind == REGRESSION:
            writer.writerow(["prediction"])
            for value in pred[:, 0]:
                writer.writerow([repr(float(value))])
        elif binding.kind == BINARY:
            writer.writerow(["class", "probability"])
            probs = sigmoid(pred[:, 0])
            for logit, prob in zip(pred[:, 0], probs):
                writer.writerow([int(logit > 0), repr(float(prob))])
        else:
            writer.writerow(["class"] + [f"p{c}" for c in range(binding.classes)])
            probs = softmax(pred)
            for row in probs:
                writer.writerow([int(row.argmax())] + [repr(float(p)) for p in row])
    print(f"wrote {len(pred)} predictions to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    def parser_error(message: str):
        parser.error(message)  # raises SystemExit(2)

    try:
        with threadpool_limits(limits=args.threads):
            if args.command == "train":
                return cmd_train(args, parser_error)
            if args.command == "evaluate":
                return cmd_evaluate(args)
            if args.command == "gradcheck":
                return cmd_gradcheck(args, parser_error)
            return cmd_predict(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except (SoftForestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())
