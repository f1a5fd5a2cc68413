"""Command-line interface: ``nc-ensemble {gen,train,evaluate,report,compare,sweep}``.

Exit codes: 0 on success, 2 for usage or configuration errors, and 1 for any other error.
"""

from __future__ import annotations

import argparse
import logging
from logging import getLogger
from pathlib import Path
from typing import Optional, Union
from collections.abc import Sequence

from attr import evolve

from nc_ensemble import __version__
from nc_ensemble.calibration import DEFAULT_BINS, WEIGHTINGS, EvaluationReport, evaluate
from nc_ensemble.config import (
    DEFAULT_TEST_FRACTION,
    MODES,
    RunConfig,
    get_worker_count,
    parse_int_list,
)
from nc_ensemble.data import BlobSpec, Dataset, gen_blobs, load_csv, save_csv, shuffle_split
from nc_ensemble.ensemble import Ensemble, TrainingLog, predict, train
from nc_ensemble.errors import ConfigurationError, NCEnsembleError, ShapeError
from nc_ensemble.experiments import SweepSettings, run_sweep
from nc_ensemble.network import ACTIVATIONS, SgdConfig
from nc_ensemble.report import DEFAULT_FLAG_THRESHOLD, build_compare_table, write_report_files
from nc_ensemble.storage import (
    atomic_write_text,
    dump_json,
    format_float,
    read_json,
    write_csv,
    write_json,
)

ENSEMBLE_FILE = 'ensemble.json'
TRAINING_LOG_FILE = 'training_log.csv'
TRAINING_LOG_HEADER = ['epoch', 'train_loss', 'eval_acc', 'eval_ece']

logger = getLogger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _check_args(parser, args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else (0 if e.code is None else 2)

    _configure_logging(args.verbose, args.quiet)
    try:
        args.func(args)
    except ConfigurationError as e:
        logger.error(f'Configuration error: {e}')
        return 2
    except (NCEnsembleError, OSError) as e:
        logger.error(f'{type(e).__name__}: {e}')
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='nc-ensemble',
        description='Train NC-regularized ensembles and evaluate their calibration',
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='Show debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='Only show warnings')
    commands = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    gen = commands.add_parser('gen', help='Generate a synthetic dataset as CSV')
    gen.add_argument('--kind', choices=['blobs'], default='blobs')
    gen.add_argument('--classes', type=positive_int, required=True, help='Number of classes K')
    gen.add_argument('--per-class', type=positive_int, required=True, help='Samples per class')
    gen.add_argument('--dim', type=positive_int, default=2, help='Feature dimension')
    gen.add_argument('--std', type=positive_float, default=1.0, help='Cluster standard deviation')
    gen.add_argument('--spread', type=positive_float, default=3.0, help='Center coordinate range')
    gen.add_argument('--seed', type=non_negative_int, default=0)
    gen.add_argument('--out', type=Path, required=True, help='Output CSV path')
    gen.add_argument('--test-out', type=Path, help='Also write a seeded test split here')
    gen.add_argument(
        '--test-fraction', type=unit_fraction, default=DEFAULT_TEST_FRACTION,
        help='Fraction of samples for --test-out',
    )  # fmt: skip
    gen.set_defaults(func=cmd_gen)

    train_cmd = commands.add_parser('train', help='Train a single network, pure or NC ensemble')
    train_cmd.add_argument('--config', type=Path, help='JSON run config; flags override it')
    train_cmd.add_argument('--data', help='Training CSV')
    train_cmd.add_argument('--eval-data', help='CSV to evaluate after each epoch')
    train_cmd.add_argument('--out', type=Path, required=True, help='Model output directory')
    train_cmd.add_argument('--mode', choices=MODES)
    train_cmd.add_argument('--members', type=positive_int, help='Ensemble size M')
    train_cmd.add_argument('--lambda', dest='nc_lambda', type=non_negative_float)
    train_cmd.add_argument(
        '--force-lambda', type=non_negative_float,
        help='Use this lambda regardless of mode (skips the mode check)',
    )  # fmt: skip
    train_cmd.add_argument('--seed', type=non_negative_int)
    train_cmd.add_argument('--epochs', type=non_negative_int)
    train_cmd.add_argument('--lr', type=positive_float)
    train_cmd.add_argument('--momentum', type=float)
    train_cmd.add_argument('--batch-size', type=positive_int)
    train_cmd.add_argument('--layers', type=int_list, help='Layer sizes, e.g. 2,32,5')
    train_cmd.add_argument('--activation', choices=ACTIVATIONS)
    train_cmd.add_argument('--test-fraction', type=unit_fraction, help='Split for blob configs')
    _add_label_col(train_cmd)
    _add_calibration_args(train_cmd, defaults=False)
    train_cmd.set_defaults(func=cmd_train)

    evaluate_cmd = commands.add_parser('evaluate', help='Evaluate a trained model on a dataset')
    evaluate_cmd.add_argument('--model', type=Path, required=True, help='Model directory')
    evaluate_cmd.add_argument('--data', required=True, help='Evaluation CSV')
    evaluate_cmd.add_argument('--out', type=Path, help='metrics.json path (default: stdout)')
    _add_label_col(evaluate_cmd)
    _add_calibration_args(evaluate_cmd, defaults=True)
    evaluate_cmd.set_defaults(func=cmd_evaluate)

    report = commands.add_parser('report', help='Write reliability/histogram CSVs and an SVG')
    report.add_argument('--metrics', type=Path, required=True, help='metrics.json from evaluate')
    report.add_argument('--out-dir', type=Path, help='Output directory (default: metrics dir)')
    report.add_argument('--svg', type=Path, help='Also render charts to this SVG file')
    report.set_defaults(func=cmd_report)

    compare = commands.add_parser('compare', help='Compare two or more evaluated runs')
    compare.add_argument('metrics', type=Path, nargs='+', help='metrics.json files')
    compare.add_argument('--labels', type=str_list, help='Comma-separated run labels')
    compare.add_argument('--per-class', action='store_true', help='Add per-class columns')
    compare.add_argument(
        '--flag-threshold', type=non_negative_float, default=DEFAULT_FLAG_THRESHOLD,
        help='Flag classes where |conf - acc| exceeds this',
    )  # fmt: skip
    compare.add_argument('--out', type=Path, help='Also write the table as CSV')
    compare.set_defaults(func=cmd_compare)

    sweep = commands.add_parser('sweep', help='Compare single, pure and NC models over seeds')
    sweep.add_argument('--seeds', type=int_list, default=[0, 1, 2])
    sweep.add_argument('--members', type=int_list, default=[3, 7, 11], help='Member counts M')
    sweep.add_argument('--lambda', dest='nc_lambda', type=positive_float, default=0.1)
    sweep.add_argument('--classes', type=positive_int, default=5)
    sweep.add_argument('--per-class', type=positive_int, default=200)
    sweep.add_argument('--dim', type=positive_int, default=2)
    sweep.add_argument('--std', type=positive_float, default=1.0)
    sweep.add_argument('--spread', type=positive_float, default=3.0)
    sweep.add_argument('--hidden', type=int_list, default=[32], help='Hidden layer sizes')
    sweep.add_argument('--activation', choices=ACTIVATIONS, default='relu')
    sweep.add_argument('--epochs', type=non_negative_int, default=30)
    sweep.add_argument('--lr', type=positive_float, default=0.05)
    sweep.add_argument('--batch-size', type=positive_int, default=32)
    sweep.add_argument('--test-fraction', type=unit_fraction, default=DEFAULT_TEST_FRACTION)
    sweep.add_argument('--out', type=Path, help='Also write per-run results as CSV')
    _add_calibration_args(sweep, defaults=True)
    sweep.set_defaults(func=cmd_sweep)
    return parser


def cmd_gen(args: argparse.Namespace):
    spec = BlobSpec(
        class_count=args.classes,
        per_class=args.per_class,
        dim=args.dim,
        center_spread=args.spread,
        cluster_std=args.std,
        seed=args.seed,
    )
    dataset = gen_blobs(spec)
    if args.test_out is None:
        save_csv(dataset, args.out)
        logger.info(f'Wrote {len(dataset)} samples to {args.out}')
        return

    train_set, test_set = shuffle_split(dataset, args.test_fraction, args.seed)
    save_csv(train_set, args.out)
    save_csv(test_set, args.test_out)
    logger.info(
        f'Wrote {len(train_set)} training samples to {args.out} and {len(test_set)} test '
        f'samples to {args.test_out}'
    )


def cmd_train(args: argparse.Namespace):
    overrides = {
        'mode': args.mode,
        'layer_sizes': args.layers,
        'activation': args.activation,
        'member_count': args.members,
        'nc_lambda': args.nc_lambda,
        'seed': args.seed,
        'epochs': args.epochs,
        'learning_rate': args.lr,
        'momentum': args.momentum,
        'batch_size': args.batch_size,
        'bins': args.bins,
        'ece_weighting': args.ece_weighting,
        'train_data': args.data,
        'eval_data': args.eval_data,
        'test_fraction': args.test_fraction,
        'forced_lambda': args.force_lambda,
    }
    if args.config:
        config = RunConfig.from_file(args.config, **overrides)
    else:
        config = RunConfig.from_dict({}, **overrides)

    train_set, eval_set = load_training_data(config, args.label_col)
    layer_sizes = config.resolve_layer_sizes(train_set.dim, train_set.class_count)
    ensemble_config = config.to_ensemble_config(get_worker_count(config.member_count))
    ensemble, log = train(
        train_set,
        ensemble_config,
        layer_sizes,
        config.activation,
        eval_set,
        config.bins,
        config.ece_weighting,
    )
    write_model(ensemble, log, args.out)


def cmd_evaluate(args: argparse.Namespace):
    ensemble = load_model(args.model)
    dataset = load_csv(
        args.data,
        args.label_col,
        class_names=ensemble.class_names,
        class_count=ensemble.class_count,
    )
    if dataset.dim != ensemble.input_dim:
        raise ShapeError(
            f'{args.data} has {dataset.dim} features; the model expects {ensemble.input_dim}'
        )

    report = evaluate(
        predict(ensemble, dataset.features),
        dataset.labels,
        args.bins,
        ensemble.class_count,
        args.ece_weighting,
        ensemble.class_names,
    )
    run = {
        'mode': ensemble.mode,
        'M': ensemble.config.member_count,
        'lambda': ensemble.config.nc_lambda,
    }
    report = evolve(report, run=run)
    logger.info(f'{args.data}: n={report.n}, accuracy={report.accuracy:.4f}, ece={report.ece:.4f}')
    if args.out is None:
        print(dump_json(report.to_dict()), end='')
    else:
        write_json(args.out, report.to_dict())
        logger.info(f'Wrote metrics to {args.out}')


def cmd_report(args: argparse.Namespace):
    report = load_metrics(args.metrics)
    out_dir = args.out_dir or args.metrics.parent
    write_report_files(report, out_dir, args.svg)


def cmd_compare(args: argparse.Namespace):
    labels = args.labels or [_run_label(path) for path in args.metrics]
    runs = [(label, load_metrics(path)) for label, path in zip(labels, args.metrics)]
    table = build_compare_table(runs, args.flag_threshold)
    print(table.to_text(args.per_class), end='')
    if args.out:
        atomic_write_text(args.out, table.to_csv(args.per_class))
        logger.info(f'Wrote comparison to {args.out}')


def cmd_sweep(args: argparse.Namespace):
    settings = SweepSettings(
        blobs=BlobSpec(
            class_count=args.classes,
            per_class=args.per_class,
            dim=args.dim,
            center_spread=args.spread,
            cluster_std=args.std,
        ),
        hidden_sizes=args.hidden,
        activation=args.activation,
        nc_lambda=args.nc_lambda,
        sgd=SgdConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size),
        bins=args.bins,
        weighting=args.ece_weighting,
        test_fraction=args.test_fraction,
        workers=get_worker_count(max(args.members)),
    )
    result = run_sweep(args.seeds, args.members, settings)
    print(result.to_text(), end='')
    if args.out:
        atomic_write_text(args.out, result.to_csv())
        logger.info(f'Wrote sweep results to {args.out}')


def load_training_data(
    config: RunConfig, label_column: Union[int, str] = -1
) -> tuple[Dataset, Optional[Dataset]]:
    """Get ``(train, eval)`` datasets from CSV paths, or from a generated, split blob dataset"""
    if config.train_data:
        train_set = load_csv(config.train_data, label_column)
        eval_set = None
        if config.eval_data:
            eval_set = load_csv(
                config.eval_data,
                label_column,
                class_names=train_set.class_names,
                class_count=train_set.class_count,
            )
        return train_set, eval_set
    if config.blobs is not None:
        return shuffle_split(gen_blobs(config.blobs), config.test_fraction, config.seed)
    raise ConfigurationError(
        'no training data; pass --data or add a "blobs" config section', field='data'
    )


def write_model(ensemble: Ensemble, log: TrainingLog, out_dir: Path | str) -> Path:
    """Write ``ensemble.json`` and ``training_log.csv`` to a model directory"""
    out_dir = Path(out_dir)
    write_json(out_dir / ENSEMBLE_FILE, ensemble.to_dict())
    write_csv(
        out_dir / TRAINING_LOG_FILE,
        TRAINING_LOG_HEADER,
        (
            [
                str(r.epoch),
                format_float(r.train_loss),
                format_float(r.eval_acc),
                format_float(r.eval_ece),
            ]
            for r in log.records
        ),
    )
    logger.info(f'Saved {ensemble.mode} model to {out_dir}')
    return out_dir


def load_model(model_dir: Path | str) -> Ensemble:
    path = Path(model_dir) / ENSEMBLE_FILE
    ensemble = Ensemble.from_dict(read_json(path))
    workers = get_worker_count(ensemble.config.member_count)
    return evolve(ensemble, config=evolve(ensemble.config, workers=workers))


def load_metrics(path: Path | str) -> EvaluationReport:
    return EvaluationReport.from_dict(read_json(path))


# Argument types
# --------------


def positive_int(value: str) -> int:
    number = _parse(value, int)
    if number < 1:
        raise argparse.ArgumentTypeError(f'must be >= 1, got {value}')
    return number


def non_negative_int(value: str) -> int:
    number = _parse(value, int)
    if number < 0:
        raise argparse.ArgumentTypeError(f'must be >= 0, got {value}')
    return number


def positive_float(value: str) -> float:
    number = _parse(value, float)
    if not number > 0:
        raise argparse.ArgumentTypeError(f'must be > 0, got {value}')
    return number


def non_negative_float(value: str) -> float:
    number = _parse(value, float)
    if not number >= 0:
        raise argparse.ArgumentTypeError(f'must be >= 0, got {value}')
    return number


def unit_fraction(value: str) -> float:
    number = _parse(value, float)
    if not 0 < number < 1:
        raise argparse.ArgumentTypeError(f'must be strictly between 0 and 1, got {value}')
    return number


def int_list(value: str) -> list[int]:
    try:
        numbers = parse_int_list(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected integers like 3,7,11, got {value!r}') from None
    if not numbers or any(n < 0 for n in numbers):
        raise argparse.ArgumentTypeError(f'expected non-negative integers, got {value!r}')
    return numbers


def str_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(',')]


def label_column(value: str) -> Union[int, str]:
    """A column index (possibly negative) or a header name"""
    try:
        return int(value)
    except ValueError:
        return value


def _parse(value: str, parse_type: type):
    try:
        return parse_type(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f'not a valid {parse_type.__name__}: {value!r}') from None


def _add_label_col(parser: argparse.ArgumentParser):
    parser.add_argument(
        '--label-col', type=label_column, default=-1,
        help='Label column index or header name (default: last column)',
    )  # fmt: skip


def _add_calibration_args(parser: argparse.ArgumentParser, defaults: bool):
    """Add ``--bins`` and ``--ece-weighting``; without defaults, unset flags fall back to config"""
    parser.add_argument(
        '--bins', type=positive_int, default=DEFAULT_BINS if defaults else None,
        help=f'Number of confidence bins Q (default: {DEFAULT_BINS})',
    )  # fmt: skip
    parser.add_argument(
        '--ece-weighting', choices=WEIGHTINGS, default='standard' if defaults else None,
        help='ECE bin weighting: standard (|C_i| / n) or paper (|C_i| / Q)',
    )  # fmt: skip


def _check_args(parser: argparse.ArgumentParser, args: argparse.Namespace):
    if args.command == 'compare':
        if len(args.metrics) < 2:
            parser.error('compare needs at least 2 metrics files')
        if args.labels and len(args.labels) != len(args.metrics):
            parser.error(f'got {len(args.labels)} labels for {len(args.metrics)} metrics files')
    if args.command == 'sweep' and (not args.members or min(args.members) < 1):
        parser.error('--members values must be >= 1')


def _configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(format='%(levelname)s %(name)s: %(message)s')
    logging.getLogger('nc_ensemble').setLevel(level)


def _run_label(path: Path) -> str:
    """Label a run by its file name, or by its directory if the file is named ``metrics.json``"""
    return path.parent.name if path.stem == 'metrics' and path.parent.name else path.stem


if __name__ == '__main__':
    raise SystemExit(main())
