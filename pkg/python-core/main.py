"""
SA3 - Command Line
Dataset generation, training, evaluation and the attention ablation.

Commands:
    generate   write <out>/train and <out>/test dataset splits
    train      train on <data>/train; write checkpoint, metrics and config
    eval       score a checkpoint on <data>/test; write report and CSV tables
    ablate     train/evaluate every attention variant per seed; write the table

Exit codes:
    0  success
    2  usage, configuration, validation or missing-file error
    3  numerical failure (non-finite loss)

Logging goes to stderr (level from $SA3_LOG); summaries go to stdout and
every machine-readable result goes to files.
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import argparse
import logging
import shutil
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional, Sequence

from config import ConfigManager, RunConfig
from content.dataset_io import read_dataset, write_dataset
from content.scene_generator import SceneConfig, generate_dataset
from standards.errors import InvalidArgumentError, NumericalError
from standards.result_types import Fault
from standards.type_definitions import DatasetManifest, DomainLabel
from systems.ablation import DEFAULT_VARIANTS, run_ablation
from systems.checkpoint import load_checkpoint, restore_into, save_checkpoint
from systems.evaluation import EvalReport, evaluate
from systems.model import ModelConfig, SA3Model
from systems.training import Trainer
from utils import configure_logging, format_percent, is_empty_dir, write_json, write_lines

logger = logging.getLogger('sa3')

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

CHECKPOINT_FILE = 'checkpoint.sa3w'
METRICS_FILE = 'metrics.jsonl'
ATTENTION_CHOICES = ('none', 'fixed_k', 'cis', 'se')


class CommandError(Exception):
    """A user-facing failure that maps to exit code 2."""


def _fail(error: Fault) -> CommandError:
    return CommandError(str(error))


@contextmanager
def _writing(out: Path):
    try:
        yield
    except OSError as e:
        raise CommandError(f"cannot write results under {out}: {e}") from None


def _read_split(data_dir: str, split: str) -> DatasetManifest:
    loaded = read_dataset(Path(data_dir) / split)
    if loaded.is_failure():
        raise _fail(loaded.error)
    return loaded.unwrap()


def cmd_generate(args: argparse.Namespace) -> int:
    try:
        cfg = SceneConfig(seed=args.seed, num_classes=args.classes, image_size=args.size,
                          train_per_domain=args.train_per_domain, test=args.test)
    except InvalidArgumentError as e:
        raise CommandError(str(e)) from None
    out = Path(args.out)
    if not is_empty_dir(out):
        if not args.force:
            raise CommandError(f"{out} exists and is not empty (use --force to overwrite)")
        for split in ('train', 'test'):
            shutil.rmtree(out / split, ignore_errors=True)
    train, test = generate_dataset(cfg, workers=args.workers)
    for manifest, split in ((train, 'train'), (test, 'test')):
        written = write_dataset(manifest, out / split)
        if written.is_failure():
            raise _fail(written.error)
    print(f"generated {len(train.by_domain(DomainLabel.SOURCE))} source + "
          f"{len(train.by_domain(DomainLabel.TARGET))} target train records, "
          f"{len(test.records)} test records in {out}")
    return EXIT_OK


def _run_config(args: argparse.Namespace, train_set: DatasetManifest) -> RunConfig:
    """Config file (or defaults) with flag overrides; the dataset fixes classes and image size."""
    if args.config is not None:
        loaded = ConfigManager.from_file(args.config)
        if loaded.is_failure():
            raise _fail(loaded.error)
        manager = loaded.unwrap()
    else:
        manager = ConfigManager()
    overrides = {
        'data.dir': args.data,
        'output.dir': getattr(args, 'out', None),
        'train.attention_mode': getattr(args, 'attention', None),
        'train.total_iters': args.iters,
        'train.seed': getattr(args, 'seed', None),
        'output.log_interval': getattr(args, 'log_interval', None),
    }
    if getattr(args, 'source_only', False):
        overrides['train.source_only'] = True
    for path, value in overrides.items():
        if value is not None:
            manager.set(path, value)
    if args.iters is not None:
        # milestones keep their relative position in the shortened schedule
        default = ConfigManager.DEFAULT_CONFIG['train']
        if manager.get('train.lr_milestones') == default['lr_milestones']:
            scale = args.iters / default['total_iters']
            milestones = sorted({int(m * scale) for m in default['lr_milestones']} - {0})
            manager.set('train.lr_milestones', [m for m in milestones if m < args.iters])
    manager.set('model.num_classes', train_set.num_classes)
    manager.set('model.image_size', train_set.image_size)
    run = manager.to_run_config()
    if run.is_failure():
        raise _fail(run.error)
    return run.unwrap()


def cmd_train(args: argparse.Namespace) -> int:
    train_set = _read_split(args.data, 'train')
    run = _run_config(args, train_set)
    out = Path(run.out_dir)
    with _writing(out):
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / 'config.json', run.to_dict())

    model = SA3Model(run.model)
    trainer = Trainer(model, run.train)
    result = trainer.run(train_set.by_domain(DomainLabel.SOURCE), train_set.by_domain(DomainLabel.TARGET),
                         metrics_path=out / METRICS_FILE, log_interval=run.log_interval)
    metadata = {
        'model': run.model.to_dict(),
        'train': run.train.to_dict(),
        'class_names': list(train_set.class_names),
    }
    saved = save_checkpoint(out / CHECKPOINT_FILE, result.store, metadata)
    if saved.is_failure():
        raise _fail(saved.error)
    final = result.history[-1]
    print(f"trained {run.train.total_iters} iterations ({run.model.attention}"
          f"{', source only' if run.train.source_only else ''}): final loss {final.total:.4f}; "
          f"checkpoint {saved.unwrap()}")
    return EXIT_OK


def _ap_lines(report: EvalReport) -> List[str]:
    lines = ['class,ap']
    lines.extend(f"{name},{ap:.6f}" for name, ap in report.per_class_ap.items())
    lines.append(f"mAP,{report.map:.6f}")
    return lines


def _confusion_lines(report: EvalReport, class_names: Sequence[str]) -> List[str]:
    labels = list(class_names) + ['background']
    lines = ['gt\\pred,' + ','.join(labels)]
    for label, row in zip(labels, report.confusion.tolist()):
        lines.append(label + ',' + ','.join(str(v) for v in row))
    return lines


def cmd_eval(args: argparse.Namespace) -> int:
    loaded = load_checkpoint(args.checkpoint)
    if loaded.is_failure():
        raise _fail(loaded.error)
    checkpoint = loaded.unwrap()
    try:
        model_cfg = ModelConfig.from_dict(checkpoint.metadata.get('model', {}))
    except (InvalidArgumentError, TypeError) as e:
        raise CommandError(f"{args.checkpoint}: checkpoint carries an invalid model config: {e}") from None
    test_set = _read_split(args.data, 'test')
    if model_cfg.num_classes != test_set.num_classes:
        raise CommandError(f"checkpoint has {model_cfg.num_classes} classes, dataset has {test_set.num_classes}")
    model = SA3Model(model_cfg)
    restored = restore_into(model.init_parameters(0), checkpoint)
    if restored.is_failure():
        raise _fail(restored.error)
    report = evaluate(model, restored.unwrap(), test_set, score_threshold=args.score_threshold,
                      workers=args.workers)
    out = Path(args.out)
    with _writing(out):
        write_json(out / 'report.json', report.to_dict())
        write_lines(out / 'per_class_ap.csv', _ap_lines(report))
        write_lines(out / 'confusion.csv', _confusion_lines(report, test_set.class_names))
    print(f"mAP {format_percent(report.map)} on {report.n_images} test images; "
          + ', '.join(f"{name} {format_percent(ap)}" for name, ap in report.per_class_ap.items()))
    return EXIT_OK


def _parse_seeds(text: str) -> List[int]:
    try:
        seeds = [int(s) for s in text.split(',') if s.strip()]
    except ValueError:
        raise CommandError(f"--seeds must be a comma-separated list of integers, got '{text}'") from None
    if not seeds:
        raise CommandError("--seeds needs at least one seed")
    return seeds


def cmd_ablate(args: argparse.Namespace) -> int:
    seeds = _parse_seeds(args.seeds)
    variants = [v.strip() for v in args.variants.split(',') if v.strip()]
    train_set = _read_split(args.data, 'train')
    test_set = _read_split(args.data, 'test')
    run = _run_config(args, train_set)
    try:
        table = run_ablation(train_set, test_set, run.model, run.train, seeds, variants, workers=args.workers)
    except InvalidArgumentError as e:
        raise CommandError(str(e)) from None
    out = Path(args.out)
    with _writing(out):
        write_lines(out / 'ablation.csv', table.csv_lines())
        write_json(out / 'ablation.json', table.to_dict())
    for row in table.rows:
        print(f"{row.variant:12s} mAP {format_percent(row.mean)} ± {format_percent(row.std)} "
              f"({len(row.maps)} runs)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='sa3', description='Desk-scale cross-domain detection experiments')
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('generate', help='write a synthetic two-domain dataset')
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--out', default='data')
    gen.add_argument('--classes', type=int, default=3)
    gen.add_argument('--train-per-domain', type=int, default=200)
    gen.add_argument('--test', type=int, default=100)
    gen.add_argument('--size', type=int, default=64)
    gen.add_argument('--workers', type=int, default=1)
    gen.add_argument('--force', action='store_true', help='overwrite an existing dataset')
    gen.set_defaults(handler=cmd_generate)

    train = commands.add_parser('train', help='train a detector on <data>/train')
    train.add_argument('--config', help='JSON run configuration')
    train.add_argument('--data', default='data')
    train.add_argument('--out', help='run directory (overrides output.dir)')
    train.add_argument('--attention', choices=ATTENTION_CHOICES)
    train.add_argument('--source-only', action='store_true', help='disable every adaptation term')
    train.add_argument('--iters', type=int, help='override train.total_iters')
    train.add_argument('--seed', type=int, help='override train.seed')
    train.add_argument('--log-interval', type=int, help='override output.log_interval')
    train.set_defaults(handler=cmd_train)

    ev = commands.add_parser('eval', help='score a checkpoint on <data>/test')
    ev.add_argument('--checkpoint', required=True)
    ev.add_argument('--data', default='data')
    ev.add_argument('--out', required=True)
    ev.add_argument('--score-threshold', type=float, default=0.05)
    ev.add_argument('--workers', type=int, default=1)
    ev.set_defaults(handler=cmd_eval)

    ablate = commands.add_parser('ablate', help='compare attention variants over seeds')
    ablate.add_argument('--data', default='data')
    ablate.add_argument('--seeds', default='1,2,3')
    ablate.add_argument('--out', required=True)
    ablate.add_argument('--variants', default=','.join(DEFAULT_VARIANTS))
    ablate.add_argument('--config', help='JSON run configuration')
    ablate.add_argument('--iters', type=int, help='override train.total_iters')
    ablate.add_argument('--workers', type=int, default=1)
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging()
        return args.handler(args)
    except CommandError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidArgumentError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
