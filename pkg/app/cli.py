"""
Command-line entry point.

Commands:
- train-base   train the stage-1 message-level classifier
- autolabel    label source tweets from a stage-1 checkpoint and a thread file
- train-reply  train stage-2 classifiers on an auto-labeled corpus
- evaluate     score a checkpoint or a two-checkpoint ensemble
- predict      print "label p_neg p_neu p_pos" per input text
- run          the full two-stage pipeline

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal or numeric error.
"""
import argparse
import logging
import sys
from typing import List, Optional

from app.error_handling import (
    EXIT_OK,
    ConfigError,
    DataError,
    generate_run_id,
    handle_error,
    run_context,
)
from app.pipeline_service import PipelineService
from app.run_config import load_run_config

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage errors as ConfigError instead of exiting with 2"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add_common(parser):
    parser.add_argument('--config', help='JSON run-config file (default: $REPLYSENT_CONFIG)')
    parser.add_argument('--seed', type=int, help='master seed')
    parser.add_argument('--out', help='output directory')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='override one config key; repeatable')


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='replysent', description='Reply-sentiment prediction pipeline')
    commands = parser.add_subparsers(dest='command', parser_class=ArgumentParser)
    commands.required = True

    for name, help_text in (
        ('train-base', 'train the stage-1 classifier on the labeled corpus'),
        ('autolabel', 'auto-label threads with a stage-1 checkpoint'),
        ('train-reply', 'train stage-2 classifiers on an auto-labeled corpus'),
        ('run', 'run both stages and the evaluation end to end'),
    ):
        _add_common(commands.add_parser(name, help=help_text))

    evaluate = commands.add_parser('evaluate', help='evaluate a checkpoint or an ensemble of two')
    _add_common(evaluate)
    evaluate.add_argument('--checkpoint', help='checkpoint to evaluate (config key checkpoint)')
    evaluate.add_argument('--checkpoint-b', help='second checkpoint; evaluates the ensemble')
    evaluate.add_argument('--data', help='gold thread file or labeled corpus (config key eval_data)')
    evaluate.add_argument('--direct-baseline', action='store_true',
                          help='score the checkpoint on source texts as the direct baseline')

    predict = commands.add_parser('predict', help='predict labels for texts')
    _add_common(predict)
    predict.add_argument('--checkpoint', help='checkpoint to use (config key checkpoint)')
    source = predict.add_mutually_exclusive_group(required=True)
    source.add_argument('--text', help='single input text')
    source.add_argument('--file', help='file with one input text per line')
    return parser


def _resolve(args):
    config = load_run_config(args.config, seed=args.seed, out=args.out, overrides=args.overrides)
    for key, attr in (('checkpoint', 'checkpoint'), ('checkpoint_b', 'checkpoint_b'), ('eval_data', 'data')):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(config, key, value)
    return config


def _read_lines(path) -> List[str]:
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            return [line.rstrip('\n').rstrip('\r') for line in handle if line.strip()]
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}")


def run_command(args, stdout=None) -> int:
    stdout = stdout or sys.stdout
    config = _resolve(args)
    service = PipelineService(config)
    service.prepare_output()

    if args.command == 'train-base':
        service.train_base()
    elif args.command == 'autolabel':
        result, report = service.autolabel()
        print(f"auto-labeled {len(result.examples)} threads, excluded {len(report.dropped_ids)}", file=stdout)
    elif args.command == 'train-reply':
        service.train_reply()
    elif args.command == 'evaluate':
        result = service.evaluate_checkpoints(direct=args.direct_baseline)
        print(f"{result.name}: accuracy={result.metrics.accuracy:.4f} eq1_f1={result.metrics.eq1_f1:.4f}",
              file=stdout)
    elif args.command == 'predict':
        texts = [args.text] if args.text is not None else _read_lines(args.file)
        for line in service.predict(texts):
            print(line, file=stdout)
    elif args.command == 'run':
        report = service.two_stage_run()
        for name, block in report['systems'].items():
            print(f"{name}: eq1_f1={block['metrics']['eq1_f1']:.4f} accuracy={block['metrics']['accuracy']:.4f}",
                  file=stdout)
    return EXIT_OK


def main(argv: Optional[List[str]] = None, stdout=None, stderr=None) -> int:
    """Parse arguments, run one command and return its exit code"""
    with run_context(run_id=generate_run_id()):
        try:
            args = build_parser().parse_args(argv)
            return run_command(args, stdout=stdout)
        except SystemExit as e:
            # --help
            return int(e.code or 0)
        except Exception as e:
            return handle_error(e, stream=stderr)
