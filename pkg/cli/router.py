import argparse
import json
import logging
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Union

import pydantic

from core.captioning_service import CaptioningService
from core.config import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_BEAM_WIDTH,
    DEFAULT_EPOCHS,
    DEFAULT_HIDDEN,
    DEFAULT_LAMBDA,
    GRADCHECK_FD_STEP,
    GRADCHECK_MAX_ENTRIES,
    GRADCHECK_TOL,
    MAX_DECODE_LEN,
    VARIANTS,
    VOCAB_THRESHOLD,
)
from core.errors import CaptioningError, ValidationError
from core.synth import gen_synth
from core.textdata import convert_numpy_features

from . import validation

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


# -----------------------------------------------------------------------------
# Parser
# -----------------------------------------------------------------------------
def _common() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="key=value file supplying any flag; the command line wins")
    parent.add_argument("--log-level", default="INFO", choices=LOG_LEVELS)
    parent.add_argument("--workers", type=int, default=1, help="decode worker threads")
    return parent


def _train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest")
    parser.add_argument("--vocab")
    parser.add_argument("--variant", default="vadd", choices=VARIANTS)
    parser.add_argument("--lambda", dest="lambda_", type=float, default=DEFAULT_LAMBDA)
    parser.add_argument("--hidden", type=int, default=DEFAULT_HIDDEN)
    parser.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    parser.add_argument("--batch", type=int, default=DEFAULT_BATCH_SIZE)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--lr", type=float, default=None, help="initial Adam learning rate")
    parser.add_argument("--decay-every", type=int, default=None, help="epochs between learning-rate decays")
    parser.add_argument("--decay-factor", type=float, default=None)
    parser.add_argument("--clip-norm", type=float, default=None)
    parser.add_argument("--share-va", action="store_true", help="streams share the visual-aware attention")
    parser.add_argument("--out")


def _decode_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gamma", type=float, default=None, help="TF weight in the mixed distribution (default 0.7)")
    parser.add_argument("--beam", type=int, default=DEFAULT_BEAM_WIDTH)
    parser.add_argument("--greedy", action="store_true")
    parser.add_argument("--max-len", type=int, default=MAX_DECODE_LEN)
    parser.add_argument("--no-length-norm", action="store_true")
    parser.add_argument("--stream", default="mixed", choices=("mixed", "tf", "sf"))
    parser.add_argument("--split", default="test", choices=("train", "val", "test"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="main.py", description="Dual-stream video captioning toolkit")
    commands = parser.add_subparsers(dest="command", required=True)
    common = _common()

    synth = commands.add_parser("gen-synth", parents=[common], help="write a synthetic captioning corpus")
    synth.add_argument("--out")
    synth.add_argument("--videos", type=int, default=20)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--events", type=int, default=2)
    synth.add_argument("--alphabet", type=int, default=4)
    synth.add_argument("--sigma", type=float, default=0.05)
    synth.add_argument("--paraphrases", type=int, default=2)
    synth.add_argument("--distinct-programs", action="store_true", help="no two videos share an event program")
    synth.add_argument("--feature-dim", type=int, default=None)
    synth.add_argument("--frames-per-event", type=int, default=None)
    synth.add_argument("--val-fraction", type=float, default=None)
    synth.add_argument("--test-fraction", type=float, default=None)

    vocab = commands.add_parser("build-vocab", parents=[common], help="vocabulary from the training split")
    vocab.add_argument("--manifest")
    vocab.add_argument("--out")
    vocab.add_argument("--threshold", type=int, default=VOCAB_THRESHOLD)

    train = commands.add_parser("train", parents=[common], help="train one model variant")
    _train_flags(train)
    train.add_argument("--resume", action="store_true", help="continue from the newest checkpoint in --out")

    evaluate = commands.add_parser("eval", parents=[common], help="score a checkpoint on one split")
    evaluate.add_argument("--ckpt")
    evaluate.add_argument("--manifest")
    evaluate.add_argument("--vocab")
    _decode_flags(evaluate)
    evaluate.add_argument("--trace", help="write greedy-decode attention weights as JSON lines")
    evaluate.add_argument("--report", help="write the metrics report as JSON")

    caption = commands.add_parser("caption", parents=[common], help="write one caption per video")
    caption.add_argument("--ckpt")
    caption.add_argument("--manifest")
    caption.add_argument("--vocab")
    caption.add_argument("--out")
    _decode_flags(caption)

    sweep = commands.add_parser("sweep", parents=[common], help="metrics over a lambda or gamma grid")
    _train_flags(sweep)
    _decode_flags(sweep)
    sweep.add_argument("--param", choices=("lambda", "gamma"))
    sweep.add_argument("--values")
    sweep.add_argument("--emit-curves", help="write value,bleu4,rouge_l,cider CSV")

    gradcheck = commands.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    gradcheck.add_argument("--variant", default="all", choices=VARIANTS + ("all",))
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    gradcheck.add_argument("--fd-step", type=float, default=GRADCHECK_FD_STEP)
    gradcheck.add_argument(
        "--max-entries", type=int, default=GRADCHECK_MAX_ENTRIES,
        help="sample this many entries per parameter (default 0: every entry)",
    )

    convert = commands.add_parser("convert-features", parents=[common], help="convert a .npy dump to a feature file")
    convert.add_argument("--input")
    convert.add_argument("--out")
    return parser


def _flag_kinds(parser: argparse.ArgumentParser, command: str) -> Callable[[str], Optional[bool]]:
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    actions = {}
    for action in subparsers.choices[command]._actions:
        for option in action.option_strings:
            actions[option.lstrip("-")] = action

    def kind(key: str) -> Optional[bool]:
        action = actions.get(key)
        if action is None or key in ("config", "h", "help"):
            return None
        return isinstance(action, argparse._StoreTrueAction)

    return kind


def parse_args(argv: Sequence[str]) -> Union[argparse.Namespace, int]:
    """Parse the command line, splicing in --config values; returns an exit code on usage errors."""
    parser = build_parser()
    argv = list(argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            tokens = validation.read_config_file(args.config, _flag_kinds(parser, args.command))
            position = argv.index(args.command) + 1
            args = parser.parse_args(argv[:position] + tokens + argv[position:])
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}")
        return EXIT_USAGE
    if args.workers < 1:
        print("error: --workers must be >= 1")
        return EXIT_USAGE
    return args


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------
def cmd_gen_synth(args: argparse.Namespace) -> int:
    spec = validation.synth_spec(args)
    manifest = gen_synth(spec, args.out)
    print(f"wrote {spec.n_videos} videos, manifest {manifest}")
    return EXIT_OK


def cmd_build_vocab(args: argparse.Namespace) -> int:
    validation.require_file(args.manifest, "--manifest")
    validation.require_out(args.out)
    if args.threshold < 1:
        raise ValidationError("--threshold must be >= 1")
    vocab = CaptioningService.build_vocab(args.manifest, args.out, args.threshold)
    print(f"vocabulary of {len(vocab)} tokens written to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    run = validation.validate_train(args)
    _, summaries = CaptioningService.train(run.manifest, run.vocab, run.train, run.out, resume=args.resume)
    if summaries:
        last = summaries[-1]
        print(f"epoch {last.epoch}: l_tf={last.loss.l_tf:.4f} l_sf={last.loss.l_sf:.4f} total={last.loss.total:.4f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    run = validation.validate_decode(args)
    if args.trace:
        validation.require_out(args.trace, "--trace")
    if args.report:
        validation.require_out(args.report, "--report")
    report = CaptioningService.evaluate_checkpoint(
        run.checkpoint,
        run.manifest,
        run.vocab,
        run.inference,
        split=run.split,
        greedy=args.greedy,
        workers=run.workers,
        trace_path=args.trace,
    )
    CaptioningService.print_metrics(report, f"{Path(run.checkpoint).name} / {run.split}")
    if args.report:
        Path(args.report).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_caption(args: argparse.Namespace) -> int:
    run = validation.validate_decode(args)
    count = CaptioningService.caption(
        run.checkpoint,
        run.manifest,
        run.vocab,
        run.inference,
        run.out,
        split=run.split,
        greedy=args.greedy,
        workers=run.workers,
    )
    print(f"captioned {count} videos into {run.out}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    run, values = validation.validate_sweep(args)
    if args.emit_curves:
        validation.require_out(args.emit_curves, "--emit-curves")
    rows = CaptioningService.sweep(
        args.param,
        values,
        run.manifest,
        run.vocab,
        run.train,
        run.inference,
        run.out,
        split=run.split,
        greedy=args.greedy,
        workers=run.workers,
    )
    CaptioningService.print_sweep(rows)
    if args.emit_curves:
        CaptioningService.write_curves(rows, args.emit_curves)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    variants = validation.validate_gradcheck(args)
    reports = {
        variant: CaptioningService.gradcheck(variant, args.seed, args.tol, args.fd_step, args.max_entries)
        for variant in variants
    }
    CaptioningService.print_gradcheck(reports)
    return EXIT_OK if all(r.passed for r in reports.values()) else EXIT_FAILURE


def cmd_convert_features(args: argparse.Namespace) -> int:
    validation.validate_convert(args)
    frames = convert_numpy_features(args.input, args.out)
    print(f"converted {frames} frames into {args.out}")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "gen-synth": cmd_gen_synth,
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "eval": cmd_eval,
    "caption": cmd_caption,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "convert-features": cmd_convert_features,
}


def dispatch(args: argparse.Namespace) -> int:
    """Run a parsed command and map failures onto exit codes."""
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, pydantic.ValidationError) as exc:
        print(f"error: {exc}")
        return EXIT_USAGE
    except (CaptioningError, FileNotFoundError, json.JSONDecodeError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_FAILURE


def run(argv: Sequence[str]) -> int:
    args = parse_args(argv)
    if isinstance(args, int):
        return args
    return dispatch(args)
