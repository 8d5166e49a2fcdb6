"""Command-line entry point: generate, train, detect, evaluate, pipeline.

Exit status: 0 success, 1 usage or configuration error, 2 data error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_settings
from .neural import ModelFormatError, TrainingDiverged
from .pipeline import (
    ANSWERS_FILE,
    DataError,
    run_detect,
    run_evaluate,
    run_generate,
    run_pipeline,
    run_train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
log = logging.getLogger("insiderlog")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="TOML configuration file")
    p.add_argument("--seed", type=int, help="seed for the generator and for training")
    p.add_argument("--window", type=int, help="history length h")
    p.add_argument("--hidden", type=int, help="LSTM hidden size d")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--z", type=float, help="confidence multiplier of the MSE cutoff")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="insiderlog", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()
    sub.add_parser("generate", parents=[common], help="write a synthetic corpus")
    tr = sub.add_parser("train", parents=[common], help="train the next-key model")
    tr.add_argument("--data", type=Path, required=True, help="corpus directory")
    de = sub.add_parser("detect", parents=[common], help="score a corpus and flag users")
    de.add_argument("--data", type=Path, required=True)
    de.add_argument("--model", type=Path, required=True, help="directory written by train")
    ev = sub.add_parser("evaluate", parents=[common], help="compare verdicts with an answer key")
    ev.add_argument("--detect", type=Path, required=True, help="directory written by detect")
    ev.add_argument("--answers", type=Path, help=f"answer key (default: <data>/{ANSWERS_FILE})")
    ev.add_argument("--data", type=Path, help="corpus directory holding the answer key")
    sub.add_parser("pipeline", parents=[common], help="generate, train, detect and evaluate")
    return parser


def _settings(args):
    overrides = {k: getattr(args, k) for k in ("seed", "window", "hidden", "epochs", "lr", "z")}
    try:
        return load_settings(args.config, overrides)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    except ConfigError as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _progress(total: int):
    step = max(1, total // 10)

    def report(epoch: int, loss: float) -> None:
        if epoch == 1 or epoch % step == 0 or epoch == total:
            log.info("epoch %d/%d  avg loss %.5f", epoch, total, loss)
    return report


def _summarise_training(t) -> None:
    log.info("trained on %d windows (%d distinct) in %.1fs; final loss %.5f",
             t.n_train, t.n_distinct, t.seconds, t.losses[-1])


def _run(args) -> int:
    settings = _settings(args)
    if args.command == "generate":
        corpus, _ = run_generate(settings, args.out)
        log.info("wrote %d events for %d users to %s", sum(corpus.counts.values()), len(corpus.users), args.out)
    elif args.command == "train":
        t = run_train(args.data, settings, args.out, progress=_progress(settings.train.epochs))
        _summarise_training(t)
    elif args.command == "detect":
        d = run_detect(args.data, args.model, settings, args.out)
        flagged = sum(uv.anomalous for uv in d.users.values())
        log.info("cutoff %.6g; %d of %d windows anomalous; %d users flagged", d.threshold.cutoff,
                 sum(v.anomalous for v in d.verdicts), len(d.verdicts), flagged)
    elif args.command == "evaluate":
        answers = args.answers or (args.data / ANSWERS_FILE if args.data else None)
        if answers is None:
            raise UsageError("evaluate needs --answers or --data")
        report, _ = run_evaluate(args.detect, answers, args.out)
        print(report.render(), end="")
    else:
        r = run_pipeline(settings, args.out, progress=_progress(settings.train.epochs))
        _summarise_training(r.training)
        print(r.report.render(), end="")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return _run(args)
    except UsageError as exc:
        print(f"insiderlog: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError, FileNotFoundError) as exc:
        print(f"insiderlog: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"insiderlog: training diverged: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the documented exit code
        log.debug("unhandled error", exc_info=True)
        print(f"insiderlog: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
