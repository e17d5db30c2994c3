"""
Command-line surface: one verb per pipeline stage plus `experiment`, which runs
every stage over several seeds. All artifacts go under --out. Exit codes are 0
on success, 1 on a runtime failure or a failed acceptance check and 2 on a
usage error.
"""
import argparse
import json
import sys
from typing import Callable, Dict, List, NoReturn, Optional, Sequence

from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import AcceptanceError, ArgumentError, IQStreamError, UsageError
from app.core.logging import get_logger
from app.repositories.base import _first_error
from app.repositories.trace import trace_records
from app.schemas.command import VERBS, Command
from app.services.evaluation import format_summary_table
from app.services.experiments import ExperimentService, format_experiment_report
from app.services.pipeline import PipelineService, load_pipeline_config

logger = get_logger(__name__)

CONFIG_REQUIRED = {"gen-corpus", "train-asr", "train-iq", "train-baseline", "experiment"}


class StrictArgumentParser(argparse.ArgumentParser):
    """Raises UsageError instead of printing usage and exiting"""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _jobs(value: str) -> int:
    try:
        jobs = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}") from None
    if jobs < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return jobs


def build_parser() -> StrictArgumentParser:
    parser = StrictArgumentParser(prog="iqstream", description="Streaming intended-query detection")
    verbs = parser.add_subparsers(dest="verb", metavar="VERB", required=True)

    for verb in VERBS:
        sub = verbs.add_parser(verb)
        sub.add_argument("--config", dest="config_path", required=verb in CONFIG_REQUIRED,
                         help="JSON experiment config")
        sub.add_argument("--out", default="artifacts", help="artifact directory")
        sub.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config field by dotted path; repeatable")
        sub.add_argument("--jobs", type=_jobs, default=None, help="per-utterance worker threads")
        if verb not in ("gen-corpus", "experiment"):
            sub.add_argument("--corpus", help="corpus directory (defaults to the split under --out)")
        if verb in ("train-iq", "train-baseline"):
            sub.add_argument("--asr-checkpoint", help="stage-1 checkpoint (defaults to <out>/asr.ckpt)")
        if verb in ("evaluate", "decode"):
            sub.add_argument("--checkpoint", help="stage-2 checkpoint (defaults to <out>/iq.ckpt)")
        if verb == "evaluate":
            sub.add_argument("--acoustic", help="acoustic detector checkpoint")
            sub.add_argument("--acoustic-text", dest="acoustic_text", help="acoustic-text detector checkpoint")
        if verb == "train-baseline":
            sub.add_argument("--detector", choices=["acoustic", "acoustic_text", "all"], default="all")
        if verb == "decode":
            sub.add_argument("--utterance", help="utterance id (defaults to the first one)")
    return parser


def parse_args(argv: Sequence[str]) -> Command:
    namespace = build_parser().parse_args(list(argv))
    fields = {k: v for k, v in vars(namespace).items() if v is not None}
    try:
        return Command(**fields)
    except ValidationError as e:
        raise UsageError(_first_error(e)) from e


def _gen_corpus(service: PipelineService, command: Command) -> None:
    for split, path in service.gen_corpus().items():
        print(f"{split}\t{path}")


def _train_asr(service: PipelineService, command: Command) -> None:
    print(service.train_asr(command.corpus))


def _train_iq(service: PipelineService, command: Command) -> None:
    print(service.train_iq(command.corpus, command.asr_checkpoint))


def _train_baseline(service: PipelineService, command: Command) -> None:
    for path in service.train_baselines(command.corpus, command.asr_checkpoint, command.baselines()):
        print(path)


def _evaluate(service: PipelineService, command: Command) -> None:
    summaries = service.evaluate(command.corpus, command.checkpoint, command.acoustic, command.acoustic_text)
    print(format_summary_table(summaries))
    print(json.dumps([s.model_dump(mode="json") for s in summaries], sort_keys=True))


def _decode(service: PipelineService, command: Command) -> None:
    result = service.decode(command.corpus, command.checkpoint, command.utterance)
    print(json.dumps(trace_records(result)[-1], sort_keys=True))


def _experiment(service: PipelineService, command: Command) -> None:
    report = ExperimentService(service.config, command.out, service.jobs).run()
    print(format_experiment_report(report))
    if not report.passed:
        raise AcceptanceError([c.name for c in report.failed()])


HANDLERS: Dict[str, Callable[[PipelineService, Command], None]] = {
    "gen-corpus": _gen_corpus,
    "train-asr": _train_asr,
    "train-iq": _train_iq,
    "train-baseline": _train_baseline,
    "evaluate": _evaluate,
    "decode": _decode,
    "experiment": _experiment,
}


def _fail(command: Command, error: IQStreamError) -> int:
    logger.error("command_failed", verb=command.verb, error=error.detail)
    print(f"error: {error.detail}", file=sys.stderr)
    return error.exit_code


def run(command: Command) -> int:
    logger.info("command_started", verb=command.verb, out=command.out, overrides=command.overrides)
    try:
        config = load_pipeline_config(command.config_path, command.overrides)
        service = PipelineService(config, command.out, command.jobs or settings.JOBS)
        HANDLERS[command.verb](service, command)
    except ValidationError as e:
        return _fail(command, ArgumentError(_first_error(e)))
    except IQStreamError as e:
        return _fail(command, e)
    logger.info("command_finished", verb=command.verb)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    try:
        command = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as e:
        print(f"usage error: {e.detail}", file=sys.stderr)
        return e.exit_code
    return run(command)
