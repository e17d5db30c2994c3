"""
Acceptance experiments: the full pipeline over several seeds, a FastEmit
A/B on the first seed's corpus, and the ordering checks over the results.
"""
from pathlib import Path
from typing import List, Optional, Sequence

from app.core.logging import get_logger
from app.repositories.base import PathLike
from app.repositories.report import ReportRepository
from app.schemas.evaluation import EvalSummary
from app.schemas.experiment import ExperimentCheck, ExperimentReport, ExperimentSection, FastEmitRun, SeedRun
from app.schemas.pipeline import PipelineConfig
from app.services.evaluation import format_summary_table
from app.services.pipeline import PipelineService, build_pipeline_config

logger = get_logger(__name__)

E2E, ACOUSTIC_TEXT, ACOUSTIC = "e2e", "acoustic_text", "acoustic"


def _pct(v: Optional[float]) -> str:
    return f"{100 * v:.1f}%" if v is not None else "-"


def _ms(v: Optional[float]) -> str:
    return f"{v:.0f}ms" if v is not None else "-"


def _full_order(run: SeedRun) -> Optional[bool]:
    e2e, text, ac = run.summary(E2E), run.summary(ACOUSTIC_TEXT), run.summary(ACOUSTIC)
    if e2e is None or text is None or ac is None:
        return None
    return e2e.eer < text.eer < ac.eer


def _check(name: str, passed: bool, detail: str) -> ExperimentCheck:
    return ExperimentCheck(name=name, passed=bool(passed), detail=detail)


def _missing(name: str, *models: str) -> ExperimentCheck:
    return _check(name, False, f"no summary for {', '.join(models)}")


def ordering_checks(section: ExperimentSection, runs: Sequence[SeedRun]) -> List[ExperimentCheck]:
    """EER ordering, EER bound, latency relations and WER, all but the multi-seed ones on runs[0]"""
    reference = runs[0]
    e2e, text, ac = reference.summary(E2E), reference.summary(ACOUSTIC_TEXT), reference.summary(ACOUSTIC)
    checks = []

    order = _full_order(reference)
    if order is None:
        checks.append(_missing("eer_order_reference", E2E, ACOUSTIC_TEXT, ACOUSTIC))
    else:
        checks.append(_check(
            "eer_order_reference", order,
            f"seed {reference.seed}: e2e {_pct(e2e.eer)} < acoustic_text {_pct(text.eer)} < acoustic {_pct(ac.eer)}",
        ))

    pairs = [(r.seed, r.summary(E2E), r.summary(ACOUSTIC)) for r in runs]
    if any(a is None or b is None for _, a, b in pairs):
        checks.append(_missing("e2e_beats_acoustic_every_seed", E2E, ACOUSTIC))
    else:
        beaten = [seed for seed, a, b in pairs if a.eer < b.eer]
        checks.append(_check(
            "e2e_beats_acoustic_every_seed", len(beaten) == len(runs),
            f"{len(beaten)}/{len(runs)} seeds",
        ))

    orders = [_full_order(r) for r in runs]
    if any(o is None for o in orders):
        checks.append(_missing("eer_order_majority", E2E, ACOUSTIC_TEXT, ACOUSTIC))
    else:
        held = sum(orders)
        checks.append(_check("eer_order_majority", 2 * held > len(runs), f"{held}/{len(runs)} seeds"))

    if e2e is None:
        checks.append(_missing("e2e_eer_bound", E2E))
    else:
        checks.append(_check(
            "e2e_eer_bound", e2e.eer <= section.max_e2e_eer,
            f"{_pct(e2e.eer)} <= {_pct(section.max_e2e_eer)}",
        ))

    if e2e is None or text is None:
        checks.append(_missing("p90_below_acoustic_text", E2E, ACOUSTIC_TEXT))
    else:
        ok = e2e.p90_ms is not None and text.p90_ms is not None and e2e.p90_ms < text.p90_ms
        checks.append(_check(
            "p90_below_acoustic_text", ok, f"e2e {_ms(e2e.p90_ms)} < acoustic_text {_ms(text.p90_ms)}"
        ))

    if e2e is None or ac is None:
        checks.append(_missing("p50_within_ratio_of_acoustic", E2E, ACOUSTIC))
    else:
        ok = e2e.p50_ms is not None and ac.p50_ms is not None and e2e.p50_ms <= section.max_p50_ratio * ac.p50_ms
        checks.append(_check(
            "p50_within_ratio_of_acoustic", ok,
            f"e2e {_ms(e2e.p50_ms)} <= {section.max_p50_ratio:g} x acoustic {_ms(ac.p50_ms)}",
        ))

    if e2e is None or e2e.wer is None:
        checks.append(_missing("asr_wer", E2E))
    else:
        checks.append(_check("asr_wer", e2e.wer <= section.max_wer, f"{_pct(e2e.wer)} <= {_pct(section.max_wer)}"))
    return checks


def fastemit_checks(section: ExperimentSection, runs: Sequence[FastEmitRun]) -> List[ExperimentCheck]:
    """runs[0] is the unregularized baseline, runs[1] the regularized model"""
    if len(runs) != 2:
        return [_check("fastemit_latency", False, f"expected 2 FastEmit runs, got {len(runs)}")]
    base, reg = runs[0].summary, runs[1].summary
    lam = runs[1].fastemit_lambda
    latency_ok = base.p50_ms is not None and reg.p50_ms is not None and reg.p50_ms <= base.p50_ms
    delta = reg.eer - base.eer
    return [
        _check("fastemit_latency", latency_ok, f"p50 lambda={lam:g} {_ms(reg.p50_ms)} <= lambda=0 {_ms(base.p50_ms)}"),
        _check(
            "fastemit_eer_delta", delta < section.max_fastemit_eer_delta,
            f"EER change {100 * delta:+.1f} points < {100 * section.max_fastemit_eer_delta:.1f}",
        ),
    ]


def format_experiment_report(report: ExperimentReport) -> str:
    blocks = []
    for run in report.seeds:
        blocks.append(f"seed {run.seed}\n{format_summary_table(run.summaries)}")
    if report.fastemit:
        lines = [f"{'fastemit':<14} {'EER':>7} {'p50_ms':>8} {'p90_ms':>8}"]
        for fe in report.fastemit:
            s = fe.summary
            row = format_summary_table([s.model_copy(update={"model": f"lambda={fe.fastemit_lambda:g}"})])
            lines.append(row.splitlines()[1])
        blocks.append("\n".join(lines))
    blocks.append("\n".join(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}" for c in report.checks))
    return "\n\n".join(blocks)


class ExperimentService:
    """Runs the pipeline per seed under <out>/seed-<s> and the FastEmit pair under <out>/fastemit-<weight>"""

    def __init__(self, config: PipelineConfig, out: PathLike, jobs: Optional[int] = None):
        self.config = config
        self.section = config.experiment
        self.root = Path(out)
        self.jobs = jobs

    def seed_config(self, seed: int, fastemit_lambda: Optional[float] = None) -> PipelineConfig:
        overrides = [
            f"corpus.seed={seed}",
            f"train.seed={seed}",
            f"baselines.acoustic.train.seed={seed}",
            f"baselines.acoustic_text.train.seed={seed}",
        ]
        if fastemit_lambda is not None:
            overrides.append(f"train.fastemit_lambda={fastemit_lambda!r}")
        return build_pipeline_config(self.config.model_dump(mode="json"), overrides)

    def _seed_dir(self, seed: int) -> Path:
        return self.root / f"seed-{seed}"

    def run_seed(self, seed: int) -> SeedRun:
        logger.info("experiment_seed_started", seed=seed)
        pipeline = PipelineService(self.seed_config(seed), self._seed_dir(seed), self.jobs)
        pipeline.gen_corpus()
        pipeline.train_asr()
        pipeline.train_iq()
        pipeline.train_baselines()
        return SeedRun(seed=seed, summaries=pipeline.evaluate())

    def run_fastemit(self, seed: int) -> List[FastEmitRun]:
        """Retrains the transducer without FastEmit and with the configured weight on an existing seed corpus"""
        corpus = self._seed_dir(seed) / "corpus"
        runs = []
        for lam in (0.0, self.section.fastemit_lambda):
            logger.info("experiment_fastemit_started", seed=seed, fastemit_lambda=lam)
            pipeline = PipelineService(self.seed_config(seed, lam), self.root / f"fastemit-{lam:g}", self.jobs)
            pipeline.train_asr(corpus / "train")
            pipeline.train_iq(corpus / "train")
            summaries = pipeline.evaluate(corpus / "eval")
            runs.append(FastEmitRun(fastemit_lambda=lam, summary=self._e2e(summaries)))
        return runs

    @staticmethod
    def _e2e(summaries: Sequence[EvalSummary]) -> EvalSummary:
        return next(s for s in summaries if s.model == E2E)

    def run(self) -> ExperimentReport:
        seeds = [self.run_seed(seed) for seed in self.section.seeds]
        fastemit = self.run_fastemit(self.section.seeds[0])
        checks = ordering_checks(self.section, seeds) + fastemit_checks(self.section, fastemit)
        for check in checks:
            logger.info("experiment_check", name=check.name, passed=check.passed, detail=check.detail)
        report = ExperimentReport(seeds=seeds, fastemit=fastemit, checks=checks)
        ReportRepository(self.root).write_experiments(report)
        return report
