import math
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import editdistance

from app.core.errors import ArgumentError
from app.core.logging import get_logger
from app.schemas.corpus import Utterance
from app.schemas.decoding import DecodeResult
from app.schemas.evaluation import DetPoint, EerResult, EvalSummary, LatencyResult, ScoredUtterance

logger = get_logger(__name__)


def score_result(
    result: DecodeResult,
    utterance: Utterance,
    frame_period_ms: float,
    k_on: int = 1,
    strict: bool = False,
) -> ScoredUtterance:
    if not result.events:
        raise ArgumentError(f"utterance {utterance.id} has an empty event stream")
    return ScoredUtterance(
        id=utterance.id,
        domain=utterance.domain,
        true_intent=utterance.intent,
        posteriors=[e.intended_posterior for e in result.events],
        times_ms=[e.time_ms for e in result.events],
        start_of_speech_ms=utterance.start_of_speech_frame * frame_period_ms,
        k_on=k_on,
        strict=strict,
    )


def _split(scored: Iterable[ScoredUtterance]) -> Tuple[List[ScoredUtterance], List[ScoredUtterance]]:
    pos, neg = [], []
    for s in scored:
        (pos if s.true_intent == "intended" else neg).append(s)
    return pos, neg


def det_thresholds(scored: Iterable[ScoredUtterance]) -> List[float]:
    """Every distinct finite utterance score plus 0 and 1, ascending"""
    grid = {0.0, 1.0}
    grid.update(s.score for s in scored if math.isfinite(s.score))
    return sorted(grid)


def det_curve(scored: Sequence[ScoredUtterance], thresholds: Optional[Sequence[float]] = None) -> List[DetPoint]:
    """
    FA(θ) = share of unintended utterances whose stream crosses θ,
    FR(θ) = share of intended utterances whose stream never does.
    """
    pos, neg = _split(scored)
    if not pos or not neg:
        raise ArgumentError("DET needs both intended and unintended utterances")
    grid = sorted(thresholds) if thresholds is not None else det_thresholds(scored)
    points = []
    for theta in grid:
        fa = sum(s.crosses(theta) for s in neg) / len(neg)
        fr = sum(not s.crosses(theta) for s in pos) / len(pos)
        points.append(DetPoint(threshold=theta, false_accept_rate=fa, false_reject_rate=fr))
    return points


def eer(det: Sequence[DetPoint]) -> EerResult:
    """
    Equal error rate by linear interpolation between the adjacent DET points
    where FA - FR changes sign. Without a sign change the point with the
    smallest |FA - FR| is returned with straddled=False.
    """
    if not det:
        raise ArgumentError("eer needs a non-empty DET curve")
    points = sorted(det, key=lambda p: p.threshold)
    diffs = [p.false_accept_rate - p.false_reject_rate for p in points]
    for i, d in enumerate(diffs):
        if d == 0:
            return EerResult(eer=points[i].false_accept_rate, threshold=points[i].threshold)
        if i + 1 < len(points) and d > 0 > diffs[i + 1]:
            a, b = points[i], points[i + 1]
            w = d / (d - diffs[i + 1])
            rate = a.false_accept_rate + w * (b.false_accept_rate - a.false_accept_rate)
            theta = a.threshold + w * (b.threshold - a.threshold)
            return EerResult(eer=rate, threshold=theta)
    i = min(range(len(points)), key=lambda j: abs(diffs[j]))
    p = points[i]
    return EerResult(
        eer=(p.false_accept_rate + p.false_reject_rate) / 2, threshold=p.threshold, straddled=False
    )


def nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p*n)-th smallest value"""
    n = len(sorted_values)
    rank = max(1, math.ceil(round(p * n, 9)))
    return sorted_values[min(rank, n) - 1]


def latency_percentiles(scored: Sequence[ScoredUtterance], threshold: float) -> LatencyResult:
    """Decision latency from start of speech over intended utterances that cross θ"""
    intended = [s for s in scored if s.true_intent == "intended"]
    latencies = []
    for s in intended:
        t = s.decision_time_ms(threshold)
        if t is not None:
            latencies.append(t - s.start_of_speech_ms)
    coverage = len(latencies) / len(intended) if intended else 0.0
    if not latencies:
        return LatencyResult(coverage=coverage, error="no intended utterance crossed the threshold")
    latencies.sort()
    return LatencyResult(
        p50_ms=nearest_rank(latencies, 0.5),
        p90_ms=nearest_rank(latencies, 0.9),
        coverage=coverage,
        n_crossed=len(latencies),
    )


def per_domain_fr(scored: Sequence[ScoredUtterance], threshold: float) -> Dict[str, float]:
    totals: Dict[str, int] = defaultdict(int)
    rejected: Dict[str, int] = defaultdict(int)
    for s in scored:
        if s.true_intent != "intended":
            continue
        totals[s.domain] += 1
        rejected[s.domain] += not s.crosses(threshold)
    return {domain: rejected[domain] / totals[domain] for domain in sorted(totals)}


def wer(hypothesis: Sequence, reference: Sequence) -> float:
    """Levenshtein distance with unit costs over the reference length"""
    if len(reference) == 0:
        raise ArgumentError("wer needs a non-empty reference")
    return editdistance.eval(list(hypothesis), list(reference)) / len(reference)


def corpus_wer(pairs: Iterable[Tuple[Sequence, Sequence]]) -> float:
    """Total edits over total reference tokens"""
    edits = 0
    words = 0
    for hyp, ref in pairs:
        if len(ref) == 0:
            raise ArgumentError("wer needs a non-empty reference")
        edits += editdistance.eval(list(hyp), list(ref))
        words += len(ref)
    if words == 0:
        raise ArgumentError("corpus_wer needs at least one pair")
    return edits / words


class EvaluationService:
    """Reduces scored event streams to the summary record of one detector"""

    def __init__(self, latency_threshold: Optional[float] = None):
        self.latency_threshold = latency_threshold

    def summarize(
        self, model: str, scored: Sequence[ScoredUtterance], wer_value: Optional[float] = None
    ) -> Tuple[EvalSummary, List[DetPoint]]:
        det = det_curve(scored)
        operating = eer(det)
        theta = self.latency_threshold if self.latency_threshold is not None else operating.threshold
        latency = latency_percentiles(scored, theta)
        summary = EvalSummary(
            model=model,
            eer=operating.eer,
            eer_threshold=operating.threshold,
            eer_straddled=operating.straddled,
            latency_threshold=theta,
            p50_ms=latency.p50_ms,
            p90_ms=latency.p90_ms,
            coverage=latency.coverage,
            per_domain_fr=per_domain_fr(scored, theta),
            wer=wer_value,
        )
        logger.info(
            "detector_evaluated",
            model=model,
            eer=summary.eer,
            p50_ms=summary.p50_ms,
            p90_ms=summary.p90_ms,
            coverage=summary.coverage,
        )
        return summary, det


def format_summary_table(summaries: Sequence[EvalSummary]) -> str:
    def ms(v: Optional[float]) -> str:
        return f"{v:.0f}" if v is not None else "-"

    lines = [f"{'model':<14} {'EER':>7} {'p50_ms':>8} {'p90_ms':>8}"]
    for s in summaries:
        lines.append(f"{s.model:<14} {100 * s.eer:>6.1f}% {ms(s.p50_ms):>8} {ms(s.p90_ms):>8}")
    return "\n".join(lines)
