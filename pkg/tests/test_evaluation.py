import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.errors import ArgumentError
from app.schemas.decoding import DecisionEvent, DecodeResult
from app.schemas.evaluation import DetPoint, EvalSummary, ScoredUtterance
from app.services.evaluation import (
    EvaluationService,
    corpus_wer,
    det_curve,
    det_thresholds,
    eer,
    format_summary_table,
    latency_percentiles,
    nearest_rank,
    per_domain_fr,
    score_result,
    wer,
)
from tests.oracles import edit_distance, sweep_eer


def stream(uid, intent, posteriors, domain="media", start=0.0, k_on=1, strict=False, period=20.0):
    return ScoredUtterance(
        id=uid,
        domain=domain,
        true_intent=intent,
        posteriors=posteriors,
        times_ms=[period * (i + 1) for i in range(len(posteriors))],
        start_of_speech_ms=start,
        k_on=k_on,
        strict=strict,
    )


@pytest.fixture
def four_streams():
    """Intended scores 0.9 and 0.6, unintended scores 0.7 and 0.2"""
    return [
        stream("p1", "intended", [0.1, 0.9, 0.4]),
        stream("p2", "intended", [0.6, 0.3], domain="alarm"),
        stream("n1", "unintended", [0.7, 0.5], domain="chatter"),
        stream("n2", "unintended", [0.2], domain="chatter"),
    ]


class TestScoredUtterance:
    @pytest.mark.parametrize(
        "posteriors, k_on, expected",
        [
            ([0.2, 0.9, 0.8, 0.1], 1, 0.9),
            ([0.2, 0.9, 0.8, 0.1], 2, 0.8),
            ([0.2, 0.9, 0.8, 0.1], 4, 0.1),
            ([0.9], 2, float("-inf")),
        ],
    )
    def test_score_is_best_window_minimum(self, posteriors, k_on, expected):
        assert stream("u", "intended", posteriors, k_on=k_on).score == expected

    def test_short_stream_never_crosses(self):
        assert not stream("u", "intended", [0.9], k_on=2).crosses(0.0)

    def test_decision_time_needs_consecutive_run(self):
        s = stream("u", "intended", [0.2, 0.9, 0.8], k_on=2)
        assert s.decision_time_ms(0.8) == 60.0
        assert s.decision_time_ms(0.85) is None

    def test_strict_comparison(self):
        s = stream("u", "intended", [0.2, 0.9, 0.8], k_on=2, strict=True)
        assert s.decision_time_ms(0.8) is None
        assert not s.crosses(0.8)
        assert s.crosses(0.79)

    def test_one_time_per_posterior(self):
        with pytest.raises(ValueError):
            ScoredUtterance(id="u", domain="d", true_intent="intended", posteriors=[0.1, 0.2], times_ms=[10.0])


class TestDet:
    def test_threshold_grid(self, four_streams):
        assert det_thresholds(four_streams) == [0.0, 0.2, 0.6, 0.7, 0.9, 1.0]

    def test_curve(self, four_streams):
        rates = {p.threshold: (p.false_accept_rate, p.false_reject_rate) for p in det_curve(four_streams)}
        assert rates[0.0] == (1.0, 0.0)
        assert rates[0.6] == (0.5, 0.0)
        assert rates[0.7] == (0.5, 0.5)
        assert rates[0.9] == (0.0, 0.5)
        assert rates[1.0] == (0.0, 1.0)

    def test_rates_are_monotone(self, four_streams):
        points = det_curve(four_streams)
        fa = [p.false_accept_rate for p in points]
        fr = [p.false_reject_rate for p in points]
        assert fa == sorted(fa, reverse=True)
        assert fr == sorted(fr)

    def test_matches_counting_sweep(self):
        rng = np.random.default_rng(7)
        scores = np.round(rng.uniform(size=1000), 3)
        intents = rng.random(1000) < 0.5
        scored = [
            stream(f"u{i}", "intended" if pos else "unintended", [float(s)])
            for i, (s, pos) in enumerate(zip(scores, intents))
        ]
        pos, neg = scores[intents], scores[~intents]
        for point in det_curve(scored):
            assert point.false_accept_rate == np.count_nonzero(neg >= point.threshold) / neg.size
            assert point.false_reject_rate == np.count_nonzero(pos < point.threshold) / pos.size
        result = eer(det_curve(scored))
        assert result.straddled
        assert abs(result.eer - 0.5) < 0.1

    def test_explicit_thresholds(self, four_streams):
        points = det_curve(four_streams, thresholds=[0.95, 0.5])
        assert [p.threshold for p in points] == [0.5, 0.95]

    def test_needs_both_classes(self, four_streams):
        with pytest.raises(ArgumentError):
            det_curve(four_streams[:2])


class TestEer:
    def test_exact_point(self, four_streams):
        result = eer(det_curve(four_streams))
        assert result.eer == 0.5
        assert result.threshold == 0.7
        assert result.straddled

    def test_interpolated(self):
        det = [
            DetPoint(threshold=0.0, false_accept_rate=0.6, false_reject_rate=0.2),
            DetPoint(threshold=1.0, false_accept_rate=0.2, false_reject_rate=0.6),
        ]
        result = eer(det)
        assert result.eer == pytest.approx(0.4)
        assert result.threshold == pytest.approx(0.5)
        assert result.straddled

    def test_no_sign_change_uses_closest_point(self):
        det = [
            DetPoint(threshold=0.0, false_accept_rate=0.8, false_reject_rate=0.1),
            DetPoint(threshold=1.0, false_accept_rate=0.5, false_reject_rate=0.3),
        ]
        result = eer(det)
        assert result.eer == pytest.approx(0.4)
        assert result.threshold == 1.0
        assert not result.straddled

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_exhaustive_sweep(self, seed):
        rng = np.random.default_rng(seed)
        intents = rng.random(1000) < 0.4
        scores = np.round(np.where(intents, rng.beta(4, 2, 1000), rng.beta(2, 4, 1000)), 3)
        scored = [
            stream(f"u{i}", "intended" if pos else "unintended", [float(s)])
            for i, (s, pos) in enumerate(zip(scores, intents))
        ]
        result = eer(det_curve(scored))
        assert result.eer == pytest.approx(sweep_eer(scores[intents], scores[~intents]), abs=1e-12)
        assert 0.1 < result.eer < 0.5

    def test_empty(self):
        with pytest.raises(ArgumentError):
            eer([])


class TestLatency:
    @pytest.mark.parametrize("p, expected", [(0.5, 20), (0.9, 40), (0.25, 10), (1.0, 40), (0.0, 10)])
    def test_nearest_rank(self, p, expected):
        assert nearest_rank([10, 20, 30, 40], p) == expected

    @given(st.lists(st.floats(0, 1e4), min_size=1, max_size=40), st.sampled_from([0.5, 0.9]))
    @settings(max_examples=100)
    def test_nearest_rank_property(self, values, p):
        ordered = sorted(values)
        r = nearest_rank(ordered, p)
        need = max(1, math.ceil(round(p * len(ordered), 9)))
        assert r in ordered
        assert sum(v <= r for v in ordered) >= need
        assert sum(v < r for v in ordered) < need

    def test_measured_from_start_of_speech(self):
        scored = [
            stream("a", "intended", [0.1, 0.9], start=10.0),
            stream("b", "intended", [0.9], start=0.0),
            stream("c", "intended", [0.1, 0.1]),
            stream("d", "unintended", [0.9]),
        ]
        result = latency_percentiles(scored, 0.5)
        assert result.n_crossed == 2
        assert result.coverage == pytest.approx(2 / 3)
        assert result.p50_ms == 20.0
        assert result.p90_ms == 30.0

    def test_nothing_crossed(self):
        result = latency_percentiles([stream("a", "intended", [0.1])], 0.5)
        assert result.p50_ms is None
        assert result.error is not None
        assert result.coverage == 0.0


class TestPerDomain:
    def test_false_reject_by_domain(self, four_streams):
        assert per_domain_fr(four_streams, 0.7) == {"alarm": 1.0, "media": 0.0}


class TestWer:
    @pytest.mark.parametrize(
        "hyp, ref, expected",
        [
            (["a", "b"], ["a", "b"], 0.0),
            (["a"], ["a", "b"], 0.5),
            (["a", "x", "b"], ["a", "b"], 0.5),
            ([], ["a", "b", "c", "d"], 1.0),
        ],
    )
    def test_cases(self, hyp, ref, expected):
        assert wer(hyp, ref) == expected

    @given(st.lists(st.integers(1, 4), max_size=8), st.lists(st.integers(1, 4), min_size=1, max_size=8))
    @settings(max_examples=200)
    def test_matches_levenshtein(self, hyp, ref):
        assert wer(hyp, ref) == pytest.approx(edit_distance(hyp, ref) / len(ref))

    @given(
        st.lists(st.integers(1, 4), min_size=1, max_size=8),
        st.lists(st.integers(1, 4), min_size=1, max_size=8),
        st.lists(st.integers(1, 4), min_size=1, max_size=8),
    )
    @settings(max_examples=200)
    def test_triangle_bound(self, a, b, c):
        # Scaled by reference length: edit(a, c) <= edit(a, b) + edit(b, c)
        assert wer(a, c) * len(c) <= wer(a, b) * len(b) + wer(b, c) * len(c) + 1e-9

    @given(st.lists(st.integers(1, 4), min_size=1, max_size=10), st.data())
    @settings(max_examples=100)
    def test_single_edit_costs_one_word(self, ref, data):
        n = len(ref)
        i = data.draw(st.integers(0, n - 1))
        substituted = ref[:i] + [ref[i] + 10] + ref[i + 1:]
        inserted = ref[:i] + [99] + ref[i:]
        deleted = ref[:i] + ref[i + 1:]
        assert wer(ref, ref) == 0.0
        assert wer(substituted, ref) == pytest.approx(1 / n)
        assert wer(inserted, ref) == pytest.approx(1 / n)
        assert wer(deleted, ref) == pytest.approx(1 / n)

    def test_empty_reference(self):
        with pytest.raises(ArgumentError):
            wer([1], [])

    def test_corpus_pools_edits(self):
        assert corpus_wer([([1], [1, 2]), ([3, 4], [3, 4])]) == pytest.approx(0.25)
        with pytest.raises(ArgumentError):
            corpus_wer([])


class TestEvaluationService:
    def test_summary_at_eer_threshold(self, four_streams):
        summary, det = EvaluationService().summarize("e2e", four_streams, wer_value=0.1)
        assert summary.eer == 0.5
        assert summary.latency_threshold == 0.7
        assert summary.per_domain_fr == {"alarm": 1.0, "media": 0.0}
        assert summary.coverage == 0.5
        assert summary.p50_ms == 40.0
        assert summary.wer == 0.1
        assert len(det) == 6

    def test_fixed_latency_threshold(self, four_streams):
        summary, _ = EvaluationService(latency_threshold=0.5).summarize("e2e", four_streams)
        assert summary.latency_threshold == 0.5
        assert summary.coverage == 1.0
        assert summary.p90_ms == 40.0

    def test_table(self):
        rows = [
            EvalSummary(model="e2e", eer=0.05, eer_threshold=0.5, latency_threshold=0.5, p50_ms=320.0, p90_ms=610.0),
            EvalSummary(model="acoustic", eer=0.1, eer_threshold=0.4, latency_threshold=0.4),
        ]
        lines = format_summary_table(rows).splitlines()
        assert lines[0].split() == ["model", "EER", "p50_ms", "p90_ms"]
        assert lines[1].split() == ["e2e", "5.0%", "320", "610"]
        assert lines[2].split() == ["acoustic", "10.0%", "-", "-"]


class TestScoreResult:
    def test_from_decode_result(self, tiny_corpus):
        _, utterances = tiny_corpus
        utt = utterances[0]
        events = [
            DecisionEvent(encoder_step=1, time_ms=20.0, intended_posterior=0.3, crossed=False),
            DecisionEvent(encoder_step=2, time_ms=40.0, intended_posterior=0.8, crossed=True),
        ]
        result = DecodeResult(utterance_id=utt.id, events=events, final_decision="intended", decision_time_ms=40.0)
        scored = score_result(result, utt, frame_period_ms=10.0)
        assert scored.posteriors == [0.3, 0.8]
        assert scored.times_ms == [20.0, 40.0]
        assert scored.start_of_speech_ms == utt.start_of_speech_frame * 10.0
        assert scored.true_intent == utt.intent

    def test_empty_stream(self, tiny_corpus):
        _, utterances = tiny_corpus
        result = DecodeResult(utterance_id="x", final_decision="unintended")
        with pytest.raises(ArgumentError):
            score_result(result, utterances[0], 10.0)
