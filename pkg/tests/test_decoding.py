import itertools

import numpy as np
import pytest

from app.core.errors import ArgumentError, NumericError
from app.models.transducer import encode
from app.numkernel.ops import log_softmax
from app.schemas.corpus import Utterance
from app.schemas.decoding import DecisionConfig, DecisionEvent, first_crossing
from app.schemas.model import ModelConfig
from app.schemas.training import Checkpoint
from app.services.decoding import (
    AsrStream,
    BeamHypothesis,
    StreamingSession,
    TransducerScorer,
    asr_decode,
    beam_search_step,
    intended_posterior_from_logits,
    iq_posterior,
    stream_decode,
)
from app.services.training import init_params
from tests.oracles import bias_encoder_states


def make_utterance(features, uid="u1", intent="intended"):
    n = features.shape[0]
    return Utterance(
        id=uid,
        domain="test",
        intent=intent,
        transcript=[1],
        features=features.astype(np.float32),
        start_of_speech_frame=0,
        token_alignment=[(0, n)],
    )


def greedy_decode(enc_states, scorer, max_symbols):
    history = ()
    for state in enc_states:
        for _ in range(max_symbols):
            token = int(np.argmax(scorer(history, state)))
            if token == 0:
                break
            history += (token,)
    return list(history)


def fixed_scorer(logits):
    log_probs = log_softmax(np.asarray(logits, dtype=np.float64))
    return lambda history, state: log_probs


class TestBeamSearchStep:
    def test_beam_one_is_greedy(self, small_model_config, small_params, rng):
        features = rng.normal(size=(12, 4)) * 2.0
        enc = encode(features, small_params, small_model_config)
        scorer = TransducerScorer(small_params, small_model_config)
        config = DecisionConfig(beam_size=1, max_symbols_per_step=3)
        beams = [BeamHypothesis.initial()]
        for state in enc:
            beams = beam_search_step(beams, state, scorer, config)
            assert len(beams) == 1
        assert list(beams[0].label_history) == greedy_decode(enc, scorer, 3)

    def test_forced_blank_after_max_symbols(self):
        scorer = fixed_scorer([0.0, 10.0, 0.0])
        config = DecisionConfig(beam_size=1, max_symbols_per_step=2)
        beams = [BeamHypothesis.initial()]
        for _ in range(3):
            beams = beam_search_step(beams, np.zeros(1), scorer, config)
        assert beams[0].label_history == (1,) * 6

    def test_blank_heavy_scorer_emits_nothing(self):
        scorer = fixed_scorer([10.0, 0.0, 0.0])
        beams = beam_search_step([BeamHypothesis.initial()], np.zeros(1), scorer, DecisionConfig(beam_size=3))
        assert beams[0].label_history == ()

    def test_wide_beam_matches_exhaustive_enumeration(self, rng):
        config = ModelConfig(feature_dim=2, encoder_layers=1, encoder_width=3, time_reduction_factor=1,
                             time_reduction_after_layer=0, prediction_context=1, embedding_dim=2,
                             joint_width=3, vocab_size=3)
        params = init_params(config, seed=9)
        scorer = TransducerScorer(params, config)
        enc = rng.normal(size=(2, 3))

        # At most one label per step: each step chooses nothing, label 1 or label 2, then blank
        oracle = {}
        for choice in itertools.product([None, 1, 2], repeat=2):
            history, total = (), 0.0
            for state, label in zip(enc, choice):
                if label is not None:
                    total += scorer(history, state)[label]
                    history += (label,)
                total += scorer(history, state)[0]
            oracle[history] = np.logaddexp(oracle.get(history, -np.inf), total)

        beams = [BeamHypothesis.initial()]
        decision = DecisionConfig(beam_size=64, max_symbols_per_step=1)
        for state in enc:
            beams = beam_search_step(beams, state, scorer, decision)
        got = {b.label_history: b.log_prob for b in beams}
        assert set(got) == set(oracle)
        for history, lp in oracle.items():
            assert got[history] == pytest.approx(lp, abs=1e-10)

    def test_beams_sorted_and_bounded(self, small_model_config, small_params, rng):
        enc = rng.normal(size=(3, 3))
        scorer = TransducerScorer(small_params, small_model_config)
        beams = [BeamHypothesis.initial()]
        for state in enc:
            beams = beam_search_step(beams, state, scorer, DecisionConfig(beam_size=3))
            assert len(beams) <= 3
            log_probs = [b.log_prob for b in beams]
            assert log_probs == sorted(log_probs, reverse=True)

    def test_empty_beam(self):
        with pytest.raises(ArgumentError):
            beam_search_step([], np.zeros(1), fixed_scorer([0.0, 0.0]), DecisionConfig())

    def test_no_blank_mass(self):
        scorer = fixed_scorer([-np.inf, 0.0])
        with pytest.raises(NumericError):
            beam_search_step([BeamHypothesis.initial()], np.zeros(1), scorer, DecisionConfig(max_symbols_per_step=1))


class TestIqPosterior:
    def test_raw_softmax_mass(self):
        assert intended_posterior_from_logits(np.zeros(5), intended_id=3) == pytest.approx(0.2)

    def test_renormalized(self):
        assert intended_posterior_from_logits(np.zeros(5), intended_id=3, renormalize=True) == pytest.approx(0.5)

    def test_dominant_intended_logit(self):
        logits = np.array([0.0, 0.0, 0.0, 20.0, 0.0])
        assert intended_posterior_from_logits(logits, 3) > 0.999

    def test_uses_top_beam_history(self, small_model_config, small_params, rng):
        enc_state = rng.normal(size=3)
        cached = AsrStream(small_params, small_model_config, DecisionConfig()).advance(enc_state)
        bare = BeamHypothesis(cached.label_history, cached.log_prob)
        assert iq_posterior(cached, enc_state, small_params, small_model_config) == pytest.approx(
            iq_posterior(bare, enc_state, small_params, small_model_config)
        )

    def test_needs_iq_joint(self, small_model_config, rng):
        params = init_params(small_model_config, seed=2)
        with pytest.raises(ArgumentError):
            iq_posterior(BeamHypothesis.initial(), rng.normal(size=3), params, small_model_config)


class TestStreamingSession:
    def test_one_event_per_encoder_step(self, stage2_checkpoint, decision_config, rng):
        result = stream_decode(make_utterance(rng.normal(size=(9, 4))), stage2_checkpoint, decision_config)
        assert [e.encoder_step for e in result.events] == [1, 2, 3, 4, 5]
        assert [e.time_ms for e in result.events] == [20.0, 40.0, 60.0, 80.0, 100.0]

    def test_threshold_zero_fires_at_first_step(self, stage2_checkpoint, rng):
        config = DecisionConfig(intended_threshold=0.0)
        result = stream_decode(make_utterance(rng.normal(size=(6, 4))), stage2_checkpoint, config)
        assert result.final_decision == "intended"
        assert result.decision_time_ms == 20.0
        assert all(e.crossed for e in result.events)

    def test_threshold_above_one_never_fires(self, stage2_checkpoint, rng):
        config = DecisionConfig(intended_threshold=1.01)
        result = stream_decode(make_utterance(rng.normal(size=(6, 4))), stage2_checkpoint, config)
        assert result.final_decision == "unintended"
        assert result.decision_time_ms is None
        assert not any(e.crossed for e in result.events)

    def test_decision_at_first_crossing_step(self, crafted_checkpoint, silent_utterance):
        # Posteriors 0.3 then 0.9: p = e^z / (e^z + 3) with three zero logits beside <intended>
        s1, s2 = bias_encoder_states(2)
        z1, z2 = np.log(0.3 * 3 / 0.7), np.log(0.9 * 3 / 0.1)
        slope = (z2 - z1) / (s2 - s1)
        checkpoint = crafted_checkpoint(iq_slope=slope, iq_offset=z1 - slope * s1)
        config = DecisionConfig(intended_threshold=0.5, beam_size=1, frame_period_ms=10.0)
        result = stream_decode(silent_utterance(3), checkpoint, config)
        posteriors = [e.intended_posterior for e in result.events]
        assert posteriors[:2] == pytest.approx([0.3, 0.9], abs=1e-9)
        assert [e.crossed for e in result.events] == [False, True, True]
        assert result.final_decision == "intended"
        assert result.decision_time_ms == 20.0
        assert result.hypothesis == []

    @pytest.mark.parametrize("seed", range(50))
    def test_prefix_events_are_identical(self, stage2_checkpoint, decision_config, seed):
        features = np.random.default_rng(seed).normal(size=(14, 4))
        full = stream_decode(make_utterance(features), stage2_checkpoint, decision_config)
        prefix = stream_decode(make_utterance(features[:8]), stage2_checkpoint, decision_config)
        assert prefix.events == full.events[:4]

    def test_incremental_frames_match_batch(self, stage2_checkpoint, decision_config, rng):
        features = rng.normal(size=(10, 4))
        session = StreamingSession(stage2_checkpoint, decision_config, "u1")
        events = session.accept_frames(features[:3]) + session.accept_frames(features[3:])
        result = session.finish()
        assert events == result.events
        assert result == stream_decode(make_utterance(features), stage2_checkpoint, decision_config)

    def test_hypothesis_matches_asr_decode(self, stage2_checkpoint, decision_config, rng):
        features = rng.normal(size=(10, 4))
        result = stream_decode(make_utterance(features), stage2_checkpoint, decision_config)
        assert result.hypothesis == asr_decode(
            features, stage2_checkpoint.params, stage2_checkpoint.config, decision_config
        )

    def test_requires_stage_two(self, small_model_config):
        checkpoint = Checkpoint(config=small_model_config, params=init_params(small_model_config, 1), stage=1)
        with pytest.raises(ArgumentError):
            StreamingSession(checkpoint, DecisionConfig())

    def test_finish_without_frames(self, stage2_checkpoint):
        with pytest.raises(ArgumentError):
            StreamingSession(stage2_checkpoint, DecisionConfig()).finish()

    def test_accept_after_finish(self, stage2_checkpoint, rng):
        session = StreamingSession(stage2_checkpoint, DecisionConfig())
        session.accept_frames(rng.normal(size=(2, 4)))
        session.finish()
        with pytest.raises(ArgumentError):
            session.accept_frames(rng.normal(size=(2, 4)))


def test_first_crossing_helper():
    events = [
        DecisionEvent(encoder_step=1, time_ms=20, intended_posterior=0.2, crossed=False),
        DecisionEvent(encoder_step=2, time_ms=40, intended_posterior=0.7, crossed=True),
        DecisionEvent(encoder_step=3, time_ms=60, intended_posterior=0.9, crossed=True),
    ]
    assert first_crossing(events).encoder_step == 2
    assert first_crossing(events[:1]) is None
