"""
Streaming decoding: time-synchronous beam search over the ASR joint and one
intended-query decision per encoder step from the IQ joint.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ArgumentError, NumericError, ShapeError
from app.core.logging import get_logger
from app.models.transducer import (
    JointParams,
    StreamingEncoder,
    TransducerParams,
    context_ids,
    encode,
    joint_logits,
    predict_from_context,
)
from app.numkernel.ops import log_softmax, softmax
from app.schemas.corpus import Utterance
from app.schemas.decoding import DecisionConfig, DecisionEvent, DecodeResult, first_crossing
from app.schemas.model import ModelConfig
from app.schemas.training import Checkpoint

logger = get_logger(__name__)

History = Tuple[int, ...]
# (label history, encoder state) -> log-probabilities over blank and wordpieces
Scorer = Callable[[History, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BeamHypothesis:
    label_history: History
    log_prob: float
    prediction_state_cache: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @classmethod
    def initial(cls) -> "BeamHypothesis":
        return cls((), 0.0)


class TransducerScorer:
    """ASR-joint scorer with prediction outputs memoized by N-gram context"""

    def __init__(self, params: TransducerParams, config: ModelConfig):
        self.params = params
        self.config = config
        self._pred: Dict[History, np.ndarray] = {}

    def prediction(self, history: History) -> np.ndarray:
        ctx = context_ids(history, self.config)
        out = self._pred.get(ctx)
        if out is None:
            out = predict_from_context(ctx, self.params.prediction)
            self._pred[ctx] = out
        return out

    def __call__(self, history: History, enc_state: np.ndarray) -> np.ndarray:
        return log_softmax(joint_logits(enc_state, self.prediction(history), self.params.asr_joint))


def _rank_key(hyp: BeamHypothesis, finished: bool):
    return (-hyp.log_prob, hyp.label_history, 0 if finished else 1)


def _merge(pool: Dict[History, float], history: History, log_prob: float) -> None:
    if history in pool:
        pool[history] = float(np.logaddexp(pool[history], log_prob))
    else:
        pool[history] = log_prob


def beam_search_step(
    beams: Sequence[BeamHypothesis],
    enc_state: np.ndarray,
    scorer: Scorer,
    config: DecisionConfig,
) -> List[BeamHypothesis]:
    """
    Consume one encoder state. Every round expands the open hypotheses with
    blank (finishing them for this step) or a wordpiece (keeping them open);
    finished and open candidates compete for beam_size slots. After
    max_symbols_per_step label rounds only blank remains. Finished hypotheses
    with equal histories are merged by log-add.
    """
    if not beams:
        raise ArgumentError("beam_search_step needs at least one hypothesis")
    k = config.beam_size
    finished: Dict[History, float] = {}
    open_beams: List[BeamHypothesis] = list(beams)
    for round_index in range(config.max_symbols_per_step + 1):
        allow_labels = round_index < config.max_symbols_per_step
        extended: Dict[History, float] = {}
        for hyp in open_beams:
            log_probs = scorer(hyp.label_history, enc_state)
            if np.isfinite(log_probs[0]):
                _merge(finished, hyp.label_history, hyp.log_prob + float(log_probs[0]))
            if not allow_labels:
                continue
            # No hypothesis needs more than k of its own label extensions
            order = np.argsort(-log_probs[1:], kind="stable")[:k] + 1
            for token in order:
                if np.isfinite(log_probs[token]):
                    _merge(extended, hyp.label_history + (int(token),), hyp.log_prob + float(log_probs[token]))

        pool = [(BeamHypothesis(h, lp), True) for h, lp in finished.items()]
        pool += [(BeamHypothesis(h, lp), False) for h, lp in extended.items()]
        pool.sort(key=lambda item: _rank_key(*item))
        kept = pool[:k]
        finished = {hyp.label_history: hyp.log_prob for hyp, done in kept if done}
        open_beams = [hyp for hyp, done in kept if not done]
        if not open_beams:
            break

    result = [BeamHypothesis(h, lp) for h, lp in finished.items()]
    if not result:
        raise NumericError("no hypothesis can emit blank at this step")
    result.sort(key=lambda hyp: _rank_key(hyp, True))
    return result


def intended_posterior_from_logits(logits: np.ndarray, intended_id: int, renormalize: bool = False) -> float:
    probs = softmax(np.asarray(logits, dtype=np.float64))
    p_int = float(probs[intended_id])
    if not renormalize:
        return p_int
    p_unint = float(probs[intended_id + 1])
    total = p_int + p_unint
    return p_int / total if total > 0 else 0.5


def iq_posterior(
    top_beam: BeamHypothesis,
    enc_state: np.ndarray,
    params: TransducerParams,
    config: ModelConfig,
    renormalize: bool = False,
    iq_joint: Optional[JointParams] = None,
) -> float:
    """
    P(<intended>) from the IQ joint given the top hypothesis' wordpiece history:
    softmax mass over all vocab+2 outputs, or <intended> against <unintended>
    only when renormalize is set.
    """
    joint = iq_joint if iq_joint is not None else params.iq_joint
    if joint is None:
        raise ArgumentError("iq_posterior needs an IQ joint")
    pred = top_beam.prediction_state_cache
    if pred is None:
        pred = predict_from_context(context_ids(top_beam.label_history, config), params.prediction)
    return intended_posterior_from_logits(joint_logits(enc_state, pred, joint), config.vocab_size, renormalize)


class AsrStream:
    """Beam search state for one stream; the ASR half of a decode session"""

    def __init__(self, params: TransducerParams, model_config: ModelConfig, config: DecisionConfig):
        self.scorer = TransducerScorer(params, model_config)
        self.config = config
        self.beams: List[BeamHypothesis] = [BeamHypothesis.initial()]

    def advance(self, enc_state: np.ndarray) -> BeamHypothesis:
        self.beams = beam_search_step(self.beams, enc_state, self.scorer, self.config)
        top = self.beams[0]
        return BeamHypothesis(top.label_history, top.log_prob, self.scorer.prediction(top.label_history))

    @property
    def hypothesis(self) -> List[int]:
        return list(self.beams[0].label_history)


def asr_top_beams(
    features: np.ndarray, params: TransducerParams, model_config: ModelConfig, config: DecisionConfig
) -> List[BeamHypothesis]:
    """Top hypothesis after every encoder step"""
    stream = AsrStream(params, model_config, config)
    return [stream.advance(state) for state in encode(features, params, model_config)]


def asr_decode(
    features: np.ndarray, params: TransducerParams, model_config: ModelConfig, config: DecisionConfig
) -> List[int]:
    tops = asr_top_beams(features, params, model_config, config)
    return list(tops[-1].label_history)


class StreamingSession:
    """
    Incremental end-to-end IQ decoding: frames in, one DecisionEvent out per
    completed encoder step. finish() flushes the partial reduction group.
    """

    def __init__(self, checkpoint: Checkpoint, config: DecisionConfig, utterance_id: str = ""):
        if checkpoint.stage != 2 or checkpoint.params.iq_joint is None:
            raise ArgumentError("streaming IQ decoding needs a stage-2 checkpoint")
        self.params: TransducerParams = checkpoint.params
        self.model_config: ModelConfig = checkpoint.config
        self.config = config
        self.utterance_id = utterance_id
        self.encoder = StreamingEncoder(self.params, self.model_config)
        self.asr = AsrStream(self.params, self.model_config, config)
        self.events: List[DecisionEvent] = []
        self._finished = False

    @property
    def step_ms(self) -> float:
        return self.config.frame_period_ms * self.model_config.time_reduction_factor

    def _advance(self, enc_state: np.ndarray) -> DecisionEvent:
        top = self.asr.advance(enc_state)
        posterior = iq_posterior(top, enc_state, self.params, self.model_config, self.config.renormalize_iq)
        step = len(self.events) + 1
        event = DecisionEvent(
            encoder_step=step,
            time_ms=step * self.step_ms,
            intended_posterior=posterior,
            crossed=posterior >= self.config.intended_threshold,
        )
        self.events.append(event)
        logger.debug("decision_event", utterance_id=self.utterance_id, step=step, posterior=posterior)
        return event

    def accept_frames(self, frames: Iterable[np.ndarray]) -> List[DecisionEvent]:
        if self._finished:
            raise ArgumentError("session already finished")
        new_events = []
        for frame in frames:
            state = self.encoder.accept_frame(frame)
            if state is not None:
                new_events.append(self._advance(state))
        return new_events

    def finish(self) -> DecodeResult:
        if not self._finished:
            state = self.encoder.flush()
            if state is not None:
                self._advance(state)
            self._finished = True
        if not self.events:
            raise ArgumentError("cannot decode an empty feature sequence")
        crossing = first_crossing(self.events)
        return DecodeResult(
            utterance_id=self.utterance_id,
            detector="e2e",
            hypothesis=self.asr.hypothesis,
            events=list(self.events),
            final_decision="intended" if crossing is not None else "unintended",
            decision_time_ms=crossing.time_ms if crossing is not None else None,
        )


def _check_features(features: np.ndarray, config: ModelConfig) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.feature_dim:
        raise ShapeError(f"features have shape {x.shape}, expected (frames, {config.feature_dim})")
    if x.shape[0] == 0:
        raise ArgumentError("cannot decode an empty feature sequence")
    return x


def stream_decode(utterance: Utterance, checkpoint: Checkpoint, config: DecisionConfig) -> DecodeResult:
    features = _check_features(utterance.features, checkpoint.config)
    session = StreamingSession(checkpoint, config, utterance_id=utterance.id)
    session.accept_frames(features)
    result = session.finish()
    logger.debug(
        "utterance_decoded",
        utterance_id=utterance.id,
        final_decision=result.final_decision,
        decision_time_ms=result.decision_time_ms,
    )
    return result
