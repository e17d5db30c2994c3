from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from app.core.errors import ArgumentError
from app.core.logging import get_logger
from app.models.detectors import (
    AcousticDetectorParams,
    AcousticTextParams,
    acoustic_frame_loss,
    acoustic_layer_outputs,
    acoustic_posteriors,
    acoustic_text_loss,
    acoustic_text_posterior,
    init_acoustic_params,
    init_acoustic_text_params,
    intent_class,
)
from app.schemas.baselines import AcousticDetectorConfig, AcousticTextConfig, StateMachineConfig
from app.schemas.corpus import Utterance
from app.schemas.decoding import DecisionConfig, DecisionEvent, DecodeResult, first_crossing
from app.schemas.training import Checkpoint
from app.services.decoding import asr_decode, asr_top_beams
from app.services.training import ItemLoss, MinibatchTrainer, guard_numeric

logger = get_logger(__name__)


class DetectorFit(NamedTuple):
    params: object
    steps: int
    loss_history: List[float]


class FrameStateMachine:
    """Declares intended at the k_on-th consecutive frame with posterior above frame_threshold"""

    def __init__(self, config: StateMachineConfig):
        self.config = config
        self.frame = 0
        self.run = 0
        self.fired_at: Optional[int] = None

    def update(self, posterior: float) -> bool:
        """Feed one frame; True exactly on the frame where the machine fires"""
        self.frame += 1
        self.run = self.run + 1 if posterior > self.config.frame_threshold else 0
        if self.fired_at is None and self.run >= self.config.k_on:
            self.fired_at = self.frame
            return True
        return False


def state_machine_decision(posteriors: Sequence[float], config: StateMachineConfig) -> Optional[int]:
    """1-based frame index at which the state machine fires, if it does"""
    machine = FrameStateMachine(config)
    for p in posteriors:
        if machine.update(float(p)):
            return machine.fired_at
    return None


def _require_corpus(corpus: Sequence[Utterance]) -> None:
    if not corpus:
        raise ArgumentError("detector training needs a non-empty corpus")


def fit_acoustic_detector(
    corpus: Sequence[Utterance], config: AcousticDetectorConfig, jobs: Optional[int] = None
) -> DetectorFit:
    _require_corpus(corpus)
    train = config.train
    params = init_acoustic_params(config, corpus[0].features.shape[1], train.seed)
    trainer = MinibatchTrainer(train.optimizer, train.seed, train.batch_size, train.shuffle, jobs)

    @guard_numeric
    def loss_fn(tensors, i: int) -> ItemLoss:
        utt = corpus[i]
        p = AcousticDetectorParams.from_dict(tensors, config.layers)
        return ItemLoss(*acoustic_frame_loss(p, utt.features, intent_class(utt.intent)))

    tensors, steps, history = trainer.fit(
        params.as_dict(),
        len(corpus),
        loss_fn,
        trainable=list(params.as_dict()),
        epochs=train.epochs,
        model="acoustic",
    )
    return DetectorFit(AcousticDetectorParams.from_dict(tensors, config.layers), steps, history)


def train_acoustic_detector(
    corpus: Sequence[Utterance], config: AcousticDetectorConfig, jobs: Optional[int] = None
) -> AcousticDetectorParams:
    return fit_acoustic_detector(corpus, config, jobs).params


def acoustic_detect(
    utterance: Utterance,
    params: AcousticDetectorParams,
    sm: StateMachineConfig,
    frame_period_ms: float,
) -> DecodeResult:
    """One event per input frame; the decision comes from the state machine"""
    posteriors = acoustic_posteriors(params, utterance.features)
    machine = FrameStateMachine(sm)
    events = []
    for frame, p in enumerate(posteriors, start=1):
        machine.update(float(p))
        events.append(
            DecisionEvent(
                encoder_step=frame,
                time_ms=frame * frame_period_ms,
                intended_posterior=float(p),
                crossed=float(p) > sm.frame_threshold,
            )
        )
    fired = machine.fired_at
    return DecodeResult(
        utterance_id=utterance.id,
        detector="acoustic",
        events=events,
        final_decision="intended" if fired is not None else "unintended",
        decision_time_ms=fired * frame_period_ms if fired is not None else None,
    )


def fit_acoustic_text_detector(
    corpus: Sequence[Utterance],
    asr_checkpoint: Checkpoint,
    config: AcousticTextConfig,
    decision_config: Optional[DecisionConfig] = None,
    jobs: Optional[int] = None,
) -> DetectorFit:
    _require_corpus(corpus)
    decision_config = decision_config or DecisionConfig()
    train = config.train
    asr_params, model_config = asr_checkpoint.params, asr_checkpoint.config
    params = init_acoustic_text_params(config, corpus[0].features.shape[1], model_config.vocab_size, train.seed)
    trainer = MinibatchTrainer(train.optimizer, train.seed, train.batch_size, train.shuffle, jobs)
    # Full-utterance recognizer hypotheses are fixed inputs to the text pathway
    hypotheses = trainer.map(
        lambda utt: asr_decode(utt.features, asr_params, model_config, decision_config), list(corpus)
    )
    logger.info("asr_hypotheses_ready", utterances=len(hypotheses))

    @guard_numeric
    def loss_fn(tensors, i: int) -> ItemLoss:
        utt = corpus[i]
        p = AcousticTextParams.from_dict(tensors, config.layers)
        return ItemLoss(*acoustic_text_loss(p, utt.features, hypotheses[i], intent_class(utt.intent), config))

    tensors, steps, history = trainer.fit(
        params.as_dict(),
        len(corpus),
        loss_fn,
        trainable=list(params.as_dict()),
        epochs=train.epochs,
        model="acoustic_text",
    )
    return DetectorFit(AcousticTextParams.from_dict(tensors, config.layers), steps, history)


def train_acoustic_text_detector(
    corpus: Sequence[Utterance],
    asr_checkpoint: Checkpoint,
    config: AcousticTextConfig,
    decision_config: Optional[DecisionConfig] = None,
    jobs: Optional[int] = None,
) -> AcousticTextParams:
    return fit_acoustic_text_detector(corpus, asr_checkpoint, config, decision_config, jobs).params


def evaluation_points(steps: int, stride: Optional[int]) -> List[int]:
    """Every stride-th encoder step plus the last one: ceil(steps / stride) points"""
    if steps < 1:
        return []
    if stride is None:
        return [steps]
    points = list(range(stride, steps + 1, stride))
    if not points or points[-1] != steps:
        points.append(steps)
    return points


def acoustic_text_detect(
    utterance: Utterance,
    params: AcousticTextParams,
    asr_checkpoint: Checkpoint,
    threshold: float,
    eval_stride: Optional[int],
    config: AcousticTextConfig,
    decision_config: Optional[DecisionConfig] = None,
) -> DecodeResult:
    """
    Re-scores the utterance at each evaluation point with the acoustic
    embedding of the frames seen so far and the recognizer's partial
    hypothesis at that step.
    """
    decision_config = decision_config or DecisionConfig()
    model_config = asr_checkpoint.config
    tops = asr_top_beams(utterance.features, asr_checkpoint.params, model_config, decision_config)
    outputs, _ = acoustic_layer_outputs(params, utterance.features, config.embedding_layer)
    factor = model_config.time_reduction_factor
    step_ms = decision_config.frame_period_ms * factor
    events = []
    for step in evaluation_points(len(tops), eval_stride):
        last_frame = min(step * factor, outputs.shape[0])
        p = acoustic_text_posterior(outputs[last_frame - 1], tops[step - 1].label_history, params, config)
        events.append(
            DecisionEvent(encoder_step=step, time_ms=step * step_ms, intended_posterior=p, crossed=p >= threshold)
        )
    crossing = first_crossing(events)
    return DecodeResult(
        utterance_id=utterance.id,
        detector="acoustic_text",
        hypothesis=list(tops[-1].label_history),
        events=events,
        final_decision="intended" if crossing is not None else "unintended",
        decision_time_ms=crossing.time_ms if crossing is not None else None,
    )
