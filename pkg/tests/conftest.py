import numpy as np
import pytest

from app.models.transducer import zero_params
from app.schemas.baselines import AcousticDetectorConfig, AcousticTextConfig, DetectorTrainConfig, StateMachineConfig
from app.schemas.corpus import Utterance
from app.schemas.decoding import DecisionConfig
from app.schemas.model import ModelConfig
from app.schemas.optim import OptimizerConfig
from app.schemas.training import Checkpoint, TrainConfig
from app.services.corpus import default_corpus_spec, generate_corpus
from app.services.labeling import LabelingService, grammar_from_domains
from app.services.training import init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model_config():
    """Four outputs: blank and three wordpieces"""
    return ModelConfig(
        feature_dim=4,
        encoder_layers=2,
        encoder_width=3,
        time_reduction_factor=2,
        time_reduction_after_layer=1,
        prediction_context=2,
        embedding_dim=3,
        joint_width=4,
        vocab_size=4,
    )


@pytest.fixture
def small_params(small_model_config):
    return init_params(small_model_config, seed=3, with_iq=True)


@pytest.fixture
def stage2_checkpoint(small_model_config, small_params):
    return Checkpoint(config=small_model_config, params=small_params, stage=2, step=0)


@pytest.fixture
def decision_config():
    return DecisionConfig(beam_size=3, max_symbols_per_step=2, frame_period_ms=10.0)


@pytest.fixture(scope="session")
def tiny_spec():
    return default_corpus_spec(
        n_intended=6,
        n_unintended=6,
        eval_intended=4,
        eval_unintended=4,
        feature_dim=6,
    )


@pytest.fixture(scope="session")
def tiny_corpus(tiny_spec):
    """Labeled train split; treat as read-only"""
    vocab, utterances = generate_corpus(tiny_spec, "train")
    LabelingService(grammar_from_domains(tiny_spec), vocab).label_corpus(utterances)
    return vocab, utterances


@pytest.fixture(scope="session")
def tiny_model_config(tiny_spec, tiny_corpus):
    vocab, _ = tiny_corpus
    return ModelConfig(
        feature_dim=tiny_spec.feature_dim,
        encoder_layers=2,
        encoder_width=6,
        time_reduction_factor=2,
        time_reduction_after_layer=1,
        prediction_context=2,
        embedding_dim=4,
        joint_width=6,
        vocab_size=vocab.asr_size,
    )


@pytest.fixture
def tiny_train_config():
    return TrainConfig(
        seed=5,
        batch_size=4,
        epochs_stage1=2,
        epochs_stage2=2,
        optimizer=OptimizerConfig(learning_rate=0.01),
    )


@pytest.fixture
def acoustic_config():
    return AcousticDetectorConfig(
        layers=1,
        width=4,
        train=DetectorTrainConfig(epochs=1, batch_size=4),
        state_machine=StateMachineConfig(frame_threshold=0.5, k_on=3),
    )


@pytest.fixture
def acoustic_text_config():
    return AcousticTextConfig(
        layers=2,
        width=4,
        word_embedding_dim=3,
        conv_window=3,
        conv_filters=5,
        hidden_width=4,
        eval_stride=3,
        train=DetectorTrainConfig(epochs=1, batch_size=4),
    )


@pytest.fixture
def crafted_checkpoint():
    """
    Scalar stage-2 transducer driven by biases only: every encoder gate bias is
    1 and all encoder weights are 0, so encoder states rise step by step
    whatever the input. Both joints see s = tests.oracles.bias_encoder_states(T)[t]. The
    IQ joint puts iq_slope * s + iq_offset on <intended> and 0 on every other
    output. The ASR joint favours blank, or emits the wordpiece once s passes
    asr_cut.
    """
    def build(iq_slope: float = 0.0, iq_offset: float = 0.0, asr_cut: float = None) -> Checkpoint:
        config = ModelConfig(
            feature_dim=1,
            encoder_layers=1,
            encoder_width=1,
            time_reduction_factor=1,
            time_reduction_after_layer=0,
            prediction_context=1,
            embedding_dim=1,
            joint_width=1,
            vocab_size=2,
        )
        params = zero_params(config)
        params.encoder[0].b[:] = 1.0
        params.asr_joint.w_enc[:] = 1.0
        if asr_cut is None:
            params.asr_joint.b_out[:] = [5.0, 0.0]
        else:
            params.asr_joint.w_out[1, 0] = 400.0
            params.asr_joint.b_out[1] = -400.0 * asr_cut
        params.iq_joint.w_enc[:] = 1.0
        params.iq_joint.w_out[config.vocab_size, 0] = iq_slope
        params.iq_joint.b_out[config.vocab_size] = iq_offset
        return Checkpoint(config=config, params=params, stage=2)
    return build


@pytest.fixture
def silent_utterance():
    """All-zero single-feature utterance of n frames"""
    def build(n_frames: int, intent: str = "intended") -> Utterance:
        return Utterance(
            id="crafted",
            domain="test",
            intent=intent,
            transcript=[1],
            features=np.zeros((n_frames, 1), dtype=np.float32),
            start_of_speech_frame=0,
            token_alignment=[(0, n_frames)],
        )
    return build
