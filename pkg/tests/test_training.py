import numpy as np
import pytest

from app.core.errors import ArgumentError, NumericError, TrainingError
from app.schemas.decoding import DecisionConfig
from app.schemas.optim import OptimizerConfig
from app.schemas.training import Checkpoint, TrainConfig
from app.services.decoding import asr_decode
from app.services.training import (
    ItemLoss,
    MinibatchTrainer,
    TrainingService,
    guard_numeric,
    init_params,
    train_stage1,
    train_stage2,
)


@pytest.fixture(scope="module")
def stage1_pair(tiny_corpus, tiny_model_config):
    """Stage-1 then stage-2 training on the tiny corpus, computed once per module"""
    train_config = TrainConfig(seed=5, batch_size=4, epochs_stage1=3, epochs_stage2=2,
                               optimizer=OptimizerConfig(learning_rate=0.01))
    _, utterances = tiny_corpus
    stage1 = train_stage1(utterances, tiny_model_config, train_config, jobs=2)
    stage2 = train_stage2(stage1, utterances, train_config, jobs=2)
    return stage1, stage2


class TestInitParams:
    def test_seeded(self, small_model_config):
        a = init_params(small_model_config, seed=4).as_dict()
        b = init_params(small_model_config, seed=4).as_dict()
        c = init_params(small_model_config, seed=5).as_dict()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])
        assert not np.array_equal(a["asr_joint.w_out"], c["asr_joint.w_out"])

    def test_range_follows_fan_in(self, small_model_config):
        tensors = init_params(small_model_config, seed=4).as_dict()
        # joint_width 4 feeds w_out; encoder width 3 feeds every LSTM tensor
        assert np.all(np.abs(tensors["asr_joint.w_out"]) <= 0.5)
        assert np.all(np.abs(tensors["asr_joint.b_out"]) <= 0.5)
        assert np.all(np.abs(tensors["encoder.0.w_x"]) <= 1 / np.sqrt(3))


class TestMinibatchTrainer:
    def test_batches_cover_every_item(self):
        trainer = MinibatchTrainer(OptimizerConfig(), seed=1, batch_size=3)
        batches = trainer.batches(10, epoch=0)
        assert [len(b) for b in batches] == [3, 3, 3, 1]
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))

    def test_shuffle_is_seeded_per_epoch(self):
        trainer = MinibatchTrainer(OptimizerConfig(), seed=1, batch_size=4)
        first = np.concatenate(trainer.batches(12, 0))
        np.testing.assert_array_equal(first, np.concatenate(trainer.batches(12, 0)))
        assert not np.array_equal(first, np.concatenate(trainer.batches(12, 1)))

    def test_no_shuffle_keeps_order(self):
        trainer = MinibatchTrainer(OptimizerConfig(), seed=1, batch_size=4, shuffle=False)
        assert np.concatenate(trainer.batches(6, 3)).tolist() == [0, 1, 2, 3, 4, 5]

    def test_quadratic_converges(self):
        targets = np.array([1.0, -2.0, 3.0])
        trainer = MinibatchTrainer(OptimizerConfig(method="sgd", learning_rate=0.2, clip_norm=None),
                                   seed=0, batch_size=3, jobs=2)

        def loss_fn(tensors, i):
            diff = tensors["x"][0] - targets[i]
            return ItemLoss(0.5 * diff * diff, {"x": np.array([diff])})

        tensors, steps, history = trainer.fit({"x": np.zeros(1)}, 3, loss_fn, ["x"], epochs=40, model="quad")
        assert steps == 40
        assert tensors["x"][0] == pytest.approx(targets.mean(), abs=1e-3)
        assert history[-1] < history[0]

    def test_non_finite_loss_reports_step(self):
        trainer = MinibatchTrainer(OptimizerConfig(), seed=0, batch_size=2)

        def loss_fn(tensors, i):
            return ItemLoss(float("nan"), {"x": np.zeros(1)})

        with pytest.raises(TrainingError) as exc:
            trainer.fit({"x": np.zeros(1)}, 2, loss_fn, ["x"], epochs=1, model="nan")
        assert exc.value.step == 1

    def test_guard_numeric(self):
        @guard_numeric
        def diverge():
            raise NumericError("non-finite transducer log-likelihood")

        with pytest.raises(TrainingError) as exc:
            diverge()
        assert "divergence" in exc.value.detail


class TestStage1:
    def test_zero_epochs_returns_init(self, tiny_corpus, tiny_model_config, tiny_train_config):
        _, utterances = tiny_corpus
        config = tiny_train_config.model_copy(update={"epochs_stage1": 0})
        checkpoint = train_stage1(utterances[:2], tiny_model_config, config)
        expected = init_params(tiny_model_config, config.seed).as_dict()
        assert checkpoint.stage == 1
        assert checkpoint.step == 0
        assert checkpoint.train_loss_history == []
        for name, arr in checkpoint.params.named_tensors():
            np.testing.assert_array_equal(arr, expected[name])

    def test_empty_corpus(self, tiny_model_config, tiny_train_config):
        with pytest.raises(ArgumentError):
            train_stage1([], tiny_model_config, tiny_train_config)

    def test_deterministic_across_worker_counts(self, tiny_corpus, tiny_model_config, tiny_train_config):
        _, utterances = tiny_corpus
        config = tiny_train_config.model_copy(update={"epochs_stage1": 1})
        a = train_stage1(utterances[:4], tiny_model_config, config, jobs=1)
        b = train_stage1(utterances[:4], tiny_model_config, config, jobs=3)
        assert a.train_loss_history == b.train_loss_history
        for (name, x), (_, y) in zip(a.params.named_tensors(), b.params.named_tensors()):
            np.testing.assert_array_equal(x, y, err_msg=name)

    def test_loss_decreases(self, stage1_pair):
        stage1, _ = stage1_pair
        history = stage1.train_loss_history
        assert len(history) == 3
        assert history[-1] < history[0]
        assert stage1.step == 9


class TestStage2:
    def test_asr_tensors_frozen(self, stage1_pair):
        stage1, stage2 = stage1_pair
        frozen = dict(stage1.params.named_tensors())
        for name, arr in stage2.params.named_tensors():
            if name.startswith("iq_joint."):
                continue
            np.testing.assert_array_equal(arr, frozen[name], err_msg=name)
        assert stage2.stage == 2
        assert stage2.step == stage1.step + 6
        assert len(stage2.train_loss_history) == 5

    def test_iq_joint_trained_from_padded_asr_joint(self, stage1_pair):
        stage1, stage2 = stage1_pair
        assert stage2.params.iq_joint.w_out.shape[0] == stage1.config.vocab_size + 2
        assert not np.array_equal(stage2.params.iq_joint.w_out[:-2], stage1.params.asr_joint.w_out)

    def test_recognition_unchanged(self, stage1_pair, tiny_corpus):
        stage1, stage2 = stage1_pair
        _, utterances = tiny_corpus
        config = DecisionConfig(beam_size=2)
        for utt in utterances[:4]:
            before = asr_decode(utt.features, stage1.params, stage1.config, config)
            after = asr_decode(utt.features, stage2.params, stage2.config, config)
            assert before == after

    def test_loss_decreases(self, stage1_pair, tiny_corpus):
        stage1, _ = stage1_pair
        utterances = tiny_corpus[1][:6]
        # One full-batch step per epoch in a fixed order
        config = TrainConfig(seed=5, batch_size=6, epochs_stage1=0, epochs_stage2=5, shuffle=False,
                             optimizer=OptimizerConfig(learning_rate=0.01))
        child = train_stage2(stage1, utterances, config)
        history = child.train_loss_history[len(stage1.train_loss_history):]
        assert len(history) == 5
        assert history[-1] < history[0]

    def test_requires_stage1_parent(self, stage1_pair, tiny_corpus, tiny_train_config):
        _, stage2 = stage1_pair
        with pytest.raises(ArgumentError):
            train_stage2(stage2, tiny_corpus[1], tiny_train_config)

    def test_requires_augmented_targets(self, stage1_pair, tiny_corpus, tiny_train_config):
        stage1, _ = stage1_pair
        bare = [u.model_copy(update={"augmented_targets": None}) for u in tiny_corpus[1][:2]]
        with pytest.raises(ArgumentError):
            TrainingService(stage1.config, tiny_train_config).train_stage2(stage1, bare)

    def test_parent_untouched(self, tiny_corpus, tiny_model_config, tiny_train_config):
        _, utterances = tiny_corpus
        config = tiny_train_config.model_copy(update={"epochs_stage1": 0, "epochs_stage2": 1})
        parent = train_stage1(utterances[:2], tiny_model_config, config)
        snapshot = {name: arr.copy() for name, arr in parent.params.named_tensors()}
        child = train_stage2(parent, utterances[:2], config)
        assert isinstance(child, Checkpoint)
        assert parent.params.iq_joint is None
        for name, arr in parent.params.named_tensors():
            np.testing.assert_array_equal(arr, snapshot[name])
