from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ArgumentError, NumericError, TrainingError
from app.core.logging import get_logger
from app.core.parallel import parallel_map
from app.models.lattice import iq_stage2_loss, rnnt_loss_with_encoder
from app.models.transducer import TransducerParams, encode, encode_with_cache, expected_shapes
from app.numkernel.init import bias_partner_fan_in, uniform_init
from app.numkernel.optim import Optimizer
from app.schemas.corpus import Utterance
from app.schemas.model import ModelConfig
from app.schemas.optim import OptimizerConfig
from app.schemas.training import Checkpoint, TrainConfig

logger = get_logger(__name__)

Tensors = Dict[str, np.ndarray]


class ItemLoss(NamedTuple):
    loss: float
    grads: Tensors


TRANSDUCER_BIAS_PARTNERS = {"b": "w_enc", "b_ctx": "w_ctx", "b_out": "w_out"}


def transducer_fan_in(shapes: Dict[str, Tuple[int, ...]]) -> Callable[[str], int]:
    """LSTM tensors use the layer width; biases share their weight's fan-in"""
    generic = bias_partner_fan_in(shapes, TRANSDUCER_BIAS_PARTNERS)

    def fan_in(name: str) -> int:
        prefix = name.rsplit(".", 1)[0]
        if prefix.startswith("encoder."):
            return shapes[f"{prefix}.w_h"][1]
        return generic(name)
    return fan_in


def init_params(model_config: ModelConfig, seed: int, with_iq: bool = False) -> TransducerParams:
    """Uniform(-r, r) with r = 1/sqrt(fan_in) per tensor; a pure function of the seed"""
    shapes = expected_shapes(model_config, with_iq=with_iq)
    return TransducerParams.from_dict(model_config, uniform_init(shapes, transducer_fan_in(shapes), seed))


class MinibatchTrainer:
    """
    Seeded-shuffle minibatch loop shared by every trained model. Item losses
    within a batch run on a thread pool; gradients are averaged in item order.
    """

    def __init__(
        self,
        optimizer: OptimizerConfig,
        seed: int,
        batch_size: int,
        shuffle: bool = True,
        jobs: Optional[int] = None,
    ):
        self.optimizer_config = optimizer
        self.seed = seed
        self.batch_size = batch_size
        self.shuffle = shuffle
        self.jobs = jobs

    def map(self, fn: Callable, items: Sequence) -> List:
        return parallel_map(fn, items, self.jobs)

    def batches(self, n: int, epoch: int) -> List[np.ndarray]:
        if self.shuffle:
            order = np.random.default_rng([self.seed, epoch]).permutation(n)
        else:
            order = np.arange(n)
        return [order[i:i + self.batch_size] for i in range(0, n, self.batch_size)]

    def fit(
        self,
        tensors: Tensors,
        n_items: int,
        loss_fn: Callable[[Tensors, int], ItemLoss],
        trainable: Sequence[str],
        epochs: int,
        model: str,
        held_out: Optional[Callable[[Tensors], float]] = None,
        eval_every: int = 0,
    ) -> Tuple[Tensors, int, List[float]]:
        optimizer = Optimizer(self.optimizer_config)
        tensors = dict(tensors)
        history: List[float] = []
        for epoch in range(epochs):
            epoch_losses: List[float] = []
            for batch in self.batches(n_items, epoch):
                current = tensors
                results = self.map(lambda i: loss_fn(current, int(i)), list(batch))
                losses = [r.loss for r in results]
                if not np.all(np.isfinite(losses)):
                    raise TrainingError(f"{model}: non-finite loss", step=optimizer.step_index + 1)
                epoch_losses.extend(losses)
                mean_grads = {
                    name: sum(r.grads[name] for r in results) / len(results) for name in trainable
                }
                updated = optimizer.step({name: tensors[name] for name in trainable}, mean_grads)
                tensors = {**tensors, **updated}
            mean_loss = float(np.mean(epoch_losses))
            history.append(mean_loss)
            logger.info("epoch_done", model=model, epoch=epoch + 1, mean_loss=mean_loss, step=optimizer.step_index)
            if held_out is not None and eval_every and (epoch + 1) % eval_every == 0:
                logger.info("held_out_loss", model=model, epoch=epoch + 1, mean_loss=held_out(tensors))
        return tensors, optimizer.step_index, history


def guard_numeric(fn):
    """Surface lattice or softmax failures during training as TrainingError"""
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericError as e:
            raise TrainingError(f"divergence: {e.detail}") from e
    return wrapped


class TrainingService:
    def __init__(self, model_config: ModelConfig, train_config: TrainConfig, jobs: Optional[int] = None):
        self.model_config = model_config
        self.train_config = train_config
        self.trainer = MinibatchTrainer(
            train_config.optimizer, train_config.seed, train_config.batch_size, train_config.shuffle, jobs
        )

    def _stage1_loss(self, corpus: Sequence[Utterance], template: TransducerParams):
        config = self.model_config
        lam = self.train_config.fastemit_lambda

        @guard_numeric
        def loss_fn(tensors: Tensors, i: int) -> ItemLoss:
            params = TransducerParams.from_arrays_like(template, tensors)
            utt = corpus[i]
            enc, cache = encode_with_cache(utt.features, params, config)
            result = rnnt_loss_with_encoder(enc, cache, utt.transcript, params, config, lam)
            return ItemLoss(result.loss, result.grads)

        return loss_fn

    def train_stage1(
        self,
        corpus: Sequence[Utterance],
        held_out: Optional[Sequence[Utterance]] = None,
    ) -> Checkpoint:
        if not corpus:
            raise ArgumentError("stage 1 needs a non-empty corpus")
        params = init_params(self.model_config, self.train_config.seed)
        held_out_fn = None
        if held_out:
            held_out_loss = self._stage1_loss(held_out, params)
            held_out_fn = lambda t: float(np.mean([held_out_loss(t, i).loss for i in range(len(held_out))]))  # noqa: E731
        tensors, steps, history = self.trainer.fit(
            params.as_dict(),
            len(corpus),
            self._stage1_loss(corpus, params),
            trainable=[name for name, _ in params.named_tensors()],
            epochs=self.train_config.epochs_stage1,
            model="transducer_stage1",
            held_out=held_out_fn,
            eval_every=self.train_config.eval_every,
        )
        return Checkpoint(
            config=self.model_config,
            params=TransducerParams.from_arrays_like(params, tensors),
            stage=1,
            step=steps,
            train_loss_history=history,
        )

    def train_stage2(self, parent: Checkpoint, corpus: Sequence[Utterance]) -> Checkpoint:
        if parent.stage != 1:
            raise ArgumentError("stage 2 starts from a stage-1 checkpoint")
        if not corpus:
            raise ArgumentError("stage 2 needs a non-empty corpus")
        missing = [utt.id for utt in corpus if utt.augmented_targets is None]
        if missing:
            raise ArgumentError(f"utterance {missing[0]} has no augmented targets")

        config = parent.config
        base: TransducerParams = parent.params.copy()
        base.iq_joint = base.asr_joint.padded(2)
        # Frozen encoder: encodings are computed once
        encodings = self.trainer.map(lambda utt: encode(utt.features, base, config), list(corpus))
        pred_cache: Dict[tuple, np.ndarray] = {}
        lam = self.train_config.fastemit_lambda

        @guard_numeric
        def loss_fn(tensors: Tensors, i: int) -> ItemLoss:
            params = TransducerParams.from_arrays_like(base, tensors)
            result = iq_stage2_loss(encodings[i], corpus[i].augmented_targets, params, config, lam, pred_cache)
            return ItemLoss(result.loss, result.grads)

        tensors, steps, history = self.trainer.fit(
            base.as_dict(),
            len(corpus),
            loss_fn,
            trainable=[name for name, _ in base.iq_joint.named("iq_joint")],
            epochs=self.train_config.epochs_stage2,
            model="transducer_stage2",
            eval_every=self.train_config.eval_every,
        )
        return Checkpoint(
            config=config,
            params=TransducerParams.from_arrays_like(base, tensors),
            stage=2,
            step=parent.step + steps,
            train_loss_history=list(parent.train_loss_history) + history,
        )


def train_stage1(
    corpus: Sequence[Utterance], model_config: ModelConfig, train_config: TrainConfig, jobs: Optional[int] = None
) -> Checkpoint:
    return TrainingService(model_config, train_config, jobs).train_stage1(corpus)


def train_stage2(
    parent: Checkpoint, corpus: Sequence[Utterance], train_config: TrainConfig, jobs: Optional[int] = None
) -> Checkpoint:
    return TrainingService(parent.config, train_config, jobs).train_stage2(parent, corpus)
