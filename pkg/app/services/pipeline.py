"""
End-to-end orchestration behind the CLI verbs. Every artifact lives under
one output directory with fixed names.
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from app.core.errors import ArgumentError, CorpusIOError
from app.core.logging import get_logger
from app.core.parallel import parallel_map
from app.repositories.base import BaseRepository, PathLike, _first_error
from app.repositories.checkpoint import CheckpointRepository, load_checkpoint, save_checkpoint
from app.repositories.corpus import read_corpus, write_corpus
from app.repositories.report import ReportRepository
from app.repositories.trace import TraceRepository
from app.schemas.corpus import Utterance, Vocabulary
from app.schemas.decoding import DecodeResult
from app.schemas.evaluation import EvalSummary
from app.schemas.pipeline import PipelineConfig
from app.schemas.training import Checkpoint
from app.services.baselines import (
    acoustic_detect,
    acoustic_text_detect,
    train_acoustic_detector,
    train_acoustic_text_detector,
)
from app.services.corpus import DEFAULT_INTENDED_DOMAINS, DEFAULT_UNINTENDED_DOMAINS, generate_corpus
from app.services.decoding import stream_decode
from app.services.evaluation import EvaluationService, corpus_wer, score_result
from app.services.labeling import LabelingService, grammar_from_domains
from app.services.training import TrainingService

logger = get_logger(__name__)

ASR_CHECKPOINT = "asr.ckpt"
IQ_CHECKPOINT = "iq.ckpt"
ACOUSTIC_CHECKPOINT = "acoustic.ckpt"
ACOUSTIC_TEXT_CHECKPOINT = "acoustic_text.ckpt"


def parse_override(item: str) -> Tuple[List[str], Any]:
    """``a.b.c=value``; the value is JSON when it parses, else a plain string"""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ArgumentError(f"override {item!r} is not key=value")
    path = key.strip().split(".")
    if any(not part for part in path):
        raise ArgumentError(f"override key {key!r} has an empty segment")
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return path, value


def apply_overrides(document: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    doc = json.loads(json.dumps(document))
    for item in overrides:
        path, value = parse_override(item)
        node = doc
        for part in path[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ArgumentError(f"override {item!r}: {part} is not a section")
            node = child
        node[path[-1]] = value
    return doc


def _with_default_domains(document: Dict[str, Any]) -> Dict[str, Any]:
    corpus = document.setdefault("corpus", {})
    if isinstance(corpus, dict):
        corpus.setdefault("intended_domains", [d.model_dump() for d in DEFAULT_INTENDED_DOMAINS])
        corpus.setdefault("unintended_domains", [d.model_dump() for d in DEFAULT_UNINTENDED_DOMAINS])
    return document


def build_pipeline_config(document: Dict[str, Any], overrides: Sequence[str] = ()) -> PipelineConfig:
    doc = _with_default_domains(apply_overrides(document, overrides))
    try:
        return PipelineConfig.model_validate(doc)
    except ValidationError as e:
        raise ArgumentError(f"invalid config: {_first_error(e)}") from e


def load_pipeline_config(path: Optional[PathLike] = None, overrides: Sequence[str] = ()) -> PipelineConfig:
    document: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        document = BaseRepository(path.parent).read_json(path)
        if not isinstance(document, dict):
            raise ArgumentError(f"{path}: config must be a JSON object")
    return build_pipeline_config(document, overrides)


@dataclass
class ArtifactLayout:
    root: Path

    @property
    def train_corpus(self) -> Path:
        return self.root / "corpus" / "train"

    @property
    def eval_corpus(self) -> Path:
        return self.root / "corpus" / "eval"

    def artifact(self, name: str) -> Path:
        return self.root / name


class PipelineService:
    def __init__(self, config: PipelineConfig, out: PathLike, jobs: Optional[int] = None):
        self.config = config
        self.layout = ArtifactLayout(Path(out))
        self.jobs = jobs

    def _label(self, vocab: Vocabulary, utterances: List[Utterance]) -> List[Utterance]:
        service = LabelingService(grammar_from_domains(self.config.corpus), vocab)
        return service.label_corpus(utterances)

    def gen_corpus(self) -> Dict[str, Path]:
        written = {}
        splits = ["train"]
        if self.config.corpus.eval_intended or self.config.corpus.eval_unintended:
            splits.append("eval")
        for split in splits:
            vocab, utterances = generate_corpus(self.config.corpus, split)
            self._label(vocab, utterances)
            target = self.layout.train_corpus if split == "train" else self.layout.eval_corpus
            written[split] = write_corpus(target, vocab, utterances)
        return written

    def _read(self, corpus_dir: Optional[PathLike], default: Path) -> Tuple[Vocabulary, List[Utterance]]:
        return read_corpus(Path(corpus_dir) if corpus_dir is not None else default)

    def _check_vocab(self, checkpoint: Checkpoint, vocab: Vocabulary, path: Path) -> None:
        if checkpoint.config.vocab_size != vocab.asr_size:
            raise ArgumentError(
                f"{path}: checkpoint vocab size {checkpoint.config.vocab_size} "
                f"does not match corpus vocab size {vocab.asr_size}"
            )

    def _checkpoint_path(self, explicit: Optional[PathLike], name: str) -> Path:
        return Path(explicit) if explicit is not None else self.layout.artifact(name)

    def train_asr(self, corpus_dir: Optional[PathLike] = None) -> Path:
        vocab, utterances = self._read(corpus_dir, self.layout.train_corpus)
        model_config = self.config.model.for_corpus(self.config.corpus.feature_dim, vocab.asr_size)
        held_out = None
        if self.config.train.eval_every and self.layout.eval_corpus.exists():
            held_out = read_corpus(self.layout.eval_corpus)[1]
        checkpoint = TrainingService(model_config, self.config.train, self.jobs).train_stage1(utterances, held_out)
        return save_checkpoint(checkpoint, self.layout.artifact(ASR_CHECKPOINT))

    def train_iq(self, corpus_dir: Optional[PathLike] = None, asr_path: Optional[PathLike] = None) -> Path:
        vocab, utterances = self._read(corpus_dir, self.layout.train_corpus)
        path = self._checkpoint_path(asr_path, ASR_CHECKPOINT)
        parent = load_checkpoint(path)
        self._check_vocab(parent, vocab, path)
        if any(utt.augmented_targets is None for utt in utterances):
            self._label(vocab, utterances)
        checkpoint = TrainingService(parent.config, self.config.train, self.jobs).train_stage2(parent, utterances)
        return save_checkpoint(checkpoint, self.layout.artifact(IQ_CHECKPOINT))

    def train_baselines(
        self,
        corpus_dir: Optional[PathLike] = None,
        asr_path: Optional[PathLike] = None,
        which: Sequence[str] = ("acoustic", "acoustic_text"),
    ) -> List[Path]:
        vocab, utterances = self._read(corpus_dir, self.layout.train_corpus)
        feature_dim = utterances[0].features.shape[1] if utterances else self.config.corpus.feature_dim
        repo = CheckpointRepository(self.layout.root)
        written = []
        if "acoustic" in which:
            params = train_acoustic_detector(utterances, self.config.baselines.acoustic, self.jobs)
            written.append(
                repo.save_detector(params, self.config.baselines.acoustic, ACOUSTIC_CHECKPOINT, feature_dim)
            )
        if "acoustic_text" in which:
            path = self._checkpoint_path(asr_path, ASR_CHECKPOINT)
            asr = load_checkpoint(path)
            self._check_vocab(asr, vocab, path)
            params = train_acoustic_text_detector(
                utterances, asr, self.config.baselines.acoustic_text, self.config.decision_config(), self.jobs
            )
            written.append(
                repo.save_detector(
                    params,
                    self.config.baselines.acoustic_text,
                    ACOUSTIC_TEXT_CHECKPOINT,
                    feature_dim,
                    asr.config.vocab_size,
                )
            )
        return written

    def _eval_subset(self, utterances: List[Utterance]) -> List[Utterance]:
        limit = self.config.eval.max_utterances
        if limit is None or len(utterances) <= limit:
            return utterances
        intended = [u for u in utterances if u.intent == "intended"]
        unintended = [u for u in utterances if u.intent == "unintended"]
        n_int = min(len(intended), (limit + 1) // 2)
        return intended[:n_int] + unintended[:limit - n_int]

    def _optional_detector(self, explicit: Optional[PathLike], name: str) -> Optional[Path]:
        if explicit is not None:
            return Path(explicit)
        path = self.layout.artifact(name)
        return path if path.exists() else None

    def evaluate(
        self,
        corpus_dir: Optional[PathLike] = None,
        checkpoint_path: Optional[PathLike] = None,
        acoustic_path: Optional[PathLike] = None,
        acoustic_text_path: Optional[PathLike] = None,
    ) -> List[EvalSummary]:
        ckpt_path = self._checkpoint_path(checkpoint_path, IQ_CHECKPOINT)
        if not ckpt_path.exists():
            raise CorpusIOError(str(ckpt_path), "checkpoint not found")
        checkpoint = load_checkpoint(ckpt_path)
        vocab, utterances = self._read(corpus_dir, self.layout.eval_corpus)
        self._check_vocab(checkpoint, vocab, ckpt_path)
        utterances = self._eval_subset(utterances)
        decision = self.config.decision_config()
        frame_period = self.config.corpus.frame_period_ms
        service = EvaluationService(self.config.eval.latency_threshold)
        reports = ReportRepository(self.layout.root)
        summaries = []

        def record(model: str, results: List[DecodeResult], k_on: int = 1, strict: bool = False,
                   wer_value: Optional[float] = None) -> None:
            scored = [score_result(r, u, frame_period, k_on, strict) for r, u in zip(results, utterances)]
            summary, det = service.summarize(model, scored, wer_value)
            reports.write_det(model, det)
            summaries.append(summary)

        results = parallel_map(lambda u: stream_decode(u, checkpoint, decision), utterances, self.jobs)
        wer_value = corpus_wer((r.hypothesis, u.transcript) for r, u in zip(results, utterances))
        record("e2e", results, wer_value=wer_value)

        at_path = self._optional_detector(acoustic_text_path, ACOUSTIC_TEXT_CHECKPOINT)
        if at_path is not None:
            params, at_config, _ = CheckpointRepository(at_path.parent).load_detector(at_path.name, "acoustic_text")
            results = parallel_map(
                lambda u: acoustic_text_detect(
                    u, params, checkpoint, decision.intended_threshold, at_config.eval_stride, at_config, decision
                ),
                utterances,
                self.jobs,
            )
            record("acoustic_text", results)

        ac_path = self._optional_detector(acoustic_path, ACOUSTIC_CHECKPOINT)
        if ac_path is not None:
            params, _, _ = CheckpointRepository(ac_path.parent).load_detector(ac_path.name, "acoustic")
            sm = self.config.baselines.acoustic.state_machine
            results = parallel_map(lambda u: acoustic_detect(u, params, sm, frame_period), utterances, self.jobs)
            record("acoustic", results, k_on=sm.k_on, strict=True)

        reports.write_report(summaries)
        return summaries

    def decode(
        self,
        corpus_dir: Optional[PathLike] = None,
        checkpoint_path: Optional[PathLike] = None,
        utterance_id: Optional[str] = None,
    ) -> DecodeResult:
        ckpt_path = self._checkpoint_path(checkpoint_path, IQ_CHECKPOINT)
        checkpoint = load_checkpoint(ckpt_path)
        vocab, utterances = self._read(corpus_dir, self.layout.eval_corpus)
        self._check_vocab(checkpoint, vocab, ckpt_path)
        if not utterances:
            raise ArgumentError("corpus has no utterances to decode")
        if utterance_id is None:
            utterance = utterances[0]
        else:
            matches = [u for u in utterances if u.id == utterance_id]
            if not matches:
                raise ArgumentError(f"utterance {utterance_id} not found in corpus")
            utterance = matches[0]
        result = stream_decode(utterance, checkpoint, self.config.decision_config())
        TraceRepository(self.layout.root).write([result], vocab)
        return result
