import struct
from pathlib import Path
from typing import List, Tuple

import numpy as np
from pydantic import ValidationError

from app.core.errors import FormatError
from app.core.logging import get_logger
from app.repositories.base import BaseRepository, PathLike
from app.schemas.corpus import ManifestRecord, Utterance, Vocabulary

logger = get_logger(__name__)

FEATURE_MAGIC = b"IQF1"
_HEADER = struct.Struct("<4sII")

MANIFEST_FILE = "manifest.jsonl"
VOCAB_FILE = "vocab.json"
FEATURE_DIR = "features"


def encode_features(features: np.ndarray) -> bytes:
    frames, dim = features.shape
    body = np.ascontiguousarray(features, dtype="<f4").tobytes()
    return _HEADER.pack(FEATURE_MAGIC, frames, dim) + body


def decode_features(data: bytes, path: str) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise FormatError(path, "feature file shorter than its header")
    magic, frames, dim = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FormatError(path, f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    expected = _HEADER.size + 4 * frames * dim
    if len(data) != expected:
        raise FormatError(path, f"feature file has {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(frames, dim)
    return arr.astype(np.float32)


class CorpusRepository(BaseRepository):
    """A corpus directory: vocab.json, manifest.jsonl and one .iqf file per utterance"""

    def __init__(self, root: PathLike):
        super().__init__(root)

    @property
    def manifest_path(self) -> Path:
        return self.path(MANIFEST_FILE)

    def write(self, vocab: Vocabulary, utterances: List[Utterance]) -> Path:
        self.ensure_root()
        self.write_json(self.path(VOCAB_FILE), {"tokens": vocab.tokens})
        records = []
        for utt in utterances:
            feature_file = f"{FEATURE_DIR}/{utt.id}.iqf"
            self.write_bytes(self.path(feature_file), encode_features(utt.features))
            record = ManifestRecord(
                id=utt.id,
                domain=utt.domain,
                intent=utt.intent,
                transcript=vocab.decode(utt.transcript),
                silence_segments=utt.silence_segments,
                start_of_speech_frame=utt.start_of_speech_frame,
                token_alignment=utt.token_alignment,
                feature_file=feature_file,
                slots=utt.slots,
                augmented_targets=(
                    vocab.decode(utt.augmented_targets) if utt.augmented_targets is not None else None
                ),
            )
            records.append(record.model_dump(mode="json", exclude_none=True))
        self.write_jsonl(self.manifest_path, records)
        logger.info("corpus_written", path=str(self.root), utterances=len(utterances))
        return self.manifest_path

    def read_vocabulary(self) -> Vocabulary:
        path = self.path(VOCAB_FILE)
        payload = self.read_json(path)
        tokens = payload.get("tokens") if isinstance(payload, dict) else None
        if not isinstance(tokens, list):
            raise FormatError(str(path), "missing token list")
        wordpieces = tokens[1:-2]
        vocab = Vocabulary.from_wordpieces(wordpieces)
        if vocab.tokens != tokens:
            raise FormatError(str(path), "reserved tokens out of place")
        return vocab

    def read(self) -> Tuple[Vocabulary, List[Utterance]]:
        vocab = self.read_vocabulary()
        utterances = []
        for record in self.validate_all(ManifestRecord, self.manifest_path):
            feature_path = self.path(record.feature_file)
            features = decode_features(self.read_bytes(feature_path), str(feature_path))
            try:
                utterances.append(
                    Utterance(
                        id=record.id,
                        domain=record.domain,
                        intent=record.intent,
                        transcript=vocab.encode(record.transcript),
                        features=features,
                        silence_segments=record.silence_segments,
                        start_of_speech_frame=record.start_of_speech_frame,
                        token_alignment=record.token_alignment,
                        slots=record.slots,
                        augmented_targets=(
                            vocab.encode(record.augmented_targets)
                            if record.augmented_targets is not None else None
                        ),
                    )
                )
            except (ValidationError, ValueError) as e:
                raise FormatError(str(self.manifest_path), str(e).splitlines()[0], record=record.id) from e
        logger.info("corpus_read", path=str(self.root), utterances=len(utterances))
        return vocab, utterances


def write_corpus(dir_path: PathLike, vocab: Vocabulary, utterances: List[Utterance]) -> Path:
    return CorpusRepository(dir_path).write(vocab, utterances)


def read_corpus(dir_path: PathLike) -> Tuple[Vocabulary, List[Utterance]]:
    return CorpusRepository(dir_path).read()
