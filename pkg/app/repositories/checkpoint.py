import json
import struct
from pathlib import Path
from typing import Dict, Iterable, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.core.errors import ArgumentError, FormatError
from app.core.logging import get_logger
from app.models.detectors import (
    AcousticDetectorParams,
    AcousticTextParams,
    acoustic_shapes,
    acoustic_text_shapes,
)
from app.models.transducer import TransducerParams
from app.repositories.base import BaseRepository, PathLike, _first_error
from app.schemas.baselines import AcousticDetectorConfig, AcousticTextConfig
from app.schemas.model import ModelConfig
from app.schemas.training import Checkpoint

logger = get_logger(__name__)

CHECKPOINT_MAGIC = b"IQCK"
CHECKPOINT_VERSION = 1
_PREAMBLE = struct.Struct("<4sII")

DetectorParams = Union[AcousticDetectorParams, AcousticTextParams]


def pack_tensors(header: dict, tensors: Iterable[Tuple[str, np.ndarray]]) -> bytes:
    """
    Layout: magic, u32 version, u32 header length, UTF-8 JSON header (with
    tensor names and shapes added), then every tensor as little-endian
    float64 in the given order.
    """
    tensors = list(tensors)
    header = {**header, "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors]}
    header_bytes = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in tensors)
    return _PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)) + header_bytes + body


def unpack_tensors(data: bytes, path: str) -> Tuple[dict, Dict[str, np.ndarray]]:
    if len(data) < _PREAMBLE.size:
        raise FormatError(path, "checkpoint shorter than its preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(path, f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(path, f"unsupported checkpoint version {version}")
    offset = _PREAMBLE.size
    if len(data) < offset + header_len:
        raise FormatError(path, "truncated checkpoint header")
    try:
        header = json.loads(data[offset:offset + header_len])
        entries = [(e["name"], tuple(int(d) for d in e["shape"])) for e in header["tensors"]]
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(path, f"invalid checkpoint header: {e}") from e
    offset += header_len

    expected = offset + 8 * sum(int(np.prod(shape)) for _, shape in entries)
    if len(data) != expected:
        raise FormatError(path, f"checkpoint has {len(data)} bytes, expected {expected}")
    tensors = {}
    for name, shape in entries:
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    return header, tensors


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    header = {
        "kind": "transducer",
        "model_config": checkpoint.config.model_dump(mode="json"),
        "stage": checkpoint.stage,
        "step": checkpoint.step,
        "train_loss_history": list(checkpoint.train_loss_history),
    }
    return pack_tensors(header, checkpoint.params.named_tensors())


def _expect_kind(header: dict, kind: str, path: str) -> None:
    if header.get("kind") != kind:
        raise FormatError(path, f"expected a {kind} checkpoint, found {header.get('kind')!r}")


def decode_checkpoint(data: bytes, path: str) -> Checkpoint:
    header, tensors = unpack_tensors(data, path)
    _expect_kind(header, "transducer", path)
    try:
        config = ModelConfig.model_validate(header.get("model_config"))
        if config.vocab_size is None:
            raise FormatError(path, "model_config has no vocab_size")
        return Checkpoint(
            config=config,
            params=TransducerParams.from_dict(config, tensors),
            stage=header.get("stage"),
            step=header.get("step", 0),
            train_loss_history=header.get("train_loss_history", []),
        )
    except ArgumentError as e:
        raise FormatError(path, e.detail) from e
    except ValidationError as e:
        raise FormatError(path, _first_error(e)) from e


def encode_detector(params: DetectorParams, config, feature_dim: int, vocab_size: int = 0) -> bytes:
    kind = "acoustic" if isinstance(params, AcousticDetectorParams) else "acoustic_text"
    header = {
        "kind": kind,
        "config": config.model_dump(mode="json"),
        "feature_dim": feature_dim,
        "vocab_size": vocab_size,
    }
    return pack_tensors(header, params.named_tensors())


def decode_detector(data: bytes, path: str, kind: str):
    """Returns (params, config, feature_dim)"""
    header, tensors = unpack_tensors(data, path)
    _expect_kind(header, kind, path)
    feature_dim = int(header.get("feature_dim", 0))
    try:
        if kind == "acoustic":
            config = AcousticDetectorConfig.model_validate(header.get("config"))
            shapes = acoustic_shapes(config, feature_dim)
            cls = AcousticDetectorParams
        else:
            config = AcousticTextConfig.model_validate(header.get("config"))
            shapes = acoustic_text_shapes(config, feature_dim, int(header.get("vocab_size", 0)))
            cls = AcousticTextParams
    except ValidationError as e:
        raise FormatError(path, _first_error(e)) from e
    for name, shape in shapes.items():
        if name not in tensors or tensors[name].shape != shape:
            raise FormatError(path, f"tensor {name} missing or not of shape {shape}")
    return cls.from_dict(tensors, config.layers), config, feature_dim


class CheckpointRepository(BaseRepository):
    """Checkpoints stored as single files under one directory"""

    def __init__(self, root: PathLike):
        super().__init__(root)

    def save(self, checkpoint: Checkpoint, name: str) -> Path:
        path = self.path(name)
        self.write_bytes(path, encode_checkpoint(checkpoint))
        logger.info("checkpoint_written", path=str(path), stage=checkpoint.stage, step=checkpoint.step)
        return path

    def load(self, name: str) -> Checkpoint:
        path = self.path(name)
        checkpoint = decode_checkpoint(self.read_bytes(path), str(path))
        logger.info("checkpoint_read", path=str(path), stage=checkpoint.stage, step=checkpoint.step)
        return checkpoint

    def save_detector(self, params: DetectorParams, config, name: str, feature_dim: int, vocab_size: int = 0) -> Path:
        path = self.path(name)
        self.write_bytes(path, encode_detector(params, config, feature_dim, vocab_size))
        logger.info("detector_written", path=str(path))
        return path

    def load_detector(self, name: str, kind: str):
        path = self.path(name)
        return decode_detector(self.read_bytes(path), str(path), kind)


def save_checkpoint(checkpoint: Checkpoint, path: PathLike) -> Path:
    path = Path(path)
    return CheckpointRepository(path.parent).save(checkpoint, path.name)


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    return CheckpointRepository(path.parent).load(path.name)
