from pathlib import Path
from typing import Iterable, List, Optional

from app.core.logging import get_logger
from app.repositories.base import BaseRepository, PathLike
from app.schemas.corpus import Vocabulary
from app.schemas.decoding import DecodeResult

logger = get_logger(__name__)

TRACE_FILE = "trace.jsonl"


def trace_records(result: DecodeResult, vocab: Optional[Vocabulary] = None) -> List[dict]:
    """One record per decision event followed by the utterance summary"""
    records = [
        {
            "type": "event",
            "detector": result.detector,
            "utterance_id": result.utterance_id,
            **event.model_dump(mode="json"),
        }
        for event in result.events
    ]
    hypothesis = " ".join(vocab.decode(result.hypothesis)) if vocab is not None else result.hypothesis
    records.append(
        {
            "type": "summary",
            "detector": result.detector,
            "utterance_id": result.utterance_id,
            "hypothesis": hypothesis,
            "final_decision": result.final_decision,
            "decision_time_ms": result.decision_time_ms,
        }
    )
    return records


class TraceRepository(BaseRepository):
    def __init__(self, root: PathLike):
        super().__init__(root)

    def write(self, results: Iterable[DecodeResult], vocab: Optional[Vocabulary] = None,
              name: str = TRACE_FILE) -> Path:
        path = self.path(name)
        records = [r for result in results for r in trace_records(result, vocab)]
        self.write_jsonl(path, records)
        logger.info("trace_written", path=str(path), records=len(records))
        return path
