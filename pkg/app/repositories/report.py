import csv
import io
from pathlib import Path
from typing import Sequence

from app.core.logging import get_logger
from app.repositories.base import BaseRepository, PathLike
from app.schemas.evaluation import DetPoint, EvalSummary
from app.schemas.experiment import ExperimentReport

logger = get_logger(__name__)

REPORT_FILE = "report.json"
EXPERIMENTS_FILE = "experiments.json"


def det_csv(points: Sequence[DetPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "fa_rate", "fr_rate"])
    for p in points:
        writer.writerow([repr(p.threshold), repr(p.false_accept_rate), repr(p.false_reject_rate)])
    return buf.getvalue()


class ReportRepository(BaseRepository):
    """Evaluation outputs: det_<model>.csv per detector, report.json and experiments.json"""

    def __init__(self, root: PathLike):
        super().__init__(root)

    def write_det(self, model: str, points: Sequence[DetPoint]) -> Path:
        path = self.path(f"det_{model}.csv")
        self.write_bytes(path, det_csv(points).encode())
        return path

    def write_report(self, summaries: Sequence[EvalSummary]) -> Path:
        path = self.path(REPORT_FILE)
        self.write_json(path, [s.model_dump(mode="json") for s in summaries])
        logger.info("report_written", path=str(path), models=[s.model for s in summaries])
        return path

    def write_experiments(self, report: ExperimentReport) -> Path:
        path = self.path(EXPERIMENTS_FILE)
        self.write_json(path, {**report.model_dump(mode="json"), "passed": report.passed})
        logger.info("experiments_written", path=str(path), passed=report.passed, failed=[c.name for c in report.failed()])
        return path
