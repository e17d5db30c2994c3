from typing import List, Optional


class IQStreamError(Exception):
    """
    Base error; exit_code is what the CLI returns when it surfaces this error
    """
    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ArgumentError(IQStreamError, ValueError):
    pass


class ShapeError(ArgumentError):
    pass


class NumericError(IQStreamError, ArithmeticError):
    pass


class TrainingError(IQStreamError):
    def __init__(
        self,
        detail: str,
        param_name: Optional[str] = None,
        step: Optional[int] = None,
    ):
        parts = [detail]
        if param_name is not None:
            parts.append(f"param={param_name}")
        if step is not None:
            parts.append(f"step={step}")
        super().__init__(" ".join(parts))
        self.param_name = param_name
        self.step = step


class CorpusIOError(IQStreamError, OSError):
    def __init__(self, path: str, detail: str):
        super().__init__(f"{path}: {detail}")
        self.path = path


class FormatError(IQStreamError):
    def __init__(self, path: str, detail: str, record: Optional[str] = None):
        where = f"{path} (record {record})" if record is not None else path
        super().__init__(f"{where}: {detail}")
        self.path = path
        self.record = record


class AcceptanceError(IQStreamError):
    def __init__(self, failed: List[str]):
        super().__init__(f"acceptance checks failed: {', '.join(failed)}")
        self.failed = failed


class UsageError(IQStreamError):
    exit_code = 2
