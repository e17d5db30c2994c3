import json
from pathlib import Path
from typing import Any, Iterable, Iterator, List, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from app.core.errors import CorpusIOError, FormatError

SchemaType = TypeVar("SchemaType", bound=BaseModel)
PathLike = Union[str, Path]


class BaseRepository:
    """
    Base repository over one artifact directory: path resolution plus the
    JSON / JSONL / binary primitives every concrete repository shares
    """
    def __init__(self, root: PathLike):
        self.root = Path(root)

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    def ensure_root(self) -> None:
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise CorpusIOError(str(self.root), f"cannot create directory: {e.strerror}") from e

    def read_bytes(self, path: Path) -> bytes:
        try:
            return path.read_bytes()
        except FileNotFoundError:
            raise CorpusIOError(str(path), "file not found") from None
        except OSError as e:
            raise CorpusIOError(str(path), f"cannot read: {e.strerror}") from e

    def write_bytes(self, path: Path, data: bytes) -> None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        except OSError as e:
            raise CorpusIOError(str(path), f"cannot write: {e.strerror}") from e

    def read_json(self, path: Path) -> Any:
        raw = self.read_bytes(path)
        try:
            return json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise FormatError(str(path), f"invalid JSON: {e}") from e

    def write_json(self, path: Path, payload: Any) -> None:
        self.write_bytes(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())

    def write_jsonl(self, path: Path, records: Iterable[Any]) -> None:
        lines = [json.dumps(r, sort_keys=True) for r in records]
        self.write_bytes(path, ("\n".join(lines) + "\n" if lines else "").encode())

    def iter_jsonl(self, path: Path) -> Iterator[Any]:
        try:
            text = self.read_bytes(path).decode()
        except UnicodeDecodeError as e:
            raise FormatError(str(path), f"not UTF-8: {e}") from e
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(str(path), f"invalid JSON: {e}", record=f"line {lineno}") from e

    def validate(self, schema: Type[SchemaType], payload: Any, path: Path, record: str = None) -> SchemaType:
        try:
            return schema.model_validate(payload)
        except ValidationError as e:
            raise FormatError(str(path), _first_error(e), record=record) from e

    def validate_all(self, schema: Type[SchemaType], path: Path) -> List[SchemaType]:
        out = []
        for lineno, payload in enumerate(self.iter_jsonl(path), start=1):
            record = payload.get("id", f"line {lineno}") if isinstance(payload, dict) else f"line {lineno}"
            out.append(self.validate(schema, payload, path, record=str(record)))
        return out


def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    loc = ".".join(str(p) for p in err.get("loc", ()))
    return f"{loc}: {err.get('msg')}" if loc else str(err.get("msg"))
