# kpitrack/core/artifacts.py

import json
import logging
import threading
from pathlib import Path
from typing import Iterable, List, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from kpitrack.core.errors import ArtifactError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Nombres de esquema de cada artefacto intermedio
TRANSCRIPT_CHUNK = "transcript_chunk"
FILING_SNIPPET = "filing_snippet"
CHUNK_EXTRACTION = "chunk_extraction"
GOLD_GROUP = "gold_group"
MATCH_REPORT = "match_report"
EVAL_REPORT = "eval_report"
TRACKED_KPI = "tracked_kpi"

M = TypeVar("M", bound=BaseModel)
PathLike = Union[str, Path]


def dumps_record(record: BaseModel) -> str:
    """Una línea JSON estable (claves ordenadas) para un registro."""
    return json.dumps(record.model_dump(mode="json"), sort_keys=True, ensure_ascii=False)


def header_line(schema: str) -> str:
    return json.dumps({"schema": schema, "version": SCHEMA_VERSION}, sort_keys=True)


# ***************************************************************
# 1. Escritor único por archivo
# ***************************************************************
class JsonlWriter:
    """Escritor JSON-lines con cabecera de esquema; seguro entre hilos."""

    def __init__(self, path: PathLike, schema: str):
        self.path = Path(path)
        self.schema = schema
        self._lock = threading.Lock()
        self._handle = None
        self.count = 0

    def __enter__(self) -> "JsonlWriter":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open("w", encoding="utf-8", newline="\n")
        self._handle.write(header_line(self.schema) + "\n")
        return self

    def write(self, record: BaseModel) -> None:
        with self._lock:
            self._handle.write(dumps_record(record) + "\n")
            self._handle.flush()
            self.count += 1

    def __exit__(self, *exc) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None


def write_jsonl(path: PathLike, schema: str, records: Iterable[BaseModel]) -> int:
    with JsonlWriter(path, schema) as writer:
        for record in records:
            writer.write(record)
    return writer.count


# ***************************************************************
# 2. Lectura con validación
# ***************************************************************
def read_jsonl(
    path: PathLike,
    model: Type[M],
    schema: str,
    require_header: bool = True,
    skip_invalid: bool = False,
) -> List[M]:
    """
    Lee un artefacto y valida cabecera y registros con el modelo pydantic.
    skip_invalid descarta (con warning) los registros ilegibles, p. ej. la
    última línea truncada de un archivo parcial.
    """
    path = Path(path)
    try:
        lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    except OSError as e:
        raise ArtifactError(f"No se pudo leer '{path}': {e}") from e

    if lines:
        try:
            first = json.loads(lines[0])
        except json.JSONDecodeError as e:
            raise ArtifactError(f"'{path}' línea 1: JSON inválido: {e}") from e
        if isinstance(first, dict) and set(first) == {"schema", "version"}:
            if first["schema"] != schema or first["version"] != SCHEMA_VERSION:
                raise ArtifactError(
                    f"'{path}' tiene esquema {first['schema']} v{first['version']}, "
                    f"se esperaba {schema} v{SCHEMA_VERSION}."
                )
            lines = lines[1:]
        elif require_header:
            raise ArtifactError(f"'{path}' no tiene cabecera de esquema.")

    records = []
    for number, line in enumerate(lines, start=2):
        try:
            records.append(model.model_validate_json(line))
        except ValidationError as e:
            if skip_invalid:
                logger.warning("'%s' línea %d descartada: %d errores", path, number, e.error_count())
                continue
            raise ArtifactError(f"'{path}' línea {number}: {e}") from e
    return records
