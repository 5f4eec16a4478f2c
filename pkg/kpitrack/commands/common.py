# kpitrack/commands/common.py
"""Utilidades compartidas por los subcomandos: rutas de salida y selección de modelos."""

import logging
from pathlib import Path
from typing import List, Optional

from kpitrack.core.errors import ConfigError
from kpitrack.schemas.config import PipelineConfig, ProviderConfig
from kpitrack.services.extraction import check_template
from kpitrack.services.prompts import EXTRACTION_TEMPLATE

logger = logging.getLogger(__name__)


def safe_name(model_id: str) -> str:
    return model_id.replace("/", "__")


def output_dir(config: PipelineConfig) -> Path:
    return Path(config.paths.output_dir)


def chunks_path(config: PipelineConfig) -> Path:
    return output_dir(config) / "corpus" / "chunks.jsonl"


def snippets_path(config: PipelineConfig) -> Path:
    return output_dir(config) / "corpus" / "snippets.jsonl"


def extractions_path(config: PipelineConfig, model_id: str) -> Path:
    return output_dir(config) / "extractions" / f"{safe_name(model_id)}.jsonl"


PARTIAL_SUFFIX = ".partial.jsonl"


def partial_path(path: Path) -> Path:
    """Archivo donde extract escribe cada resultado apenas termina."""
    return path.with_name(path.stem + PARTIAL_SUFFIX)


def eval_dir(config: PipelineConfig) -> Path:
    return output_dir(config) / "eval"


def track_dir(config: PipelineConfig) -> Path:
    return output_dir(config) / "track"


def parse_list(value: Optional[str]) -> List[str]:
    return [item.strip() for item in (value or "").split(",") if item.strip()]


def replay_dir(args, config: PipelineConfig) -> Optional[str]:
    return getattr(args, "replay", None) or config.paths.replay_dir


def select_providers(args, config: PipelineConfig) -> List[ProviderConfig]:
    """Proveedores de --models (o todos los configurados)."""
    requested = parse_list(getattr(args, "models", None))
    if not requested:
        if not config.providers:
            raise ConfigError("No hay proveedores configurados; use --models o el archivo de configuración.")
        return list(config.providers)

    selected = []
    for model_id in requested:
        try:
            selected.append(config.provider(model_id))
        except KeyError:
            # Con replay basta el identificador del modelo
            if replay_dir(args, config) is None:
                raise ConfigError(f"Modelo '{model_id}' no está en la configuración.")
            selected.append(ProviderConfig(model_id=model_id))
    return selected


def model_ids_for(args, config: PipelineConfig) -> List[str]:
    """Modelos a leer: --models, los configurados o los archivos de extracción presentes."""
    requested = parse_list(getattr(args, "models", None))
    if requested:
        return requested
    if config.providers:
        return [p.model_id for p in config.providers]
    folder = output_dir(config) / "extractions"
    found = sorted(
        p.stem.replace("__", "/") for p in folder.glob("*.jsonl") if not p.name.endswith(PARTIAL_SUFFIX)
    )
    if not found:
        raise ConfigError(f"No hay extracciones en '{folder}'.")
    return found


def load_template(config: PipelineConfig) -> str:
    if not config.prompt_template_path:
        return EXTRACTION_TEMPLATE
    try:
        template = Path(config.prompt_template_path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"No se pudo leer la plantilla '{config.prompt_template_path}': {e}") from e
    check_template(template)
    return template
