# kpitrack/core/config.py

import logging
import os
from pathlib import Path
from typing import Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from kpitrack.core.errors import ConfigError
from kpitrack.schemas.aggregate import FiscalCalendar
from kpitrack.schemas.config import PipelineConfig

logger = logging.getLogger(__name__)

# Archivo de configuración por defecto (en el directorio de trabajo)
DEFAULT_CONFIG_PATH = "kpitrack.yaml"


# ***************************************************************
# 1. Variables de entorno (.env)
# ***************************************************************
def load_environment(dotenv_path: Optional[str] = None) -> None:
    """Carga el .env (si existe) sin pisar variables ya definidas."""
    load_dotenv(dotenv_path=dotenv_path, override=False)


def get_credential(env_name: str) -> str:
    """Lee una credencial de la variable de entorno indicada en la configuración."""
    if not env_name:
        return ""
    value = os.getenv(env_name)
    if not value:
        raise ConfigError(f"La variable de entorno '{env_name}' no está definida.")
    return value


# ***************************************************************
# 2. Configuración del pipeline (YAML)
# ***************************************************************
def parse_config(text: str) -> PipelineConfig:
    try:
        data = yaml.safe_load(text) or {}
        return PipelineConfig.model_validate(data)
    except (yaml.YAMLError, ValidationError) as e:
        raise ConfigError(f"Configuración inválida: {e}") from e


def dump_config(config: PipelineConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True, allow_unicode=True)


def load_config(path: Optional[Union[str, Path]] = None) -> PipelineConfig:
    """Lee la configuración; sin archivo se usan los valores por defecto."""
    if path is None:
        if not Path(DEFAULT_CONFIG_PATH).exists():
            logger.info("Sin %s, se usa la configuración por defecto.", DEFAULT_CONFIG_PATH)
            return PipelineConfig()
        path = DEFAULT_CONFIG_PATH
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"No se pudo leer la configuración '{path}': {e}") from e
    return parse_config(text)


def load_fiscal_calendar(path: Optional[Union[str, Path]] = None) -> FiscalCalendar:
    """Calendario fiscal editable; sin archivo se usa la tabla por defecto."""
    if path is None:
        return FiscalCalendar.default()
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        calendar = FiscalCalendar.model_validate({"tickers": data.get("tickers", data)})
    except (OSError, yaml.YAMLError, ValidationError) as e:
        raise ConfigError(f"Calendario fiscal inválido '{path}': {e}") from e
    # Las entradas del archivo completan la tabla por defecto
    merged = FiscalCalendar.default()
    merged.tickers.update(calendar.tickers)
    return merged
