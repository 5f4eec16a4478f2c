# kpitrack/core/errors.py

from typing import Optional

# ***************************************************************
# 1. Códigos de salida del proceso
# ***************************************************************
EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


# ***************************************************************
# 2. Jerarquía de excepciones
# ***************************************************************

class KpiTrackError(Exception):
    """Error base del pipeline. Lleva un detalle legible y el código de salida."""

    exit_code: int = EXIT_PARTIAL

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ConfigError(KpiTrackError):
    """Configuración inválida: umbrales, plantillas, credenciales."""

    exit_code = EXIT_CONFIG


class RejectedInputError(KpiTrackError):
    """Entrada rechazada (metadatos incompletos, archivo ilegible)."""


class FilingParseError(KpiTrackError):
    """El HTML de un filing no se pudo interpretar."""

    def __init__(self, detail: str, offset: int = 0):
        super().__init__(f"{detail} (offset={offset})")
        self.offset = offset


class ResponseParseError(KpiTrackError):
    """No hay ningún objeto JSON interpretable en la respuesta."""


class ResponseSchemaError(KpiTrackError):
    """El objeto JSON no tiene las claves 'Entities' y 'Groups'."""


class TransportError(KpiTrackError):
    """Fallo de red o reintentos agotados."""


class ProviderError(KpiTrackError):
    """El proveedor respondió con un estado no reintentable."""

    def __init__(self, detail: str, status: Optional[int] = None, body: str = ""):
        super().__init__(detail)
        self.status = status
        self.body = body


class AgreementUndefinedError(KpiTrackError):
    """El estadístico de acuerdo no está definido para estos datos."""


class ArtifactError(KpiTrackError):
    """Archivo JSON-lines con cabecera o registros inválidos."""
