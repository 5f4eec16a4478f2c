# kpitrack/schemas/config.py

from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator


# ***************************************************************
# 1. Proveedores LLM
# ***************************************************************
class ProviderConfig(BaseModel):
    """Endpoint compatible con chat/completions (OpenRouter, DeepSeek, ...)."""
    model_id: str = Field(..., min_length=1)
    endpoint: str = "https://openrouter.ai/api/v1/chat/completions"
    model_name: str = Field("", validate_default=True)
    credential_env: str = "OPENROUTER_API_KEY"
    max_retries: int = Field(3, ge=0)
    backoff_seconds: float = Field(1.0, ge=0)
    timeout_seconds: float = Field(120.0, gt=0)
    parallelism: int = Field(4, ge=1)
    prompt_price_per_token: float = Field(0.0, ge=0)
    completion_price_per_token: float = Field(0.0, ge=0)
    supports_schema: bool = True

    @field_validator("model_name")
    @classmethod
    def default_model_name(cls, value: str, info) -> str:
        return value or info.data.get("model_id", "")


# ***************************************************************
# 2. Similaridad
# ***************************************************************
class ScorerKind(str, Enum):
    cross_encoder_remote = "cross_encoder_remote"
    lexical_fallback = "lexical_fallback"


class ScorerConfig(BaseModel):
    kind: ScorerKind = ScorerKind.lexical_fallback
    endpoint: str = ""
    model: str = "cross-encoder/stsb-roberta-large"
    credential_env: str = ""
    batch_size: int = Field(32, ge=1)
    timeout_seconds: float = Field(60.0, gt=0)


# ***************************************************************
# 3. Umbrales y rutas
# ***************************************************************
class Thresholds(BaseModel):
    cluster: float = Field(0.85, gt=0, le=1)
    value_tolerance: float = Field(0.01, gt=0, le=1)
    gestalt: float = Field(0.8, gt=0, le=1)
    scaled_match: float = Field(0.75, gt=0, le=1)
    min_periods: int = Field(4, ge=1)
    max_sentences: int = Field(10, ge=1)
    max_snippet_chars: int = Field(4513, ge=1)


class PathsConfig(BaseModel):
    corpus_dir: str = "data/raw"
    output_dir: str = "out"
    replay_dir: Optional[str] = None


class PipelineConfig(BaseModel):
    """Configuración completa del pipeline (archivo YAML)."""
    providers: List[ProviderConfig] = Field(default_factory=list)
    judge: Optional[ProviderConfig] = None
    scorer: ScorerConfig = Field(default_factory=ScorerConfig)
    thresholds: Thresholds = Field(default_factory=Thresholds)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    fiscal_calendar_path: Optional[str] = None
    prompt_template_path: Optional[str] = None

    @field_validator("providers")
    @classmethod
    def unique_model_ids(cls, value: List[ProviderConfig]) -> List[ProviderConfig]:
        ids = [p.model_id for p in value]
        if len(ids) != len(set(ids)):
            raise ValueError("model_id repetido en providers.")
        return value

    def provider(self, model_id: str) -> ProviderConfig:
        for provider in self.providers:
            if provider.model_id == model_id:
                return provider
        raise KeyError(model_id)
