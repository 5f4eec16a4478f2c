# kpitrack/schemas/matching.py

from enum import Enum
from typing import Any, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from kpitrack.schemas.corpus import ChunkRef


# ***************************************************************
# 1. Grupos anotados (gold)
# ***************************************************************
class GoldCategory(str, Enum):
    traditional = "traditional"
    non_traditional = "non_traditional"
    value = "value"


class GoldEntity(BaseModel):
    text: str = Field(..., min_length=1)
    category: GoldCategory

    model_config = ConfigDict(frozen=True)


def gold_label(entities: List[GoldEntity]) -> str:
    """Etiqueta gold: textos de las entidades no-valor, en orden de documento."""
    return " ".join(
        e.text.strip() for e in entities if e.category != GoldCategory.value and e.text.strip()
    )


class GoldGroup(BaseModel):
    """Grupo de relación anotado por el experto."""
    chunk_ref: ChunkRef
    entities: List[GoldEntity]
    label: str = ""
    value: Union[float, str]

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="before")
    @classmethod
    def fill_label(cls, data: Any) -> Any:
        # La herramienta de anotación exporta grupos sin etiqueta
        if isinstance(data, dict) and not str(data.get("label") or "").strip():
            entities = [GoldEntity.model_validate(e) for e in data.get("entities", [])]
            data = {**data, "label": gold_label(entities)}
        return data

    @model_validator(mode="after")
    def check_group(self):
        if not any(e.category == GoldCategory.value for e in self.entities):
            raise ValueError("El grupo gold necesita al menos una entidad de valor.")
        if not self.label.strip():
            raise ValueError("El grupo gold necesita una etiqueta no vacía.")
        return self

    @property
    def source_value(self) -> str:
        return " ".join(e.text for e in self.entities if e.category == GoldCategory.value)

    @property
    def entity_keys(self) -> frozenset:
        return frozenset((e.text.casefold(), e.category.value) for e in self.entities)


# ***************************************************************
# 2. Reporte de alineamiento
# ***************************************************************
class MatchKind(str, Enum):
    exact = "exact"
    scaled_1000x = "scaled_1000x"
    range_contained = "range_contained"
    nonnumeric_gestalt = "nonnumeric_gestalt"


class MatchPair(BaseModel):
    prediction: int = Field(..., ge=0)
    gold: int = Field(..., ge=0)
    value_kind: MatchKind
    label_similarity: float = Field(..., ge=0.0, le=1.0)


class MatchReport(BaseModel):
    """Alineamiento uno a uno entre predicciones y golds de un chunk."""
    chunk_ref: Optional[ChunkRef] = None
    pairs: List[MatchPair] = Field(default_factory=list)
    unmatched_predictions: List[int] = Field(default_factory=list)
    unmatched_golds: List[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_golds_once(self):
        golds = [p.gold for p in self.pairs]
        if len(golds) != len(set(golds)):
            raise ValueError("Un gold aparece en más de un par.")
        return self
