# kpitrack/schemas/extraction.py

from enum import Enum
from typing import Any, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from kpitrack.schemas.corpus import ChunkRef

# Tolerancia relativa del invariante valor = punto medio del rango
RANGE_MIDPOINT_TOLERANCE = 1e-6


# ***************************************************************
# 1. Entidades
# ***************************************************************
class EntityCategory(str, Enum):
    kpi_name = "kpi_name"
    kpi_value = "kpi_value"
    qualitative_desc = "qualitative_desc"
    scope = "scope"
    date = "date"
    modality = "modality"


class Entity(BaseModel):
    """Span literal del chunk con su categoría."""
    text: str = Field(..., min_length=1)
    category: EntityCategory

    model_config = ConfigDict(frozen=True, use_enum_values=False)

    @property
    def key(self) -> tuple:
        return (self.text, self.category.value)


# ***************************************************************
# 2. Grupo KPI (un hecho extraído)
# ***************************************************************
class KpiGroup(BaseModel):
    """
    Un hecho: entidades relacionadas, etiqueta y valor numérico o cualitativo.
    Los alias son las claves del JSON que devuelve el modelo.
    """
    source: str = Field("", alias="Source")
    entities: List[Entity] = Field(default_factory=list, alias="Entities")
    source_value: str = Field("", alias="Source Value")
    label: str = Field(..., alias="Label")
    value: Optional[float] = Field(None, alias="Value")
    value_non_numeric: Optional[str] = Field(None, alias="Value_NonNumeric")
    is_range: bool = Field(False, alias="Is_Range")
    top_of_range: Optional[float] = Field(None, alias="Top_of_range")
    bottom_of_range: Optional[float] = Field(None, alias="Bottom_of_range")

    model_config = ConfigDict(populate_by_name=True, frozen=True)

    @field_validator("value_non_numeric", mode="before")
    @classmethod
    def blank_to_none(cls, value: Any) -> Any:
        if isinstance(value, str) and not value.strip():
            return None
        return value

    @model_validator(mode="after")
    def check_value_invariants(self):
        # Exactamente uno de Value / Value_NonNumeric
        if (self.value is None) == (self.value_non_numeric is None):
            raise ValueError("Se requiere exactamente uno de Value o Value_NonNumeric.")

        if self.is_range:
            if self.top_of_range is None or self.bottom_of_range is None or self.value is None:
                raise ValueError("Un rango necesita Value, Top_of_range y Bottom_of_range.")
            if self.bottom_of_range > self.top_of_range:
                raise ValueError("Bottom_of_range mayor que Top_of_range.")
            midpoint = (self.top_of_range + self.bottom_of_range) / 2
            if abs(self.value - midpoint) > RANGE_MIDPOINT_TOLERANCE * max(1.0, abs(self.value)):
                raise ValueError("Value no es el promedio del rango.")
        elif self.top_of_range is not None or self.bottom_of_range is not None:
            raise ValueError("Límites de rango presentes sin Is_Range.")

        source = self.source.casefold()
        for entity in self.entities:
            if entity.text.casefold() not in source:
                raise ValueError(f"La entidad '{entity.text}' no aparece en Source.")
        return self

    @property
    def is_numeric(self) -> bool:
        return self.value is not None

    @property
    def entity_keys(self) -> frozenset:
        return frozenset((e.text.casefold(), e.category.value) for e in self.entities)


# ***************************************************************
# 3. Extracción de un chunk
# ***************************************************************
class ChunkExtraction(BaseModel):
    """Resultado de un modelo sobre un chunk, con tiempo y costo del request."""
    model_id: str = ""
    chunk_ref: Optional[ChunkRef] = None
    entities: List[Entity] = Field(default_factory=list)
    groups: List[KpiGroup] = Field(default_factory=list)
    elapsed_seconds: float = Field(0.0, ge=0)
    cost_usd: float = Field(0.0, ge=0)
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None
    dropped_groups: int = Field(0, ge=0)
    attempts: int = Field(0, ge=0)
    prompt_hash: str = ""

    @model_validator(mode="after")
    def groups_entities_subset(self):
        # Las entidades de cada grupo deben estar en la lista del chunk
        known = {e.key for e in self.entities}
        for group in self.groups:
            for entity in group.entities:
                if entity.key not in known:
                    self.entities.append(entity)
                    known.add(entity.key)
        return self

    def to_response_dict(self) -> dict:
        """Serializa al formato JSON de la respuesta del modelo (Entities/Groups)."""
        return {
            "Entities": [e.model_dump(mode="json") for e in self.entities],
            "Groups": [g.model_dump(mode="json", by_alias=True) for g in self.groups],
        }
