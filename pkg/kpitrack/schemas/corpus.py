# kpitrack/schemas/corpus.py

from datetime import date
from typing import Any, List

from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

# Límite duro de longitud de un snippet de filing
MAX_SNIPPET_CHARS = 4513


# ***************************************************************
# 1. Metadatos de la llamada
# ***************************************************************
class CallMetadata(BaseModel):
    """Metadatos de una earnings call: ticker, periodo fiscal y fecha."""
    ticker: str = Field(..., min_length=1, max_length=10)
    fiscal_year: int = Field(..., ge=1900, le=2200)
    fiscal_quarter: int = Field(..., ge=1, le=4)
    call_date: date

    model_config = ConfigDict(frozen=True)


class ChunkRef(BaseModel):
    """Identificador de un chunk dentro del corpus."""
    ticker: str
    fiscal_year: int
    fiscal_quarter: int
    chunk_index: int = Field(..., ge=0)

    model_config = ConfigDict(frozen=True)

    @property
    def sort_key(self) -> tuple:
        return (self.ticker, self.fiscal_year, self.fiscal_quarter, self.chunk_index)

    def __str__(self) -> str:
        return f"{self.ticker}/FY{self.fiscal_year}Q{self.fiscal_quarter}#{self.chunk_index}"


# ***************************************************************
# 2. Chunk de transcripción (un turno de palabra)
# ***************************************************************
class TranscriptChunk(BaseModel):
    """Un turno ininterrumpido de un orador, con los metadatos de la llamada."""
    ticker: str
    fiscal_year: int
    fiscal_quarter: int = Field(..., ge=1, le=4)
    call_date: date
    speaker_name: str
    speaker_role: str = ""
    text: str = Field(..., min_length=1)
    chunk_index: int = Field(0, ge=0)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_speaker(self):
        if self.speaker_name.strip().casefold() == "operator":
            raise ValueError("Los turnos del operador no se ingestan.")
        return self

    @field_serializer("call_date")
    def serialize_date(self, value: date) -> str:
        return value.isoformat()

    @property
    def ref(self) -> ChunkRef:
        return ChunkRef(
            ticker=self.ticker,
            fiscal_year=self.fiscal_year,
            fiscal_quarter=self.fiscal_quarter,
            chunk_index=self.chunk_index,
        )


# ***************************************************************
# 3. Snippets de filings SEC (10-K / 10-Q)
# ***************************************************************
FILING_ENTITY_FIELDS = (
    "start", "end", "tag", "period_kind", "start_date", "end_date", "unit", "numeric_value",
)


class FilingEntity(BaseModel):
    start: int = Field(..., ge=0)
    end: int
    tag: str
    period_kind: str = ""
    start_date: str = ""
    end_date: str = ""
    unit: str = ""
    numeric_value: float = 0.0


class FilingSnippet(BaseModel):
    """Fragmento de texto de un filing con sus entidades etiquetadas."""
    form_type: str = ""
    accession_number: str = ""
    filing_date: str = ""
    quarter_ending: str = ""
    company_name: str = ""
    text: str = Field(..., min_length=1, max_length=MAX_SNIPPET_CHARS)
    entities: List[FilingEntity] = Field(default_factory=list)

    @field_validator("entities", mode="before")
    @classmethod
    def entities_from_arrays(cls, value: Any) -> Any:
        # El formato publicado guarda cada entidad como un array posicional
        if isinstance(value, list):
            return [
                dict(zip(FILING_ENTITY_FIELDS, item)) if isinstance(item, (list, tuple)) else item
                for item in value
            ]
        return value

    @model_validator(mode="after")
    def check_text_and_spans(self):
        if self.text.startswith(".") or not self.text[0].isupper():
            raise ValueError("El snippet debe empezar con mayúscula.")
        for entity in self.entities:
            if not (0 <= entity.start < entity.end <= len(self.text)):
                raise ValueError(f"Span fuera del texto: ({entity.start}, {entity.end}).")
        return self

    @field_serializer("entities")
    def serialize_entities(self, value: List[FilingEntity]) -> list:
        return [[getattr(e, name) for name in FILING_ENTITY_FIELDS] for e in value]
