# tests/helpers.py
"""Constructores de objetos de dominio y fakes compartidos por los tests."""

import json
from datetime import date
from typing import Dict, List, Optional, Sequence, Tuple

from kpitrack.core.errors import TransportError
from kpitrack.schemas.aggregate import ClusterMember, Period
from kpitrack.schemas.corpus import ChunkRef, TranscriptChunk
from kpitrack.schemas.extraction import Entity, EntityCategory, KpiGroup
from kpitrack.schemas.matching import GoldEntity, GoldCategory, GoldGroup
from kpitrack.services.providers import ProviderResponse
from kpitrack.services.similarity import Scorer, normalize_text


def make_ref(ticker: str = "AAPL", year: int = 2023, quarter: int = 1, index: int = 0) -> ChunkRef:
    return ChunkRef(ticker=ticker, fiscal_year=year, fiscal_quarter=quarter, chunk_index=index)


def make_chunk(
    text: str = "Services revenue reached 22.3 billion dollars in Zurich.",
    ticker: str = "AAPL",
    year: int = 2023,
    quarter: int = 1,
    index: int = 0,
) -> TranscriptChunk:
    return TranscriptChunk(
        ticker=ticker,
        fiscal_year=year,
        fiscal_quarter=quarter,
        call_date=date(2023, 2, 2),
        speaker_name="Tim Cook",
        speaker_role="CEO",
        text=text,
        chunk_index=index,
    )


def make_group(
    label: str,
    value: Optional[float] = None,
    *,
    source_value: Optional[str] = None,
    non_numeric: Optional[str] = None,
    date_text: Optional[str] = None,
    bounds: Optional[Tuple[float, float]] = None,
) -> KpiGroup:
    """Grupo mínimo válido: entidad kpi_name con la etiqueta y entidad de valor."""
    if source_value is None:
        source_value = non_numeric if non_numeric is not None else f"{value}"
    entities = [
        Entity(text=label, category=EntityCategory.kpi_name),
        Entity(text=source_value, category=EntityCategory.kpi_value),
    ]
    source = f"{label} was {source_value}"
    if date_text:
        entities.append(Entity(text=date_text, category=EntityCategory.date))
        source += f" in {date_text}"
    fields = dict(
        source=source,
        entities=entities,
        source_value=source_value,
        label=label,
        value=value,
        value_non_numeric=non_numeric,
    )
    if bounds is not None:
        fields.update(is_range=True, bottom_of_range=bounds[0], top_of_range=bounds[1])
    return KpiGroup(**fields)


def make_gold(
    label: str,
    value,
    *,
    ref: Optional[ChunkRef] = None,
    source_value: Optional[str] = None,
    extra: Sequence[str] = (),
) -> GoldGroup:
    entities = [GoldEntity(text=label, category=GoldCategory.traditional)]
    entities += [GoldEntity(text=text, category=GoldCategory.non_traditional) for text in extra]
    entities.append(GoldEntity(text=source_value or str(value), category=GoldCategory.value))
    return GoldGroup(chunk_ref=ref or make_ref(), entities=entities, value=value)


def make_member(
    label: str,
    value: float,
    period: Period = Period(2024, 1),
    model_id: str = "m1",
    ticker: str = "AAPL",
) -> ClusterMember:
    return ClusterMember(
        model_id=model_id,
        ticker=ticker,
        period=period,
        group=make_group(label, value),
        chunk_ref=make_ref(ticker, period.fiscal_year, period.quarter),
    )


class TableScorer(Scorer):
    """Scorer con puntajes fijos por par de etiquetas (simétrico)."""

    def __init__(self, table: Dict[Tuple[str, str], float], default: float = 0.0):
        super().__init__()
        self.table = {frozenset((normalize_text(a), normalize_text(b))): s for (a, b), s in table.items()}
        self.default = default
        self.calls = 0

    def _key(self, a: str, b: str) -> Tuple[str, str]:
        a, b = normalize_text(a), normalize_text(b)
        return (a, b) if a <= b else (b, a)

    def _identical(self, a: str, b: str) -> bool:
        return normalize_text(a) == normalize_text(b)

    def _compute(self, pairs: List[Tuple[str, str]]) -> List[float]:
        self.calls += len(pairs)
        return [self.table.get(frozenset(pair), self.default) for pair in pairs]


class ScriptedJudge:
    """Juez falso: responde según la etiqueta predicha que aparece en el prompt."""

    model_id = "judge"

    def __init__(self, verdicts: Dict[str, str], failing: Sequence[str] = ()):
        self.verdicts = verdicts
        self.failing = failing

    def complete(self, prompt: str, schema=None) -> ProviderResponse:
        for label in self.failing:
            if f'Model Prediction Label: "{label}"' in prompt:
                raise TransportError(f"judge: sin respuesta para {label}")
        for label, text in self.verdicts.items():
            if f'Model Prediction Label: "{label}"' in prompt:
                return ProviderResponse(text=text)
        return ProviderResponse(text="no verdict")


def verdict(value: bool) -> str:
    return json.dumps({"reasoning": "ok", "is_equivalent": value})


def chat_body(content: str, prompt_tokens: int = 0, completion_tokens: int = 0) -> dict:
    """Cuerpo de respuesta chat/completions."""
    return {
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }
