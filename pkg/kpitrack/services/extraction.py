# kpitrack/services/extraction.py
"""Prompt few-shot, parseo tolerante de respuestas y normalización de valores."""

import json
import logging
import re
from decimal import Decimal
from functools import lru_cache
from string import Template
from typing import Any, List, NamedTuple, Optional, Tuple

from pydantic import ValidationError

from kpitrack.core.errors import (
    ConfigError,
    ProviderError,
    ResponseParseError,
    ResponseSchemaError,
    TransportError,
)
from kpitrack.schemas.corpus import ChunkRef
from kpitrack.schemas.extraction import ChunkExtraction, Entity, EntityCategory, KpiGroup
from kpitrack.services.prompts import EXTRACTION_PLACEHOLDERS, EXTRACTION_SCHEMA, EXTRACTION_TEMPLATE
from kpitrack.services.providers import Provider, prompt_hash, request_extraction

logger = logging.getLogger(__name__)


# ***************************************************************
# 1. Construcción del prompt
# ***************************************************************
def fiscal_period_text(fiscal_year: int, fiscal_quarter: int) -> str:
    return f"FY{fiscal_year} Q{fiscal_quarter}"


def check_template(template: str) -> None:
    """Verifica que la plantilla tenga los cuatro marcadores."""
    missing = [
        name for name in EXTRACTION_PLACEHOLDERS
        if f"${name}" not in template and "${" + name + "}" not in template
    ]
    if missing:
        raise ConfigError(f"Faltan marcadores en la plantilla: {', '.join(missing)}")


def build_prompt(chunk, template: str = EXTRACTION_TEMPLATE) -> str:
    """Sustituye ticker, periodo, fecha y texto del chunk en la plantilla."""
    check_template(template)
    # safe_substitute deja intactos los montos del few-shot ("$10 billion")
    return Template(template).safe_substitute(
        tickr=chunk.ticker,
        fiscal_period=fiscal_period_text(chunk.fiscal_year, chunk.fiscal_quarter),
        time_of_report=chunk.call_date.isoformat(),
        target_text=chunk.text,
    )


# ***************************************************************
# 2. Normalización de valores
# ***************************************************************
class CanonicalValue(NamedTuple):
    value: Optional[float] = None
    text: Optional[str] = None
    bottom: Optional[float] = None
    top: Optional[float] = None

    @property
    def is_numeric(self) -> bool:
        return self.value is not None

    @property
    def is_range(self) -> bool:
        return self.bottom is not None


_SCALES = {
    "thousand": Decimal(10) ** 3, "k": Decimal(10) ** 3,
    "million": Decimal(10) ** 6, "mm": Decimal(10) ** 6, "mn": Decimal(10) ** 6, "m": Decimal(10) ** 6,
    "billion": Decimal(10) ** 9, "bn": Decimal(10) ** 9, "b": Decimal(10) ** 9,
    "trillion": Decimal(10) ** 12,
}
# Puntos básicos a puntos porcentuales: 100 bps = 1.00
_BASIS_POINT = Decimal("0.01")

_AMOUNT = re.compile(
    r"(?<![A-Za-z\d.])(?P<number>\d+(?:,\d{3})*(?:\.\d+)?|\.\d+)"
    r"\s*(?P<unit>thousand|million|billion|trillion|bn|mm|mn|bps|bp\b|basis points?|"
    r"percentage points?|percent|per cent|%|[kmb](?![a-z]))?",
    re.IGNORECASE,
)
_RANGE_GAP = re.compile(r"^\s*(?:-|–|—|to|and)\s*[$€£]?\s*$", re.IGNORECASE)


def _unit_kind(unit: Optional[str]) -> str:
    if not unit:
        return ""
    unit = unit.lower()
    if unit in ("bps", "bp") or unit.startswith("basis point"):
        return "bps"
    if unit in ("%", "percent", "per cent") or unit.startswith("percentage point"):
        return "percent"
    return unit


def _amount(match: re.Match, unit: str, text: str) -> Decimal:
    number = Decimal(match.group("number").replace(",", ""))
    start = match.start()
    # Signo negativo solo si el guion no une dos números ("10-20")
    if start > 0 and text[start - 1] in "-−" and (start < 2 or not text[start - 2].isalnum()):
        number = -number
    if unit == "bps":
        return number * _BASIS_POINT
    if unit == "percent" or not unit:
        return number
    return number * _SCALES[unit]


def canonical_value(source_value: str) -> CanonicalValue:
    """
    Valor canónico de un string: quita símbolos y separadores, aplica escalas,
    'X%' -> X, 'N basis points' -> N/100, un rango -> promedio y límites.
    Sin número devuelve el texto limpio como valor no numérico.
    """
    cleaned = " ".join((source_value or "").split())
    matches = list(_AMOUNT.finditer(cleaned))
    if not matches:
        return CanonicalValue(text=cleaned)

    first = matches[0]
    first_unit = _unit_kind(first.group("unit"))
    if len(matches) >= 2 and _RANGE_GAP.match(cleaned[first.end():matches[1].start()]):
        second = matches[1]
        second_unit = _unit_kind(second.group("unit"))
        # "$10-20 million": la escala del límite superior aplica al inferior
        low = _amount(first, first_unit or second_unit, cleaned)
        high = _amount(second, second_unit or first_unit, cleaned)
        low, high = min(low, high), max(low, high)
        return CanonicalValue(
            value=float((low + high) / 2),
            bottom=float(low),
            top=float(high),
        )
    return CanonicalValue(value=float(_amount(first, first_unit, cleaned)))


# ***************************************************************
# 3. Parseo tolerante de la respuesta del modelo
# ***************************************************************
_CODE_FENCE = re.compile(r"```(?:json|JSON)?\s*(.*?)```", re.DOTALL)


def load_json_object(raw: str) -> dict:
    """Primer objeto JSON de la respuesta, ignorando fences y prosa alrededor."""
    text = raw or ""
    fenced = _CODE_FENCE.search(text)
    if fenced:
        text = fenced.group(1)
    decoder = json.JSONDecoder()
    for match in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, match.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise ResponseParseError("La respuesta no contiene un objeto JSON interpretable.")


def parse_extraction_response(
    raw: str,
    model_id: str = "",
    chunk_ref: Optional[ChunkRef] = None,
) -> ChunkExtraction:
    """Entidades y grupos tipados; los grupos inválidos se descartan y se cuentan."""
    obj = load_json_object(raw)
    entities_raw: Any = obj.get("Entities")
    groups_raw: Any = obj.get("Groups")
    if not isinstance(entities_raw, list) or not isinstance(groups_raw, list):
        raise ResponseSchemaError("El objeto JSON debe tener las listas 'Entities' y 'Groups'.")

    entities: List[Entity] = []
    for item in entities_raw:
        try:
            entities.append(Entity.model_validate(item))
        except ValidationError:
            logger.warning("%s %s: entidad inválida descartada: %r", model_id, chunk_ref, item)

    groups: List[KpiGroup] = []
    dropped = 0
    for item in groups_raw:
        try:
            groups.append(KpiGroup.model_validate(item))
        except ValidationError as e:
            dropped += 1
            logger.warning(
                "%s %s: grupo descartado (%d errores)", model_id, chunk_ref, e.error_count()
            )

    return ChunkExtraction(
        model_id=model_id,
        chunk_ref=chunk_ref,
        entities=entities,
        groups=groups,
        dropped_groups=dropped,
    )


def serialize_extraction(extraction: ChunkExtraction) -> str:
    """Inverso de parse_extraction_response (formato de la respuesta del modelo)."""
    return json.dumps(extraction.to_response_dict(), ensure_ascii=False)


# ***************************************************************
# 4. Validación de la etiqueta
# ***************************************************************
# Orden de precedencia de las partes de la etiqueta
LABEL_PRECEDENCE = {
    EntityCategory.scope: 0,
    EntityCategory.modality: 1,
    EntityCategory.kpi_name: 2,
    EntityCategory.date: 3,
}


def _label_segmentation(words: Tuple[str, ...], parts: Tuple[Tuple[Tuple[str, ...], int], ...]):
    """(existe segmentación, existe segmentación en orden de precedencia)."""

    @lru_cache(maxsize=None)
    def search(pos: int, used: int, last_rank: int, ordered: bool) -> bool:
        if pos == len(words):
            return True
        for index, (part_words, rank) in enumerate(parts):
            if used & (1 << index) or words[pos:pos + len(part_words)] != part_words:
                continue
            if ordered and rank < last_rank:
                continue
            if search(pos + len(part_words), used | (1 << index), rank, ordered):
                return True
        return False

    return search(0, 0, -1, False), search(0, 0, -1, True)


def validate_label(group: KpiGroup) -> List[str]:
    """
    Revisa que la etiqueta esté hecha solo con textos de entidades del grupo,
    separados por un espacio, en el orden scope, modality, kpi_name, date.
    """
    violations: List[str] = []
    label = group.label
    if not label.strip():
        return ["La etiqueta está vacía."]
    if label != label.strip() or "  " in label:
        violations.append("La etiqueta debe separar sus partes con un único espacio.")

    words = tuple(label.casefold().split())
    parts = tuple(dict.fromkeys(
        (tuple(e.text.casefold().split()), LABEL_PRECEDENCE[e.category])
        for e in group.entities
        if e.category in LABEL_PRECEDENCE and e.text.strip()
    ))
    any_split, ordered_split = _label_segmentation(words, parts)
    if not any_split:
        known = {w for part_words, _ in parts for w in part_words}
        unknown = [w for w in words if w not in known] or list(words)
        violations.append(f"Texto fuera de las entidades del grupo: {' '.join(unknown)}")
    elif not ordered_split:
        violations.append("Las partes no siguen el orden scope, modality, kpi_name, date.")
    return violations


# ***************************************************************
# 5. Extracción de un chunk (prompt -> proveedor -> parseo)
# ***************************************************************
def extract_chunk(
    provider: Provider,
    chunk,
    template: str = EXTRACTION_TEMPLATE,
    schema: Optional[dict] = EXTRACTION_SCHEMA,
) -> ChunkExtraction:
    """Un chunk de punta a punta. Los fallos quedan en status='failed', no se propagan."""
    prompt = build_prompt(chunk, template)
    digest = prompt_hash(prompt)
    try:
        response = request_extraction(provider, prompt, schema)
    except (TransportError, ProviderError) as e:
        logger.error("%s %s: %s", provider.model_id, chunk.ref, e.detail)
        return ChunkExtraction(
            model_id=provider.model_id, chunk_ref=chunk.ref,
            status="failed", error=e.detail, prompt_hash=digest,
        )

    stats = {
        "elapsed_seconds": response.elapsed_seconds,
        "cost_usd": response.cost_usd,
        "attempts": response.attempts,
        "prompt_hash": digest,
    }
    try:
        extraction = parse_extraction_response(
            response.text, model_id=provider.model_id, chunk_ref=chunk.ref
        )
    except (ResponseParseError, ResponseSchemaError) as e:
        logger.warning("%s %s: respuesta inválida: %s", provider.model_id, chunk.ref, e.detail)
        return ChunkExtraction(
            model_id=provider.model_id, chunk_ref=chunk.ref,
            status="failed", error=e.detail, **stats,
        )
    return extraction.model_copy(update=stats)
