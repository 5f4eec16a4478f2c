# kpitrack/services/corpus.py
"""
Ingesta del corpus: segmentación de transcripciones por turno de palabra,
limpieza de HTML de filings y pseudo-etiquetas regex de montos y porcentajes.
Funciones puras, seguras entre hilos.
"""

import json
import logging
import re
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
from bs4 import BeautifulSoup, ParserRejectedMarkup
from pydantic import ValidationError

from kpitrack.core.errors import FilingParseError, RejectedInputError
from kpitrack.schemas.corpus import (
    MAX_SNIPPET_CHARS,
    CallMetadata,
    FilingEntity,
    FilingSnippet,
    TranscriptChunk,
)
from kpitrack.services.extraction import canonical_value

logger = logging.getLogger(__name__)

DEFAULT_MAX_SENTENCES = 10


# ***************************************************************
# 1. Separador de oraciones basado en reglas
# ***************************************************************
_ABBREVIATIONS = frozenset({
    "inc", "corp", "co", "ltd", "llc", "plc", "mr", "mrs", "ms", "dr", "prof",
    "jr", "sr", "st", "vs", "etc", "e.g", "i.e", "u.s", "u.k", "no", "approx",
    "dept", "est", "fig", "jan", "feb", "mar", "apr", "jun", "jul", "aug",
    "sep", "sept", "oct", "nov", "dec", "q1", "q2", "q3", "q4", "fy",
})

# Puntuación final (con comillas/paréntesis de cierre) seguida de espacio y mayúscula
_BOUNDARY = re.compile(r"[.!?][\"')\]]*(?=\s+[\"'(\[]?[A-Z])")
_LAST_TOKEN = re.compile(r"(\S+)$")


def _is_abbreviation(fragment: str) -> bool:
    match = _LAST_TOKEN.search(fragment)
    if not match:
        return False
    token = match.group(1).lstrip("\"'([").rstrip(".").lower()
    # Iniciales tipo "J." tampoco cierran oración
    return token in _ABBREVIATIONS or (len(token) == 1 and token.isalpha())


def split_sentences(text: str) -> List[str]:
    """Divide en oraciones sobre '.', '!' o '?' seguidos de espacio y mayúscula."""
    sentences = []
    start = 0
    for match in _BOUNDARY.finditer(text):
        if match.group(0)[0] == "." and _is_abbreviation(text[start:match.start()]):
            continue
        sentence = text[start:match.end()].strip()
        if sentence:
            sentences.append(sentence)
        start = match.end()
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def split_long_chunk(
    chunk: TranscriptChunk, max_sentences: int = DEFAULT_MAX_SENTENCES
) -> List[TranscriptChunk]:
    """
    Parte un chunk con más de max_sentences oraciones, llenando cada parte
    de izquierda a derecha. Los índices los reasigna quien llama.
    """
    if max_sentences < 1:
        raise ValueError("max_sentences debe ser >= 1.")
    sentences = split_sentences(chunk.text)
    if len(sentences) <= max_sentences:
        return [chunk]
    return [
        chunk.model_copy(update={"text": " ".join(sentences[i:i + max_sentences])})
        for i in range(0, len(sentences), max_sentences)
    ]


# ***************************************************************
# 2. Segmentación por turnos de palabra
# ***************************************************************
_HEADER_LINE = re.compile(r"^\s*(?P<header>[A-Z][^:\n]{0,80}?)\s*:\s*$")
_ROLE_SEPARATOR = re.compile(r"\s+-{1,3}\s+")
_ROLE_WORDS = frozenset({
    "ceo", "cfo", "coo", "cto", "analyst", "president", "chairman", "chair",
    "ir", "treasurer", "executive",
})
# Palabras de una línea de texto común que nunca forman parte de un nombre
_NON_NAME_WORDS = frozenset({
    "a", "an", "and", "are", "as", "at", "by", "for", "from", "in", "is", "it",
    "key", "of", "on", "or", "our", "so", "that", "the", "these", "this", "those",
    "to", "was", "we", "were", "what", "with", "following", "here", "they", "you",
})
_NAME_WORD = re.compile(r"^[A-Z][A-Za-z'\-]*\.?$")
MAX_NAME_WORDS = 5


def _is_name(text: str) -> bool:
    words = text.split()
    return 1 <= len(words) <= MAX_NAME_WORDS and all(
        _NAME_WORD.match(word) and word.rstrip(".").casefold() not in _NON_NAME_WORDS
        for word in words
    )


def parse_speaker_header(header: str) -> Optional[tuple]:
    """
    (nombre, rol) de una cabecera 'Nombre:', 'Rol Nombre:' o 'Nombre -- Rol:';
    None si no tiene forma de nombre propio.
    """
    header = " ".join(header.split())
    if not header or any(ch.isdigit() for ch in header) or header[-1] in ".?!,;":
        return None

    parts = _ROLE_SEPARATOR.split(header, maxsplit=1)
    if len(parts) == 2:
        name, role = parts[0].strip(), parts[1].strip()
        return (name, role) if role and _is_name(name) else None

    first, _, rest = header.partition(" ")
    if rest and first.lower() in _ROLE_WORDS:
        return (rest.strip(), first) if _is_name(rest) else None
    return (header, "") if _is_name(header) else None


def _coerce_metadata(meta: Union[CallMetadata, Mapping[str, Any]]) -> CallMetadata:
    if isinstance(meta, CallMetadata):
        return meta
    try:
        return CallMetadata.model_validate(dict(meta or {}))
    except (ValidationError, TypeError) as e:
        raise RejectedInputError(f"Metadatos de la llamada incompletos: {e}") from e


def is_operator(speaker_name: str) -> bool:
    return speaker_name.strip().casefold() == "operator"


def segment_transcript(
    raw: str,
    meta: Union[CallMetadata, Mapping[str, Any]],
    max_sentences: int = DEFAULT_MAX_SENTENCES,
) -> List[TranscriptChunk]:
    """Un chunk por turno de palabra, sin el operador, en orden de documento."""
    meta = _coerce_metadata(meta)
    if not raw.strip():
        return []

    turns: List[list] = []
    for line in raw.splitlines():
        match = _HEADER_LINE.match(line)
        speaker = parse_speaker_header(match.group("header")) if match else None
        if speaker is not None:
            turns.append([speaker[0], speaker[1], []])
        elif turns:
            turns[-1][2].append(line)

    chunks: List[TranscriptChunk] = []
    dropped = 0
    for name, role, lines in turns:
        if is_operator(name):
            dropped += 1
            continue
        text = " ".join(" ".join(lines).split())
        if not text:
            continue
        try:
            turn = TranscriptChunk(
                ticker=meta.ticker,
                fiscal_year=meta.fiscal_year,
                fiscal_quarter=meta.fiscal_quarter,
                call_date=meta.call_date,
                speaker_name=name,
                speaker_role=role,
                text=text,
            )
        except ValidationError as e:
            raise RejectedInputError(f"Turno de '{name}' rechazado: {e}") from e
        chunks.extend(split_long_chunk(turn, max_sentences))

    logger.debug(
        "%s FY%sQ%s: %d turnos, %d del operador descartados, %d chunks",
        meta.ticker, meta.fiscal_year, meta.fiscal_quarter, len(turns), dropped, len(chunks),
    )
    return [chunk.model_copy(update={"chunk_index": i}) for i, chunk in enumerate(chunks)]


_CALL_FILENAME = re.compile(
    r"^(?P<ticker>[A-Za-z.]+)_(?P<fiscal_year>\d{4})_Q(?P<fiscal_quarter>[1-4])_(?P<call_date>\d{4}-\d{2}-\d{2})$"
)


def read_call_metadata(path: Path) -> CallMetadata:
    """Metadatos desde '<stem>.meta.json' o desde el nombre TICKER_YYYY_Qn_YYYY-MM-DD."""
    sidecar = path.with_name(path.stem + ".meta.json")
    if sidecar.exists():
        try:
            data: Dict[str, Any] = json.loads(sidecar.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise RejectedInputError(f"Sidecar ilegible '{sidecar}': {e}") from e
        return _coerce_metadata(data)
    match = _CALL_FILENAME.match(path.stem)
    if not match:
        raise RejectedInputError(f"'{path.name}' no trae metadatos (sidecar ni nombre).")
    return _coerce_metadata({**match.groupdict(), "ticker": match.group("ticker").upper()})


# ***************************************************************
# 3. Parser de HTML de filings
# ***************************************************************
_TEXT_TAGS = ["p", "div", "span", "section"]
_DROPPED_TAGS = ["table", "script", "style"]


def _keep_longest(candidates: Sequence[str]) -> List[str]:
    """Descarta los textos contenidos en otro más largo; conserva el orden."""
    unique = list(dict.fromkeys(candidates))
    return [
        text for text in unique
        if not any(len(other) > len(text) and text in other for other in unique)
    ]


def filter_length_outliers(snippets: Sequence[str], max_chars: int = MAX_SNIPPET_CHARS) -> List[str]:
    """Descarta snippets más largos que media + 3 desviaciones del lote (y que max_chars)."""
    if not snippets:
        return []
    lengths = np.array([len(s) for s in snippets], dtype=float)
    cutoff = min(float(lengths.mean() + 3 * lengths.std()), float(max_chars))
    return [s for s in snippets if len(s) <= cutoff]


def _decode(html: Union[str, bytes]) -> str:
    if isinstance(html, bytes):
        try:
            return html.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FilingParseError("HTML con bytes no UTF-8", offset=e.start) from e
    return html


def _soup(text: str) -> BeautifulSoup:
    return BeautifulSoup(text, "html.parser")


def _rejection_offset(text: str) -> int:
    """Offset en bytes del primer carácter con el que el parser rechaza el prefijo."""
    # Invariante: text[:good] se interpreta, text[:bad] no
    good, bad = 0, len(text)
    while bad - good > 1:
        middle = (good + bad) // 2
        try:
            _soup(text[:middle])
        except (ParserRejectedMarkup, AssertionError):
            bad = middle
        else:
            good = middle
    return len(text[:bad - 1].encode("utf-8"))


def parse_filing_html(
    html: Union[str, bytes],
    max_chars: int = MAX_SNIPPET_CHARS,
    length_filter: bool = True,
) -> List[str]:
    """Textos limpios de un filing: sin tablas, deduplicados, con mayúscula inicial."""
    text = _decode(html)
    if not text.strip():
        return []
    try:
        soup = _soup(text)
    except (ParserRejectedMarkup, AssertionError) as e:
        raise FilingParseError(f"HTML no interpretable: {e}", offset=_rejection_offset(text)) from e

    for tag in soup(_DROPPED_TAGS):
        tag.decompose()

    candidates = []
    for element in soup.find_all(_TEXT_TAGS):
        content = " ".join(element.get_text(" ").split())
        if content:
            candidates.append(content)

    snippets = []
    for snippet in _keep_longest(candidates):
        snippet = snippet.lstrip()
        # Snippets mal formados: empiezan con '.', minúscula o arrastran markup
        if not snippet or snippet.startswith(".") or not snippet[0].isupper() or "<" in snippet:
            continue
        snippets.append(snippet)

    if length_filter:
        snippets = filter_length_outliers(snippets, max_chars)
    return snippets


def parse_filings(
    documents: Sequence[Union[str, bytes]],
    max_chars: int = MAX_SNIPPET_CHARS,
    on_error: Optional[Callable[[int, FilingParseError], None]] = None,
) -> List[List[str]]:
    """
    Versión por lote: el filtro de media + 3 desviaciones se calcula sobre todo el lote.
    Con on_error, un documento no interpretable se notifica y queda sin snippets.
    """
    per_document: List[List[str]] = []
    for index, doc in enumerate(documents):
        try:
            per_document.append(parse_filing_html(doc, max_chars, length_filter=False))
        except FilingParseError as e:
            if on_error is None:
                raise
            on_error(index, e)
            per_document.append([])
    kept = set(filter_length_outliers([s for snippets in per_document for s in snippets], max_chars))
    return [[s for s in snippets if s in kept] for snippets in per_document]


# ***************************************************************
# 4. Pseudo-etiquetas regex (montos y porcentajes)
# ***************************************************************
REGEX_DOLLAR = "regex_dollar"
REGEX_PERCENTAGE = "regex_percentage"

_NUMBER = r"(?:\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?)"
_SCALE = r"(?i:thousand|million|billion|trillion|bn|mm|[kmb])\b"
_DOLLAR = re.compile(rf"[$€£]\s?{_NUMBER}(?:\s?{_SCALE})?")
_PERCENT = re.compile(rf"{_NUMBER}\s?(?:%|(?i:percent|per cent|basis points?|bps)\b)")


class KpiSpan(NamedTuple):
    start: int
    end: int
    tag: str


def tag_regex_kpis(text: str) -> List[KpiSpan]:
    """Spans de montos y porcentajes, ordenados y sin solapamiento."""
    found = [KpiSpan(m.start(), m.end(), REGEX_DOLLAR) for m in _DOLLAR.finditer(text)]
    found += [KpiSpan(m.start(), m.end(), REGEX_PERCENTAGE) for m in _PERCENT.finditer(text)]
    found.sort(key=lambda s: (s.start, -(s.end - s.start)))

    spans: List[KpiSpan] = []
    for span in found:
        if not spans or span.start >= spans[-1].end:
            spans.append(span)
    return spans


def build_filing_snippet(text: str, meta: Optional[Mapping[str, Any]] = None) -> FilingSnippet:
    """Snippet con entidades de las pseudo-etiquetas regex."""
    entities = []
    for span in tag_regex_kpis(text):
        parsed = canonical_value(text[span.start:span.end])
        entities.append(FilingEntity(
            start=span.start,
            end=span.end,
            tag=span.tag,
            unit="iso4217:USD" if span.tag == REGEX_DOLLAR else "xbrli:pure",
            numeric_value=parsed.value if parsed.value is not None else 0.0,
        ))
    return FilingSnippet(text=text, entities=entities, **dict(meta or {}))
