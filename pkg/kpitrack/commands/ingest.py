# kpitrack/commands/ingest.py

import json
import logging
from pathlib import Path
from typing import List

from pydantic import ValidationError

from kpitrack.commands.common import chunks_path, snippets_path
from kpitrack.core.artifacts import FILING_SNIPPET, TRANSCRIPT_CHUNK, write_jsonl
from kpitrack.core.errors import EXIT_OK, EXIT_PARTIAL, FilingParseError, KpiTrackError, RejectedInputError
from kpitrack.schemas.config import PipelineConfig
from kpitrack.schemas.corpus import FilingSnippet, TranscriptChunk
from kpitrack.services.corpus import (
    build_filing_snippet,
    parse_filings,
    read_call_metadata,
    segment_transcript,
)

logger = logging.getLogger(__name__)

TRANSCRIPT_SUFFIXES = {".txt"}
FILING_SUFFIXES = {".htm", ".html"}


def register(subparsers) -> None:
    parser = subparsers.add_parser("ingest", help="Segmenta transcripciones y limpia filings HTML.")
    parser.add_argument("inputs", nargs="*", help="Archivos o directorios (por defecto paths.corpus_dir).")
    parser.set_defaults(handler=run)


def collect_inputs(inputs: List[Path]) -> List[Path]:
    files = set()
    for path in inputs:
        if path.is_dir():
            files.update(p for p in path.rglob("*") if p.is_file())
        else:
            files.add(path)
    return sorted(
        p for p in files
        if p.suffix.lower() in TRANSCRIPT_SUFFIXES | FILING_SUFFIXES
    )


# ***************************************************************
# 1. Transcripciones
# ***************************************************************
def ingest_transcript(path: Path, max_sentences: int) -> List[TranscriptChunk]:
    meta = read_call_metadata(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise RejectedInputError(f"No se pudo leer '{path}': {e}") from e
    return segment_transcript(raw, meta, max_sentences)


# ***************************************************************
# 2. Filings
# ***************************************************************
def _filing_meta(path: Path) -> dict:
    sidecar = path.with_name(path.stem + ".meta.json")
    if not sidecar.exists():
        return {}
    try:
        return json.loads(sidecar.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise RejectedInputError(f"Sidecar ilegible '{sidecar}': {e}") from e


def run(args, config: PipelineConfig) -> int:
    inputs = [Path(p) for p in (args.inputs or [config.paths.corpus_dir])]
    files = collect_inputs(inputs)
    max_chars = config.thresholds.max_snippet_chars

    chunks: List[TranscriptChunk] = []
    seen_calls = set()
    filing_inputs = []
    failures = 0
    for path in files:
        try:
            if path.suffix.lower() in TRANSCRIPT_SUFFIXES:
                call_chunks = ingest_transcript(path, config.thresholds.max_sentences)
                call = call_chunks[0].ref.sort_key[:3] if call_chunks else None
                if call is not None and call in seen_calls:
                    raise RejectedInputError(f"Llamada repetida {call} en '{path}'.")
                seen_calls.add(call)
                chunks.extend(call_chunks)
                print(f"{path.name}: {len(call_chunks)} chunks")
            else:
                filing_inputs.append((path, _filing_meta(path), path.read_bytes()))
        except (KpiTrackError, OSError) as e:
            failures += 1
            logger.error("%s: %s", path, getattr(e, "detail", e))

    def filing_failed(index: int, error: FilingParseError) -> None:
        nonlocal failures
        failures += 1
        logger.error("%s: %s", filing_inputs[index][0], error.detail)

    parsed = parse_filings([raw for _, _, raw in filing_inputs], max_chars, on_error=filing_failed)
    records: List[FilingSnippet] = []
    for (path, meta, _), snippets in zip(filing_inputs, parsed):
        before = len(records)
        for text in snippets:
            try:
                records.append(build_filing_snippet(text, meta))
            except ValidationError as e:
                logger.warning("%s: snippet descartado (%d errores)", path.name, e.error_count())
        print(f"{path.name}: {len(records) - before} snippets ({len(snippets) - (len(records) - before)} descartados)")

    chunks.sort(key=lambda c: c.ref.sort_key)
    write_jsonl(chunks_path(config), TRANSCRIPT_CHUNK, chunks)
    write_jsonl(snippets_path(config), FILING_SNIPPET, records)
    print(f"Total: {len(chunks)} chunks, {len(records)} snippets, {failures} archivos con error")
    logger.info("ingest: %d archivos, %d fallidos", len(files), failures)

    if files and failures == len(files):
        return EXIT_PARTIAL
    return EXIT_OK
