# kpitrack/commands/extract.py

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List

from kpitrack.commands.common import (
    chunks_path,
    extractions_path,
    load_template,
    partial_path,
    replay_dir,
    select_providers,
)
from kpitrack.core.artifacts import CHUNK_EXTRACTION, TRANSCRIPT_CHUNK, JsonlWriter, read_jsonl, write_jsonl
from kpitrack.core.errors import EXIT_OK, EXIT_PARTIAL
from kpitrack.schemas.config import PipelineConfig
from kpitrack.schemas.corpus import ChunkRef, TranscriptChunk
from kpitrack.schemas.extraction import ChunkExtraction
from kpitrack.services.extraction import extract_chunk
from kpitrack.services.providers import build_provider

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("extract", help="Extrae KPIs de cada chunk con cada modelo.")
    parser.add_argument("--models", help="Lista separada por comas de model_id.")
    parser.add_argument("--replay", help="Directorio de respuestas grabadas (sin red).")
    parser.add_argument("--record", action="store_true", help="Graba las respuestas en vivo en --replay.")
    parser.set_defaults(handler=run)


def _load_done(path: Path, wanted: set) -> Dict[ChunkRef, ChunkExtraction]:
    """Resultados exitosos del artefacto final y de un parcial que quedó de una corrida interrumpida."""
    done = {}
    for source, partial in [(path, False), (partial_path(path), True)]:
        if not source.exists():
            continue
        for record in read_jsonl(source, ChunkExtraction, CHUNK_EXTRACTION, skip_invalid=partial):
            if record.status == "ok" and record.chunk_ref in wanted:
                done[record.chunk_ref] = record
    return done


def run(args, config: PipelineConfig) -> int:
    chunks: List[TranscriptChunk] = read_jsonl(chunks_path(config), TranscriptChunk, TRANSCRIPT_CHUNK)
    template = load_template(config)
    replay = replay_dir(args, config)
    failed_total = 0

    for provider_config in select_providers(args, config):
        provider = build_provider(provider_config, replay_dir=replay, record=args.record)
        path = extractions_path(config, provider_config.model_id)

        # Reanudación: solo se vuelven a pedir los chunks sin resultado exitoso
        done = _load_done(path, {c.ref for c in chunks})
        pending = [c for c in chunks if c.ref not in done]
        logger.info("%s: %d chunks ya extraídos, %d pendientes", provider.model_id, len(done), len(pending))

        # Cada resultado se escribe en el parcial apenas termina
        with JsonlWriter(partial_path(path), CHUNK_EXTRACTION) as writer:
            for record in done.values():
                writer.write(record)

            def extract_and_save(chunk: TranscriptChunk) -> ChunkExtraction:
                result = extract_chunk(provider, chunk, template)
                writer.write(result)
                return result

            with ThreadPoolExecutor(max_workers=provider_config.parallelism) as pool:
                futures = [pool.submit(extract_and_save, chunk) for chunk in pending]
                results = [future.result() for future in futures]
        for result in results:
            done[result.chunk_ref] = result

        records = sorted(done.values(), key=lambda r: r.chunk_ref.sort_key)
        write_jsonl(path, CHUNK_EXTRACTION, records)
        partial_path(path).unlink()

        failed = sum(r.status == "failed" for r in records)
        dropped = sum(r.dropped_groups for r in records)
        failed_total += failed
        print(
            f"{provider.model_id}: {len(records)} chunks, {sum(len(r.groups) for r in records)} grupos, "
            f"{dropped} grupos descartados, {failed} fallidos, "
            f"{sum(r.elapsed_seconds for r in records):.1f}s, ${sum(r.cost_usd for r in records):.4f}"
        )

    return EXIT_PARTIAL if failed_total else EXIT_OK
