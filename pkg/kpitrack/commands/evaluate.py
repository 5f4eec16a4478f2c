# kpitrack/commands/evaluate.py

import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List

from kpitrack.commands.common import (
    chunks_path,
    eval_dir,
    extractions_path,
    model_ids_for,
    replay_dir,
    safe_name,
)
from kpitrack.core.artifacts import (
    CHUNK_EXTRACTION,
    GOLD_GROUP,
    MATCH_REPORT,
    TRANSCRIPT_CHUNK,
    read_jsonl,
    write_jsonl,
)
from kpitrack.core.errors import EXIT_OK, ConfigError
from kpitrack.schemas.config import PipelineConfig
from kpitrack.schemas.corpus import ChunkRef, TranscriptChunk
from kpitrack.schemas.extraction import ChunkExtraction
from kpitrack.schemas.matching import GoldGroup
from kpitrack.services.metrics import evaluate_chunk, evaluate_model, format_eval_table
from kpitrack.services.providers import build_provider
from kpitrack.services.similarity import build_scorer

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="Compara las extracciones con el conjunto anotado.")
    parser.add_argument("--gold", required=True, help="JSON-lines de GoldGroup.")
    parser.add_argument("--models", help="Lista separada por comas de model_id.")
    parser.add_argument("--replay", help="Directorio de respuestas grabadas del juez.")
    parser.set_defaults(handler=run)


def load_golds(path: Path) -> Dict[ChunkRef, List[GoldGroup]]:
    if not path.exists():
        raise ConfigError(f"No existe el archivo gold '{path}'.")
    golds: Dict[ChunkRef, List[GoldGroup]] = defaultdict(list)
    # Los archivos gold exportados pueden venir sin cabecera
    for gold in read_jsonl(path, GoldGroup, GOLD_GROUP, require_header=False):
        golds[gold.chunk_ref].append(gold)
    return golds


def load_contexts(config: PipelineConfig) -> Dict[ChunkRef, str]:
    path = chunks_path(config)
    if not path.exists():
        return {}
    return {c.ref: c.text for c in read_jsonl(path, TranscriptChunk, TRANSCRIPT_CHUNK)}


def write_report(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def run(args, config: PipelineConfig) -> int:
    golds = load_golds(Path(args.gold))
    contexts = load_contexts(config)
    scorer = build_scorer(config.scorer)
    replay = replay_dir(args, config)
    judge = build_provider(config.judge, replay_dir=replay) if config.judge else None
    gold_refs = sorted(golds, key=lambda r: r.sort_key)

    reports = []
    for model_id in model_ids_for(args, config):
        path = extractions_path(config, model_id)
        extractions = read_jsonl(path, ChunkExtraction, CHUNK_EXTRACTION) if path.exists() else []
        if not path.exists():
            logger.warning("%s: sin archivo de extracciones, se evalúa como vacío", model_id)
        by_ref = {e.chunk_ref: e for e in extractions if e.chunk_ref is not None}

        excluded = sorted((r for r in by_ref if r not in golds), key=lambda r: r.sort_key)
        if excluded:
            logger.warning("%s: %d chunks sin anotación excluidos", model_id, len(excluded))

        evaluations = []
        for ref in gold_refs:
            extraction = by_ref.get(ref)
            # Chunks fallidos o ausentes cuentan como predicción vacía
            preds = extraction.groups if extraction is not None and extraction.status == "ok" else []
            evaluations.append(evaluate_chunk(
                preds, golds[ref], scorer, config.thresholds, chunk_ref=ref, context=contexts.get(ref, "")
            ))

        report = evaluate_model(
            model_id,
            evaluations,
            scorer,
            judge=judge,
            judge_parallelism=config.judge.parallelism if config.judge else 1,
            excluded_chunks=excluded,
        )
        reports.append(report)
        write_report(eval_dir(config) / f"{safe_name(model_id)}.json", report.model_dump(mode="json"))
        write_jsonl(
            eval_dir(config) / f"{safe_name(model_id)}.matches.jsonl",
            MATCH_REPORT,
            [e.report for e in evaluations],
        )

    print(format_eval_table(reports))
    return EXIT_OK
