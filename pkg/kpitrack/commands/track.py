# kpitrack/commands/track.py

import logging
import re
from typing import List

from kpitrack.commands.common import extractions_path, model_ids_for, parse_list, track_dir
from kpitrack.commands.evaluate import write_report
from kpitrack.core.artifacts import CHUNK_EXTRACTION, TRACKED_KPI, read_jsonl, write_jsonl
from kpitrack.core.config import load_fiscal_calendar
from kpitrack.core.errors import EXIT_OK, ConfigError
from kpitrack.schemas.config import PipelineConfig
from kpitrack.schemas.extraction import ChunkExtraction
from kpitrack.services.aggregate import (
    agreement_stats,
    build_clusters,
    collect_members,
    series_frame,
    sweep_frame,
    threshold_sweep,
    track,
)
from kpitrack.services.similarity import build_scorer

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("track", help="Consenso multi-modelo y seguimiento de KPIs por periodo.")
    parser.add_argument("--models", help="Lista separada por comas de model_id.")
    parser.add_argument("--sweep", help="Umbrales separados por comas, p. ej. 0.75,0.80,0.85,0.90.")
    parser.set_defaults(handler=run)


def parse_thresholds(value: str) -> List[float]:
    try:
        thresholds = [float(item) for item in parse_list(value)]
    except ValueError as e:
        raise ConfigError(f"--sweep inválido: {value}") from e
    if not thresholds or any(not 0 < t <= 1 for t in thresholds):
        raise ConfigError(f"--sweep requiere umbrales en (0, 1]: {value}")
    return sorted(set(thresholds))


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-") or "kpi"


def run(args, config: PipelineConfig) -> int:
    sweep = parse_thresholds(args.sweep) if args.sweep else []
    model_ids = model_ids_for(args, config)
    extractions: List[ChunkExtraction] = []
    for model_id in model_ids:
        path = extractions_path(config, model_id)
        if not path.exists():
            raise ConfigError(f"No existe '{path}'; ejecute extract primero.")
        extractions.extend(read_jsonl(path, ChunkExtraction, CHUNK_EXTRACTION))

    calendar = load_fiscal_calendar(config.fiscal_calendar_path)
    scorer = build_scorer(config.scorer)
    thresholds = config.thresholds
    members = collect_members(extractions, calendar)

    clusters = build_clusters(members, scorer, thresholds.cluster, thresholds.value_tolerance)
    tracked = track(clusters, scorer, thresholds.cluster, thresholds.min_periods)
    stats = agreement_stats(tracked, model_ids)

    out = track_dir(config)
    write_jsonl(out / "tracked.jsonl", TRACKED_KPI, tracked)
    write_report(out / "agreement.json", stats.model_dump(mode="json"))
    frame = series_frame(tracked)
    frame.to_csv(out / "series.csv", index=False)
    series_out = out / "series"
    series_out.mkdir(parents=True, exist_ok=True)
    for kpi in tracked:
        kpi_frame = frame[(frame["ticker"] == kpi.ticker) & (frame["kpi"] == kpi.centroid_label)]
        kpi_frame.to_csv(series_out / f"{kpi.ticker}__{_slug(kpi.centroid_label)}.csv", index=False)

    print(
        f"{len(members)} grupos, {len(clusters)} clusters, {len(tracked)} KPIs seguidos, "
        f"acuerdo de todos los modelos {stats.all_model_agreement_pct:.2f}%"
    )

    if sweep:
        report = threshold_sweep(
            members, scorer, sweep, thresholds.value_tolerance, thresholds.min_periods, model_ids
        )
        write_report(out / "sweep.json", report.model_dump(mode="json"))
        table = sweep_frame(report)
        table.to_csv(out / "sweep.csv", index=False)
        print(table.to_string(index=False))
    return EXIT_OK
