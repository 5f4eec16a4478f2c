# kpitrack/commands/report.py

import json
import logging
from pathlib import Path

import pandas as pd

from kpitrack.commands.common import eval_dir, track_dir
from kpitrack.core.artifacts import read_jsonl
from kpitrack.core.errors import EXIT_OK
from kpitrack.schemas.aggregate import AgreementStats
from kpitrack.schemas.config import PipelineConfig
from kpitrack.schemas.metrics import EvalReport, HumanJudgment
from kpitrack.services.metrics import format_eval_table, human_eval_summary

logger = logging.getLogger(__name__)

HUMAN_JUDGMENT = "human_judgment"


def register(subparsers) -> None:
    parser = subparsers.add_parser("report", help="Muestra evaluaciones, acuerdo y barridos guardados.")
    parser.add_argument("--human-eval", dest="human_eval", help="JSON-lines con filas {item, rater, label}.")
    parser.set_defaults(handler=run)


def agreement_table(stats: AgreementStats) -> str:
    frame = pd.DataFrame(
        [
            {
                "Model": m.model_id,
                "Share %": round(m.share_pct, 2),
                "Centroid %": round(m.centroid_pct, 2),
                "Overlap %": round(m.overlap_pct, 2),
            }
            for m in stats.models
        ],
        columns=["Model", "Share %", "Centroid %", "Overlap %"],
    )
    return frame.to_string(index=False)


def run(args, config: PipelineConfig) -> int:
    reports = [
        EvalReport.model_validate_json(path.read_text(encoding="utf-8"))
        for path in sorted(eval_dir(config).glob("*.json"))
    ]
    if reports:
        print(format_eval_table(reports))

    agreement = track_dir(config) / "agreement.json"
    if agreement.exists():
        stats = AgreementStats.model_validate_json(agreement.read_text(encoding="utf-8"))
        print()
        print(agreement_table(stats))
        print(
            f"Acuerdo de todos los modelos: {stats.all_model_agreement_pct:.2f}% de instancias, "
            f"{stats.kpi_agreement_pct:.2f}% de KPIs ({stats.instances} instancias, {stats.tracked_kpis} KPIs)"
        )

    sweep = track_dir(config) / "sweep.csv"
    if sweep.exists():
        print()
        print(pd.read_csv(sweep).to_string(index=False))

    if args.human_eval:
        rows = read_jsonl(Path(args.human_eval), HumanJudgment, HUMAN_JUDGMENT, require_header=False)
        summary = human_eval_summary(rows)
        print()
        print(json.dumps(summary.model_dump(mode="json"), sort_keys=True, indent=2))

    if not (reports or agreement.exists() or sweep.exists() or args.human_eval):
        logger.info("No hay reportes en '%s'.", config.paths.output_dir)
    return EXIT_OK
