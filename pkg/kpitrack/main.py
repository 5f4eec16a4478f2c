# kpitrack/main.py

import argparse
import logging
import sys
from typing import List, Optional

from kpitrack import __version__
from kpitrack.core.config import load_config, load_environment
from kpitrack.core.errors import KpiTrackError
from kpitrack.core.logging import setup_logging

# ***************************************************************
# 1. Importar los subcomandos
# ***************************************************************
from kpitrack.commands import evaluate, extract, ingest, report, track

logger = logging.getLogger("kpitrack")

COMMANDS = (ingest, extract, evaluate, track, report)


# ***************************************************************
# 2. Construir el parser
# ***************************************************************
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kpitrack",
        description="Extracción, evaluación y seguimiento de KPIs en transcripciones de earnings calls.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="Archivo YAML de configuración (por defecto kpitrack.yaml).")
    parser.add_argument("--out", help="Directorio de salida (pisa paths.output_dir).")
    parser.add_argument(
        "--log-level", dest="log_level", default="INFO", type=str.upper,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )

    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


# ***************************************************************
# 3. Punto de entrada
# ***************************************************************
def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    load_environment()
    try:
        config = load_config(args.config)
        if args.out:
            config.paths.output_dir = args.out
        return args.handler(args, config)
    except KpiTrackError as e:
        logger.error(e.detail)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
