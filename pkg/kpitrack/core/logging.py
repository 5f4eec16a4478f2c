# kpitrack/core/logging.py

import logging

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str = "INFO") -> None:
    """Configura un único handler de consola para todo el paquete."""
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, force=True)
    # httpx registra cada request en INFO
    logging.getLogger("httpx").setLevel(logging.WARNING)
