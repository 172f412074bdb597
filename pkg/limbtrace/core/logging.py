"""Logging setup shared by the command-line entry point."""

import logging

from limbtrace.core.config import settings

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | None = None) -> None:
    """Configure the root logger once for the whole process."""

    logging.basicConfig(level=(level or settings.LOG_LEVEL).upper(), format=LOG_FORMAT)
    # PIL's PNG plugin is chatty at DEBUG
    logging.getLogger("PIL").setLevel(logging.WARNING)
