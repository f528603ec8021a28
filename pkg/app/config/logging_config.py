import logging
from typing import Optional

from app.config.config import get_settings


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once; records go to stderr so stdout stays clean."""
    logging.basicConfig(
        level=(level or get_settings().LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
