import logging
from typing import Optional

from app.core.config import settings

LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"

_configured = False


def setup_logging(level: Optional[str] = None) -> None:
    """Configures the root logger once; later calls only adjust the level."""
    global _configured
    level_name = (level or settings.LOG_LEVEL).upper()
    if not _configured:
        logging.basicConfig(level=level_name, format=LOG_FORMAT)
        _configured = True
    logging.getLogger().setLevel(level_name)
