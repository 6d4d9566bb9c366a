import logging
import logging.config
from pathlib import Path
from typing import Optional

from app.core.config import settings

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


def setup_logging(config_path: Optional[Path] = None) -> None:
    path = Path(config_path or settings.SGCN_LOG_CONFIG)
    if path.is_file():
        logging.config.fileConfig(path, disable_existing_loggers=False)
    else:
        # без ini - тот же формат, просто в stderr
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)

    if settings.DEBUG:
        logging.getLogger("app").setLevel(logging.DEBUG)
