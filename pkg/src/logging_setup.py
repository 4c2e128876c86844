import logging
import logging.config
import sys
from pathlib import Path
from typing import Optional

import yaml

from src.config import Settings, settings as default_settings


def setup_logging(settings: Optional[Settings] = None) -> None:
    """
    Configures logging from the YAML dictConfig at settings.LOG_CONFIG.
    Falls back to a plain stderr handler if the file is missing or unusable.
    """
    settings = settings or default_settings
    level = settings.LOG_LEVEL.upper()
    config_path = Path(settings.LOG_CONFIG)

    if config_path.is_file():
        try:
            with config_path.open(encoding="utf-8") as f:
                config = yaml.safe_load(f)
            logging.config.dictConfig(config)
            logging.getLogger().setLevel(level)
            return
        except Exception as e:
            logging.basicConfig(level=level, stream=sys.stderr)
            logging.getLogger(__name__).warning(f"Failed to load logging config {config_path}: {e}")
            return

    logging.basicConfig(level=level, stream=sys.stderr)
