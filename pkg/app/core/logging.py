import logging
from typing import Optional
from ..config import get_settings

def setup_logging(level: Optional[str] = None):
    logging.basicConfig(
        level=level or get_settings().LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger("uvicorn.access").disabled = False
