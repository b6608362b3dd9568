"""
Parent Discovery - Runtime Settings
Environment-driven configuration and logging setup.

Variables are loaded from a .env file if present (via python-dotenv), then
from the shell environment:
    IMP_N_JOBS         worker count for tuple / dataset evaluation (default 1)
    IMP_LOG_LEVEL      loguru level for the stderr sink (default INFO)
    SOURCE_DATE_EPOCH  fixes manifest timestamps for reproducible outputs
"""

import os
import sys
from datetime import datetime, timezone
from typing import Optional

from loguru import logger
from pydantic import BaseModel, field_validator

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass  # python-dotenv not installed; use shell env


class RuntimeSettings(BaseModel):
    n_jobs: int = 1
    log_level: str = "INFO"
    source_date_epoch: Optional[int] = None

    @field_validator("n_jobs")
    @classmethod
    def _check_jobs(cls, value: int) -> int:
        if value == 0 or value < -1:
            raise ValueError(f"n_jobs must be positive or -1, got {value}")
        return value

    @field_validator("log_level")
    @classmethod
    def _normalize_level(cls, value: str) -> str:
        return value.strip().upper() or "INFO"

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        epoch = os.getenv("SOURCE_DATE_EPOCH")
        return cls(
            n_jobs=int(os.getenv("IMP_N_JOBS", "1")),
            log_level=os.getenv("IMP_LOG_LEVEL", "INFO"),
            source_date_epoch=int(epoch) if epoch and epoch.strip() else None,
        )

    def timestamp(self) -> str:
        """ISO-8601 UTC timestamp; pinned when SOURCE_DATE_EPOCH is set"""
        if self.source_date_epoch is not None:
            moment = datetime.fromtimestamp(self.source_date_epoch, tz=timezone.utc)
        else:
            moment = datetime.now(tz=timezone.utc)
        return moment.replace(microsecond=0).isoformat()


def configure_logging(level: str = "INFO") -> None:
    """Install a single stderr sink at the given level"""
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format="{time:HH:mm:ss} | {level: <7} | {message}")
