"""Runtime settings read from the environment (and an optional ``.env`` file)."""
import logging
import os
from dataclasses import dataclass

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class Settings:
    log_level: str = "INFO"
    tol: float = DEFAULT_TOL
    field_format: str = "csv"
    workers: int = 1
    out_dir: str = "out"


def load_settings(dotenv_path: str = None) -> Settings:
    """
    Builds the settings from ``POLLUTION_GAME_*`` environment variables.

    A ``.env`` file (or ``dotenv_path``) is loaded first; variables already set in
    the environment win over the file.

    Raises:
        ValueError: If a numeric variable cannot be parsed or is out of range.
    """
    load_dotenv(dotenv_path=dotenv_path, override=False)
    env = os.environ
    try:
        tol = float(env.get("POLLUTION_GAME_TOL", DEFAULT_TOL))
        workers = int(env.get("POLLUTION_GAME_WORKERS", 1))
    except ValueError as e:
        raise ValueError(f"Invalid POLLUTION_GAME_* setting: {e}") from e
    if not tol > 0:
        raise ValueError("POLLUTION_GAME_TOL must be positive")
    if workers < 1:
        raise ValueError("POLLUTION_GAME_WORKERS must be at least 1")

    field_format = env.get("POLLUTION_GAME_FORMAT", "csv").lower()
    if field_format not in ("csv", "vtk"):
        raise ValueError(f"POLLUTION_GAME_FORMAT must be 'csv' or 'vtk', got '{field_format}'")

    settings = Settings(
        log_level=env.get("POLLUTION_GAME_LOG_LEVEL", "INFO").upper(),
        tol=tol,
        field_format=field_format,
        workers=workers,
        out_dir=env.get("POLLUTION_GAME_OUT", "out"),
    )
    logger.debug(f"Settings loaded: {settings}")
    return settings
