import os
import logging
from dataclasses import dataclass, replace
from typing import Optional

from dotenv import load_dotenv

from .errors import ConfigError

# Load environment variables
load_dotenv()

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'


@dataclass(frozen=True)
class LabConfig:
    log_level: str = 'INFO'
    closure_cap: int = 5
    simulation_cap: int = 10
    grid: float = 0.01
    workers: int = 1


def _env_int(name: str, default: int, minimum: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == '':
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer (got {raw!r})")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum} (got {value})")
    return value


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == '':
        return default
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number (got {raw!r})")
    if not value > 0:
        raise ConfigError(f"{name} must be positive (got {value})")
    return value


def default_config() -> LabConfig:
    """Configuration from the environment without touching logging."""
    return LabConfig(
        log_level=os.getenv('SPINLAB_LOG_LEVEL', 'INFO').upper(),
        closure_cap=_env_int('SPINLAB_CLOSURE_CAP', 5, 1),
        simulation_cap=_env_int('SPINLAB_SIMULATION_CAP', 10, 1),
        grid=_env_float('SPINLAB_GRID', 0.01),
        workers=_env_int('SPINLAB_WORKERS', 1, 1),
    )


def create_app(log_level: Optional[str] = None) -> LabConfig:
    """Build the lab configuration from the environment and configure logging."""
    config = default_config()
    level = (log_level or config.log_level).upper()
    if level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
        raise ConfigError(f"unknown log level {level!r}")
    config = replace(config, log_level=level)

    # Configure logging
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, force=True)
    logging.getLogger(__name__).debug(f"Lab configuration: {config}")
    return config
