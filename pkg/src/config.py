"""
Core configuration module for hammix.
Handles environment settings, numerical tunables and run-config files.
"""

import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import structlog
try:
    from pydantic import Field
    from pydantic_settings import BaseSettings
except ImportError:
    # Fallback for older pydantic versions
    from pydantic import BaseSettings, Field
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class HammixSettings(BaseSettings):
    """Environment settings"""

    # Logging Configuration
    log_level: str = Field("INFO")
    log_file: Optional[str] = Field(None)

    # Run Defaults
    runs_dir: str = Field("runs")
    default_iters: int = Field(25000)
    default_burnin: int = Field(5000)
    default_thin: int = Field(1)
    default_seed: int = Field(2024)
    # VI point estimate scores at most this many distinct partitions (0 = all)
    default_max_candidates: int = Field(2000)

    # Reference dataset for the reproduction tests
    zoo_path: Optional[str] = Field(None)

    # Concurrency (1 = chains and replicates run in-process)
    workers: int = Field(1)

    class Config:
        env_prefix = "HAMMIX_"
        env_file = ".env"
        case_sensitive = False


class HIGDefaults:
    """Prior hyperparameter defaults"""

    # (v, w) keyed by modality count
    BY_MODALITY = {
        2: (6.0, 0.25),
        3: (5.0, 0.25),
        4: (4.5, 0.25),
        5: (4.25, 0.25),
        6: (3.0, 0.5),
    }
    # Used for modality counts outside the table
    FALLBACK = (3.0, 0.5)

    # Shared-sigma inverse-gamma prior (shape, scale) and Metropolis step
    SHARED_SIGMA_PRIOR = (2.0, 1.0)
    MH_PROPOSAL_SD = 0.1


class NumericsConfig:
    """Tolerances for the special-function and quadrature layer"""

    HYP2F1_RTOL = 1e-12
    HYP2F1_MAX_TERMS = 500_000
    HYP2F1_EULER_THRESHOLD = 0.75

    QUAD_LOG_TOL = 1e-8
    QUAD_MAX_INTERVALS = 2000

    ROOT_XTOL = 1e-10
    ROOT_BRACKET = (1e-15, 1.0 - 1e-15)

    SIGMA_FLOOR = 1e-12

    PRIOR_K_WARN_DEFECT = 1e-6
    PRIOR_K_MAX_DEFECT = 1e-4


class SamplerConfig:
    """Gibbs sampler and summary tunables"""

    PROGRESS_EVERY = 1000
    SUMMARY_EXTRA_ITERS = 1000
    KMODES_MAX_ITER = 100

    # Stream key reserved for the conditional parameter summary
    SUMMARY_STREAM_KEY = 1_000_003


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """Configure stdlib logging and route structlog through it"""
    level_name = (level or settings.log_level).upper()
    handlers = [logging.StreamHandler(sys.stderr)]
    log_path = log_file or settings.log_file
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path))

    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.processors.add_log_level,
            structlog.processors.KeyValueRenderer(key_order=["event"], sort_keys=True),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def _deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None):
    """Load a nested JSON run config and apply flag overrides (flags win)"""
    from models import ConfigurationError, RunConfig

    raw: Dict[str, Any] = {}
    if path:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigurationError(f"Run config not found: {path}")
        try:
            raw = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid run config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigurationError(f"Run config {path} must contain an object")

    defaults = {
        "sampler": {
            "iters": settings.default_iters,
            "burnin": settings.default_burnin,
            "thin": settings.default_thin,
            "seed": settings.default_seed,
        },
        "output_dir": None,
    }
    merged = _deep_merge(defaults, raw)
    merged = _deep_merge(merged, overrides or {})
    return RunConfig.parse_obj(merged)


# Global configuration instances
settings = HammixSettings()
hig_defaults = HIGDefaults()
numerics_config = NumericsConfig()
sampler_config = SamplerConfig()
