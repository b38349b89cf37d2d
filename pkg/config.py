"""
Configuration settings for the augmented control-function toolkit

Edit these settings (or set the matching environment variables / .env entries)
to customize defaults for your machine. Command-line flags always win.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Base directory
BASE_DIR = Path(__file__).parent.absolute()

# Pick up a local .env before reading the environment
load_dotenv(BASE_DIR / ".env")


def _env_int(name, default):
    value = os.environ.get(name)
    return int(value) if value not in (None, "") else default


def _env_bool(name, default):
    value = os.environ.get(name)
    if value in (None, ""):
        return default
    return value.lower() in ("1", "true", "yes", "on")


# Randomness
# DEFAULT_SEED: None means "draw from OS entropy and log it"
DEFAULT_SEED = _env_int("CFHET_SEED", None)

# Parallelism (threads for Monte Carlo, bootstrap and the bias oracle)
DEFAULT_WORKERS = _env_int("CFHET_WORKERS", 1)

# Monte Carlo / bootstrap sizes
DEFAULT_REPLICATIONS = _env_int("CFHET_REPLICATIONS", 2000)
DEFAULT_BOOTSTRAP = _env_int("CFHET_BOOTSTRAP", 200)
DEFAULT_ORACLE_DRAWS = _env_int("CFHET_ORACLE_DRAWS", 10_000_000)
ORACLE_CHUNK_SIZE = 1_000_000
MIN_ORACLE_DRAWS = 100_000

# Numerical tolerances
RANK_TOLERANCE = 1e-10            # singular-value ratio below which a design is rank deficient
CONDITION_WARNING = 1e8           # warn (not fail) above this condition number
ORTHOGONALITY_TOLERANCE = 1e-8
SKEDASTIC_FLOOR_FRACTION = 1e-8   # floor on fitted variance, relative to mean(V~^2)
LOG_EPSILON = 1e-12               # log|z| -> log(|z| + eps), log(V~^2 + eps)
GN_TOLERANCE = 1e-10              # relative objective decrease for Gauss-Newton
GN_MAX_ITERATIONS = 100
GN_MAX_HALVINGS = 40
WEAK_INSTRUMENT_F = 10.0
CONFIDENCE_LEVEL = 0.95

# Logging
LOG_LEVEL = os.environ.get("LOG_LEVEL", "INFO").upper()
LOG_FILE = os.environ.get("LOG_FILE") or None
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
SHOW_PROGRESS = _env_bool("SHOW_PROGRESS", True)

# Files
SIMULATION_PRESETS = BASE_DIR / "simulation_presets.json"

# Application
APP_NAME = "cfhet"
VERSION = "1.0.0"
