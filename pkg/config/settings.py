import logging
import os

from dotenv import load_dotenv

# Determine the absolute path to the project root directory
# This allows the .env file to be found regardless of where a script is run
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))

# Construct the path to the .env file and load it
DOTENV_PATH = os.path.join(PROJECT_ROOT, '.env')
load_dotenv(dotenv_path=DOTENV_PATH)

logger = logging.getLogger(__name__)
logger.debug(f"[Config] Loading .env from: {DOTENV_PATH}")

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def get_setting(name, default_value=None, cast=str):
    """
    Retrieves a setting from the environment (populated from .env), converting it with `cast`.
    Falls back to `default_value` when the variable is missing or cannot be converted.
    """
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default_value
    try:
        value = cast(raw)
    except (TypeError, ValueError):
        logger.warning(f"[Config] Invalid value {raw!r} for '{name}'. Using default {default_value!r}.")
        return default_value
    logger.debug(f"[Config] Retrieved '{name}' from environment.")
    return value


def configure_logging(level=None):
    """Configures root logging once for command-line entry points."""
    level = (level or LOG_LEVEL).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)


# --- Logging ---
LOG_LEVEL = get_setting("JDFFT_LOG_LEVEL", "INFO")

# --- Output ---
OUTPUT_DIR = get_setting("JDFFT_OUTPUT_DIR", os.path.join(PROJECT_ROOT, "results"))

# --- Monte-Carlo defaults ---
# Desk-scale slot count; the full 800-slot runs are selected with --full.
DEFAULT_SLOTS = get_setting("JDFFT_DEFAULT_SLOTS", 100, int)
FULL_SLOTS = get_setting("JDFFT_FULL_SLOTS", 800, int)
MASTER_SEED = get_setting("JDFFT_MASTER_SEED", 2024, int)
WORKERS = get_setting("JDFFT_WORKERS", 1, int)

# --- Radio parameters ---
CARRIER_HZ = get_setting("JDFFT_CARRIER_HZ", 2.0e9, float)
# One burst of a given user per 10 ms radio frame.
BURST_PERIOD_S = get_setting("JDFFT_BURST_PERIOD_S", 0.01, float)
