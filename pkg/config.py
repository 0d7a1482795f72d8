"""
SUDF Saliency - Configuration Module
Defaults come from the environment (.env supported); config files and CLI flags override them.
"""
import os
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv, dotenv_values

# Load environment variables from the repository .env, if present
ENV_PATH = Path(__file__).resolve().parent / ".env"
load_dotenv(ENV_PATH)


class ConfigError(ValueError):
    """Raised for unknown keys or unparsable values in a config file or override."""


# ─── Paths ───────────────────────────────────────────────────────────────────
BASE_DIR = Path(__file__).resolve().parent
DATA_DIR = BASE_DIR / "data"
DEFAULT_CONFIG_FILE = DATA_DIR / "default.conf"
DEFAULT_OUTPUT_DIR = Path(os.getenv("SUDF_OUTPUT_DIR", str(BASE_DIR / "output")))

# ─── Self-supervision ────────────────────────────────────────────────────────
KAPPA = int(os.getenv("SUDF_KAPPA", "200"))                      # Hard iteration cap
EPS1 = float(os.getenv("SUDF_EPS1", "1e-3"))                     # Loss tolerance
EPS2 = float(os.getenv("SUDF_EPS2", "1e-3"))                     # Saliency tolerance
LEARNING_RATE = float(os.getenv("SUDF_LEARNING_RATE", "0.1"))
MOMENTUM = float(os.getenv("SUDF_MOMENTUM", "0.9"))
BN_EPSILON = float(os.getenv("SUDF_BN_EPSILON", "1e-5"))
N_FEATURES = int(os.getenv("SUDF_N_FEATURES", "64"))             # P, output channels
CONTEXT_MARGIN = int(os.getenv("SUDF_CONTEXT_MARGIN", "12"))      # Mirrored border around the network input, multiple of 4
RECOMPUTE_SUPERPIXELS_EVERY = int(os.getenv("SUDF_RECOMPUTE_SUPERPIXELS_EVERY", "1"))
SALIENCY_EVERY = int(os.getenv("SUDF_SALIENCY_EVERY", "1"))
MIN_CLUSTERS = int(os.getenv("SUDF_MIN_CLUSTERS", "0"))          # 0 disables the cluster-count stop

# ─── SLIC ────────────────────────────────────────────────────────────────────
SEGMENTS = int(os.getenv("SUDF_SEGMENTS", "600"))
COMPACTNESS = float(os.getenv("SUDF_COMPACTNESS", "10"))
SLIC_ITERATIONS = int(os.getenv("SUDF_SLIC_ITERATIONS", "10"))
CONNECTIVITY_MIN_SIZE = float(os.getenv("SUDF_CONNECTIVITY_MIN_SIZE", "0.25"))

# ─── Manifold Ranking ────────────────────────────────────────────────────────
ALPHA = float(os.getenv("SUDF_ALPHA", "0.99"))
SIGMA_SQ = float(os.getenv("SUDF_SIGMA_SQ", "0.1"))

# ─── Metrics ─────────────────────────────────────────────────────────────────
BETA_SQ = float(os.getenv("SUDF_BETA_SQ", "0.3"))
AUC_SPLITS = int(os.getenv("SUDF_AUC_SPLITS", "100"))

# ─── Runtime ─────────────────────────────────────────────────────────────────
SEED = int(os.getenv("SUDF_SEED", "0"))
WORKERS = int(os.getenv("SUDF_WORKERS", "1"))
VARIANTS = ("hf-slic", "hs-slic", "mr-baseline")
DEFAULT_VARIANT = os.getenv("SUDF_VARIANT", "hf-slic")

# Every tunable with its type and default; config file keys must come from here
SETTING_TYPES: dict[str, type] = {
    "variant": str,
    "seed": int,
    "workers": int,
    "kappa": int,
    "eps1": float,
    "eps2": float,
    "learning_rate": float,
    "momentum": float,
    "bn_epsilon": float,
    "n_features": int,
    "context_margin": int,
    "recompute_superpixels_every": int,
    "saliency_every": int,
    "min_clusters": int,
    "segments": int,
    "compactness": float,
    "slic_iterations": int,
    "connectivity_min_size": float,
    "alpha": float,
    "sigma_sq": float,
    "beta_sq": float,
    "auc_splits": int,
}


def default_settings() -> dict:
    """Resolved defaults (environment already applied)."""
    return {
        "variant": DEFAULT_VARIANT,
        "seed": SEED,
        "workers": WORKERS,
        "kappa": KAPPA,
        "eps1": EPS1,
        "eps2": EPS2,
        "learning_rate": LEARNING_RATE,
        "momentum": MOMENTUM,
        "bn_epsilon": BN_EPSILON,
        "n_features": N_FEATURES,
        "context_margin": CONTEXT_MARGIN,
        "recompute_superpixels_every": RECOMPUTE_SUPERPIXELS_EVERY,
        "saliency_every": SALIENCY_EVERY,
        "min_clusters": MIN_CLUSTERS,
        "segments": SEGMENTS,
        "compactness": COMPACTNESS,
        "slic_iterations": SLIC_ITERATIONS,
        "connectivity_min_size": CONNECTIVITY_MIN_SIZE,
        "alpha": ALPHA,
        "sigma_sq": SIGMA_SQ,
        "beta_sq": BETA_SQ,
        "auc_splits": AUC_SPLITS,
    }


def coerce_setting(key: str, value: Any) -> Any:
    """Convert a raw string (or value) to the declared type of `key`."""
    if key not in SETTING_TYPES:
        raise ConfigError(f"Unknown setting: {key}")
    kind = SETTING_TYPES[key]
    try:
        if kind is int and isinstance(value, str):
            # Accept "200" and "2e2"-style integers, reject "2.5"
            as_float = float(value)
            if not as_float.is_integer():
                raise ValueError(value)
            return int(as_float)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Invalid value for {key}: {value!r}") from None


def read_config_file(path: Path) -> dict:
    """
    Read a plain-text `key = value` config file.
    Keys may use the CLI flag spelling (`sigma-sq`) or the setting name (`sigma_sq`).
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    values = {}
    for raw_key, raw_value in dotenv_values(path).items():
        key = raw_key.strip().lower().replace("-", "_")
        if raw_value is None:
            raise ConfigError(f"Missing value for {raw_key} in {path}")
        values[key] = coerce_setting(key, raw_value.strip())
    debug_log("[config read_config_file] %s -> %s" % (path, values))
    return values


def resolve_settings(file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> dict:
    """Merge defaults, config-file values, then explicit overrides (None means not given)."""
    settings = default_settings()
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            settings[key] = coerce_setting(key, value)
    if settings["variant"] not in VARIANTS:
        raise ConfigError(f"Unknown variant: {settings['variant']} (choose from {', '.join(VARIANTS)})")
    return settings


def provenance_items(settings: dict) -> list[str]:
    """Sorted `key=value` strings embedded in every artifact for provenance (worker count excluded)."""
    return [f"{key}={settings[key]}" for key in sorted(settings) if key != "workers"]


# ─── Debug ────────────────────────────────────────────────────────────────────
# Set SUDF_DEBUG_LOGGING=true in .env to print debug messages to stdout (use debug_log() anywhere)
DEBUG_LOGGING = os.getenv("SUDF_DEBUG_LOGGING", "no").lower() in ("true", "1", "yes")


def debug_log(msg: str) -> None:
    """Print message to stdout only when SUDF_DEBUG_LOGGING is enabled."""
    if DEBUG_LOGGING:
        print(msg, flush=True)
