"""
Configuration settings for the latent class estimation engine
"""
import copy
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from utils.errors import ConfigError
from utils.file_utils import load_json

load_dotenv(override=True)

# Project paths
PROJECT_ROOT = Path(__file__).parent.parent
DATA_DIR = PROJECT_ROOT / "data"
OUTPUT_DIR = Path(os.getenv("LCNET_OUTPUT_DIR", PROJECT_ROOT / "outputs"))
DEMO_CONFIG_PATH = DATA_DIR / "demo_config.json"

LOG_LEVEL = os.getenv("LCNET_LOG_LEVEL", "INFO")
DEFAULT_WORKERS = int(os.getenv("LCNET_WORKERS", "1"))

# Gradient M-step (membership + measurement + network)
MSTEP_DEFAULTS = {
    "gradient_step": 0.05,
    "gradient_steps": 50,
    "gradient_tol": 0.0,
}

# Choice M-step
BFGS_DEFAULTS = {
    "choice_tol": 1e-6,
    "choice_max_iter": 200,
    "armijo_c1": 1e-4,
    "backtrack": 0.5,
    "min_step": 1e-16,
}

EARLY_STOP_DEFAULTS = {
    "early_stop_tol": 1e-5,
    "early_stop_patience": 3,
}

# Sections of a run config and their defaults
RUN_CONFIG_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "model": {},
    "data": {
        "test_fraction": 0.2,
        "split_seed": 0,
        "standardize": False,
        "indicator_levels": None,
        "categorical_columns": None,
        "schema": "csv",
    },
    "paths": {
        "individuals": None,
        "tasks": None,
        "truth": None,
        "output_dir": None,
    },
    "simulate": {},
    "report": {
        "formats": ["txt", "json"],
    },
}

# Flags accepted on the command line and the config key each one overrides
CLI_OVERRIDES = {
    "k": ("model", "k"),
    "z": ("model", "z"),
    "h": ("model", "h"),
    "use_omega": ("model", "use_omega"),
    "em_iterations": ("model", "em_iterations"),
    "restarts": ("model", "restarts"),
    "seed": ("model", "seed"),
    "omega_fallback": ("model", "omega_fallback"),
    "test_fraction": ("data", "test_fraction"),
    "split_seed": ("data", "split_seed"),
    "standardize": ("data", "standardize"),
    "individuals": ("paths", "individuals"),
    "tasks": ("paths", "tasks"),
    "truth": ("paths", "truth"),
    "formats": ("report", "formats"),
    "output_dir": ("paths", "output_dir"),
}


def load_run_config(path: Optional[Path], overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Load a run config file and apply command-line overrides key for key"""
    config = copy.deepcopy(RUN_CONFIG_DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = load_json(path)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        unknown = set(raw) - set(config)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for section, values in raw.items():
            config[section].update(values or {})
        # relative data paths resolve against the config file location
        for key in ("individuals", "tasks", "truth"):
            value = config["paths"].get(key)
            if value and not Path(value).is_absolute():
                config["paths"][key] = str(path.parent / value)

    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        if flag not in CLI_OVERRIDES:
            raise ConfigError(f"no config key for flag --{flag.replace('_', '-')}")
        section, key = CLI_OVERRIDES[flag]
        config[section][key] = value
    return config


def get_output_dir(config: Dict[str, Any], command: str) -> Path:
    """Get the output directory for a command run"""
    configured = config.get("paths", {}).get("output_dir")
    base = Path(configured) if configured else OUTPUT_DIR
    return base / command
