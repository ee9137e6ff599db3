"""
Configuration module for the dual limit surface toolkit.

Solver defaults and runtime settings can be overridden through environment
variables (``DLS_<KEY>``) or an optional TOML settings file, so sweeps can be
retuned without touching scenario files.
"""
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import toml

logger = logging.getLogger("dls")


class SolverDefaults:
    """
    Default values for every SolverConfig field.

    Lookup order for each key:
        1. environment variable DLS_<KEY> (e.g. DLS_HORIZON_N=24)
        2. the [solver] table of the settings file (DLS_SETTINGS_FILE, or ./dls.toml)
        3. the built-in default below
    """

    _DEFAULTS: Dict[str, Any] = {
        "HORIZON_N": 20,
        "SLIP_MARGIN_EPS": 1e-4,
        "MAX_STEP_TRANS": 0.005,
        "MAX_STEP_ROT": 0.05,
        "MAX_OUTER_ITERS": 30,
        "MAX_INNER_ITERS": 400,
        "TOL_STATIONARITY": 1e-10,
        "TOL_CONSTRAINT": 1e-8,
        "TOL_TERMINAL_TRANS": 1e-6,
        "TOL_TERMINAL_ROT": 1e-6,
        "PENALTY_INIT": 10.0,
        "PENALTY_GROWTH": 10.0,
        "MARGIN_BUFFER": 0.25,
        "POLICY": "exact",
        "SEED": 0,
    }

    _file_cache: Optional[Dict[str, Any]] = None
    _file_cache_path: Optional[str] = None

    @classmethod
    def _settings_file(cls) -> Dict[str, Any]:
        """Load the [solver] table of the settings file, cached per path"""
        path = os.getenv("DLS_SETTINGS_FILE", "dls.toml")
        if cls._file_cache is not None and cls._file_cache_path == path:
            return cls._file_cache

        table: Dict[str, Any] = {}
        if Path(path).is_file():
            try:
                table = toml.load(path).get("solver", {})
            except (toml.TomlDecodeError, OSError) as e:
                logger.warning(f"Ignoring unreadable settings file {path}: {e}")
        cls._file_cache = {str(k).upper(): v for k, v in table.items()}
        cls._file_cache_path = path
        return cls._file_cache

    @classmethod
    def get(cls, key: str) -> Any:
        """Get the effective value for a key, coerced to the default's type"""
        default = cls._DEFAULTS[key]
        raw = os.getenv(f"DLS_{key}")
        if raw is None:
            raw = cls._settings_file().get(key)
        if raw is None:
            return default

        try:
            if isinstance(default, bool):
                return str(raw).lower() == "true"
            return type(default)(raw)
        except (TypeError, ValueError):
            logger.warning(f"Invalid value {raw!r} for DLS_{key}, using default {default!r}")
            return default

    @classmethod
    def get_all_defaults(cls) -> dict:
        """Get the built-in defaults for documentation"""
        return cls._DEFAULTS.copy()

    @classmethod
    def get_config_report(cls) -> dict:
        """Get a report of all effective values (useful for debugging)"""
        return {key.lower(): cls.get(key) for key in cls._DEFAULTS}


class RuntimeConfig:
    """Process-level settings: log verbosity and sweep parallelism"""

    @classmethod
    def get_log_level(cls) -> int:
        """Get the log level from DLS_LOG (name or number), default INFO"""
        raw = os.getenv("DLS_LOG", "INFO").strip()
        if raw.isdigit():
            return int(raw)
        level = logging.getLevelName(raw.upper())
        return level if isinstance(level, int) else logging.INFO

    @classmethod
    def get_workers(cls) -> int:
        """Get the sweep worker count from DLS_WORKERS, default one per CPU"""
        try:
            return max(1, int(os.getenv("DLS_WORKERS", str(os.cpu_count() or 1))))
        except ValueError:
            return 1
