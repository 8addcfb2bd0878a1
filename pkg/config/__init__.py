"""
Configuration Package for the phi^4 Kibble-Zurek quench toolkit

This package contains all configuration files and settings management:
- Named run profiles (desk, full, smoke)
- Campaign configuration schema and hashing
- Environment settings

Usage:
    from config import settings
    from config.schema import load_campaign_config, config_hash
"""

import logging
import os
from typing import Any, Dict

from dotenv import load_dotenv

from .profiles_config import DEFAULT_PROFILE, PROFILE_OVERRIDES, get_environment_config, get_profile

__version__ = "1.0.0"
__description__ = "Configuration management for lattice phi^4 quench campaigns"

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Settings:
    """Centralized settings management"""

    def __init__(self):
        self._settings = {}
        self._load_environment_variables()

    def _load_environment_variables(self):
        """Load settings from environment variables (and a .env file if present)"""
        load_dotenv()

        self._settings["ENVIRONMENT"] = os.getenv("KZ_ENVIRONMENT", "development")
        self._settings["PROFILE"] = os.getenv("KZ_PROFILE", DEFAULT_PROFILE)
        self._settings["OUTPUT_DIR"] = os.getenv("KZ_OUTPUT_DIR", "runs")
        self._settings["WORKERS"] = os.getenv("KZ_WORKERS", "1")

        # Logging
        self._settings["LOG_LEVEL"] = os.getenv("KZ_LOG_LEVEL", "INFO").upper()
        self._settings["LOG_FILE"] = os.getenv("KZ_LOG_FILE")
        self._settings["JSON_LOG"] = os.getenv("KZ_JSON_LOG")

    def get(self, key: str, default: Any = None) -> Any:
        """Get a setting value"""
        return self._settings.get(key, default)

    def set(self, key: str, value: Any) -> None:
        """Set a setting value"""
        self._settings[key] = value

    def get_all(self) -> Dict[str, Any]:
        """Get all settings"""
        return self._settings.copy()

    def is_testing(self) -> bool:
        return self.get("ENVIRONMENT", "").lower() == "testing"

    def workers(self) -> int:
        try:
            return max(1, int(self.get("WORKERS", 1)))
        except (TypeError, ValueError):
            return 1

    def validate_settings(self) -> Dict[str, Any]:
        """Report invalid values instead of raising"""
        invalid = []

        if self.get("PROFILE") not in PROFILE_OVERRIDES:
            invalid.append("KZ_PROFILE")
        if self.get("LOG_LEVEL") not in LOG_LEVELS:
            invalid.append("KZ_LOG_LEVEL")
        try:
            if int(self.get("WORKERS")) < 1:
                invalid.append("KZ_WORKERS")
        except (TypeError, ValueError):
            invalid.append("KZ_WORKERS")

        return {"valid": len(invalid) == 0, "invalid": invalid}


# Global settings instance
settings = Settings()


def get_environment_info() -> Dict[str, Any]:
    """Get comprehensive environment information"""
    import platform
    import sys

    import numpy
    import scipy

    return {
        "python_version": sys.version,
        "platform": platform.platform(),
        "numpy_version": numpy.__version__,
        "scipy_version": scipy.__version__,
        "environment": settings.get("ENVIRONMENT"),
        "profile": settings.get("PROFILE"),
        "settings_valid": settings.validate_settings()["valid"],
    }


def _log_initialization():
    """Log configuration initialization status"""
    validation_result = settings.validate_settings()
    logging.debug(f"Configuration initialized: environment={settings.get('ENVIRONMENT')}, "
                  f"profile={settings.get('PROFILE')}")
    if not validation_result["valid"]:
        logging.warning(f"Invalid settings: {validation_result['invalid']}")


_log_initialization()

__all__ = [
    "Settings",
    "settings",
    "get_environment_info",
    "get_environment_config",
    "get_profile",
    "DEFAULT_PROFILE",
]
