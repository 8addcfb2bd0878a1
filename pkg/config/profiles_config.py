"""
Named run profiles for the quench campaigns.
Centralized defaults for the model, solvers, campaign grids and analysis
"""

import copy
import logging
import os
from typing import Any, Dict

logger = logging.getLogger(__name__)

# Shared physical and numerical defaults
BASE_CONFIG = {
    "model": {
        "lambda0": 3.0,
        "mu0sq_initial": 0.5,
        "d": 10,
    },

    "campaign": {
        "tauQ": [8.0, 12.0, 16.0, 24.0, 32.0, 48.0],
        "chi": [8, 12],
        "mu0sq_final": [-1.05, -1.1, -1.15],
        "t_relax": 15.0,
    },

    # Ground-state searches
    "vumps": {
        "tol": 1e-8,
        "maxiter": 2000,
        "env_tol": 1e-12,
        "eig_tol_factor": 1e-2,
        "canonical_tol": 1e-12,
        "bias": 1.0,  # positive vev branch in the broken phase
        "noise": 0.1,
        "seed": 20240101,
        "max_retries": 2,
    },

    # Time evolution: tau = 1e-2, one snapshot per unit time
    "evolver": {
        "step": 1e-2,
        "sample_every": 100,
        "r_max": 200,
        "checkpoint_every": 10,
        "env_tol": 1e-12,
        "pinv_cutoff": 1e-12,
        "canonical_tol": 1e-12,
        "max_norm_drift": 1e-6,
    },

    # Equilibrium scan, ordered from the broken side for warm starts
    "sweep": {
        "mu0sq_min": -1.5,
        "mu0sq_max": 0.5,
        "points": 41,
        "warm_start": True,
    },

    "analysis": {
        "k_points": 256,
        "threshold": 0.9,
        "collapse_window": [0.0, 5.0],
        "kink_window": [0.0, 10.0],
        "kink_probe": 8.0,
        "reference_mu0sq_final": -1.1,
        "t_R": None,  # defaults to t_relax
        "plots": True,
    },

    # Reference calculations independent of the uMPS code
    "oracle": {
        "musq_initial": 1.0,
        "musq_final": 0.25,
        "tauQ": 8.0,
        "t_after": 10.0,
        "k_points": 64,
        "r_max": 40,
        "ed_L": 6,
        "ed_d": 4,
        "ed_lambda0": 3.0,
        "ed_mu0sq_initial": 0.5,
        "ed_mu0sq_final": -1.1,
        "ed_t_max": 5.0,
        "ed_samples": 51,
    },

    "output_dir": "runs",
    "workers": 1,
    "resume": False,
}

# Profile-specific overrides, deep-merged onto BASE_CONFIG
PROFILE_OVERRIDES = {
    "desk": {},

    "full": {
        "model": {"d": 18},
        "campaign": {
            "tauQ": [float(t) for t in range(32, 129, 4)],
            "chi": [16, 20, 24, 28, 32],
        },
        "sweep": {"points": 81},
    },

    "smoke": {
        "model": {"d": 4},
        "campaign": {
            "tauQ": [0.5, 1.0],
            "chi": [2],
            "mu0sq_final": [0.25],
            "t_relax": 0.2,
        },
        "vumps": {"tol": 1e-6, "maxiter": 200},
        "evolver": {"step": 0.05, "sample_every": 2, "r_max": 20, "checkpoint_every": 2},
        "sweep": {"mu0sq_min": 0.25, "mu0sq_max": 0.5, "points": 3},
        "analysis": {"k_points": 32, "reference_mu0sq_final": 0.25, "plots": False},
        "oracle": {"k_points": 8, "r_max": 8, "t_after": 1.0, "tauQ": 1.0,
                   "ed_L": 3, "ed_d": 3, "ed_t_max": 0.5, "ed_samples": 6},
    },
}

DEFAULT_PROFILE = "desk"


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge override into a copy of base"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def get_profile(name: str = DEFAULT_PROFILE) -> Dict[str, Any]:
    """Get the complete configuration of a named profile"""
    if name not in PROFILE_OVERRIDES:
        raise ValueError(f"Unknown profile: {name} (available: {', '.join(PROFILE_OVERRIDES)})")
    return deep_merge(BASE_CONFIG, PROFILE_OVERRIDES[name])


def get_environment_config(profile: str = None) -> Dict[str, Any]:
    """Profile configuration with environment-variable overrides applied"""
    config = get_profile(profile or os.getenv("KZ_PROFILE", DEFAULT_PROFILE))

    if os.getenv("KZ_OUTPUT_DIR"):
        config["output_dir"] = os.environ["KZ_OUTPUT_DIR"]

    if os.getenv("KZ_WORKERS"):
        try:
            config["workers"] = int(os.environ["KZ_WORKERS"])
        except ValueError:
            logger.warning(f"Ignoring non-integer KZ_WORKERS={os.environ['KZ_WORKERS']!r}")

    # Tests never draw plots
    if os.getenv("KZ_ENVIRONMENT", "development") == "testing":
        config["analysis"]["plots"] = False

    return config


def validate_profile(config: Dict[str, Any]) -> bool:
    """Quick structural check of a profile dict"""
    required_sections = ["model", "campaign", "vumps", "evolver", "sweep", "analysis", "oracle"]
    for section in required_sections:
        if section not in config:
            logger.error(f"Missing required config section: {section}")
            return False

    for key in ("tauQ", "chi", "mu0sq_final"):
        if not config["campaign"].get(key):
            logger.error(f"campaign.{key} must be a non-empty list")
            return False

    if config["model"]["mu0sq_initial"] < max(config["campaign"]["mu0sq_final"]):
        logger.error("mu0sq_initial must not be below the final masses")
        return False

    return True


__all__ = [
    "BASE_CONFIG",
    "PROFILE_OVERRIDES",
    "DEFAULT_PROFILE",
    "deep_merge",
    "get_profile",
    "get_environment_config",
    "validate_profile",
]
