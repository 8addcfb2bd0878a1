"""
Validated campaign configuration.

A campaign is assembled from a named profile, an optional YAML file and CLI
overrides (in that order) and checked by the pydantic models below. Unknown
keys are rejected.
"""

import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import orjson
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.profiles_config import deep_merge, get_environment_config
from solvers.errors import ConfigurationError

logger = logging.getLogger(__name__)

NON_PHYSICAL_KEYS = {"output_dir", "workers", "resume"}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSettings(_Strict):
    lambda0: float = Field(ge=0.0)
    mu0sq_initial: float
    d: int = Field(ge=2)


class CampaignSettings(_Strict):
    tauQ: List[float] = Field(min_length=1)
    chi: List[int] = Field(min_length=1)
    mu0sq_final: List[float] = Field(min_length=1)
    t_relax: float = Field(ge=0.0)

    @field_validator("tauQ")
    @classmethod
    def _positive_rates(cls, values: List[float]) -> List[float]:
        if any(v <= 0 for v in values):
            raise ValueError("every tauQ must be positive")
        return sorted(values)

    @field_validator("chi")
    @classmethod
    def _positive_chi(cls, values: List[int]) -> List[int]:
        if any(v < 1 for v in values):
            raise ValueError("every chi must be at least 1")
        return sorted(set(values))


class VumpsSettings(_Strict):
    tol: float = Field(gt=0.0)
    maxiter: int = Field(ge=1)
    env_tol: float = Field(gt=0.0)
    eig_tol_factor: float = Field(gt=0.0)
    canonical_tol: float = Field(gt=0.0)
    bias: float
    noise: float = Field(ge=0.0)
    seed: Optional[int] = None
    max_retries: int = Field(ge=0)


class EvolverSettings(_Strict):
    step: float = Field(gt=0.0)
    sample_every: int = Field(ge=1)
    r_max: int = Field(ge=1)
    checkpoint_every: int = Field(ge=1)
    env_tol: float = Field(gt=0.0)
    pinv_cutoff: float = Field(gt=0.0)
    canonical_tol: float = Field(gt=0.0)
    max_norm_drift: float = Field(gt=0.0)


class SweepSettings(_Strict):
    mu0sq_min: float
    mu0sq_max: float
    points: int = Field(ge=1)
    warm_start: bool = True

    @model_validator(mode="after")
    def _ordered(self):
        if self.mu0sq_min > self.mu0sq_max:
            raise ValueError("mu0sq_min must not exceed mu0sq_max")
        return self


class AnalysisSettings(_Strict):
    k_points: int = Field(ge=2)
    threshold: float = Field(gt=0.0, lt=1.0)
    collapse_window: Tuple[float, float]
    kink_window: Tuple[float, float]
    kink_probe: float = Field(gt=0.0)
    reference_mu0sq_final: float
    t_R: Optional[float] = Field(default=None, ge=0.0)
    plots: bool = True


class OracleSettings(_Strict):
    musq_initial: float = Field(gt=0.0)
    musq_final: float
    tauQ: float = Field(gt=0.0)
    t_after: float = Field(ge=0.0)
    k_points: int = Field(ge=2)
    r_max: int = Field(ge=1)
    ed_L: int = Field(ge=2)
    ed_d: int = Field(ge=2)
    ed_lambda0: float = Field(ge=0.0)
    ed_mu0sq_initial: float
    ed_mu0sq_final: float
    ed_t_max: float = Field(ge=0.0)
    ed_samples: int = Field(ge=1)


class CampaignConfig(_Strict):
    model: ModelSettings
    campaign: CampaignSettings
    vumps: VumpsSettings
    evolver: EvolverSettings
    sweep: SweepSettings
    analysis: AnalysisSettings
    oracle: OracleSettings
    output_dir: Path
    workers: int = Field(default=1, ge=1)
    resume: bool = False

    @model_validator(mode="after")
    def _ramp_goes_down(self):
        if any(m > self.model.mu0sq_initial for m in self.campaign.mu0sq_final):
            raise ValueError("every mu0sq_final must be at or below model.mu0sq_initial")
        return self

    @property
    def t_R(self) -> float:
        return self.analysis.t_R if self.analysis.t_R is not None else self.campaign.t_relax

    def physical(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude=NON_PHYSICAL_KEYS)


def _hash(payload: Dict[str, Any]) -> str:
    return hashlib.sha256(orjson.dumps(payload, option=orjson.OPT_SORT_KEYS)).hexdigest()


def config_hash(config: CampaignConfig) -> str:
    """SHA-256 of the physical parameters; output dir, workers and resume excluded"""
    return _hash(config.physical())


def run_hash(config: CampaignConfig, tauQ: float, chi: int, mu0sq_final: float) -> str:
    """Identity of a single quench run, independent of the rest of the campaign grid"""
    payload = {
        "model": config.model.model_dump(mode="json"),
        "vumps": config.vumps.model_dump(mode="json"),
        "evolver": config.evolver.model_dump(mode="json"),
        "t_relax": config.campaign.t_relax,
        "tauQ": float(tauQ),
        "chi": int(chi),
        "mu0sq_final": float(mu0sq_final),
    }
    return _hash(payload)


def ground_hash(config: CampaignConfig, mu0sq: float, chi: int, bias: float) -> str:
    """Identity of a cached ground state"""
    payload = {
        "lambda0": config.model.lambda0,
        "d": config.model.d,
        "vumps": config.vumps.model_dump(mode="json"),
        "mu0sq": float(mu0sq),
        "chi": int(chi),
        "bias": float(bias),
    }
    return _hash(payload)


def load_campaign_config(path: Optional[Path] = None, profile: Optional[str] = None,
                         overrides: Optional[Dict[str, Any]] = None) -> CampaignConfig:
    """Profile <- YAML file <- overrides, deep-merged and validated"""
    try:
        raw = get_environment_config(profile)
    except ValueError as e:
        raise ConfigurationError(str(e), field="profile") from e

    if path is not None:
        path = Path(path)
        try:
            with open(path, "r") as f:
                loaded = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigurationError(f"Cannot read config file {path}: {e}", field="config") from e
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"Config file {path} must hold a mapping", field="config")
        raw = deep_merge(raw, loaded)

    if overrides:
        raw = deep_merge(raw, {k: v for k, v in overrides.items() if v is not None})

    try:
        config = CampaignConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise ConfigurationError(f"Invalid configuration at {field}: {first['msg']}",
                                 field=field, errors=len(e.errors())) from e

    logger.debug(f"Loaded campaign config {config_hash(config)[:12]} (profile={profile})")
    return config


__all__ = [
    "ModelSettings",
    "CampaignSettings",
    "VumpsSettings",
    "EvolverSettings",
    "SweepSettings",
    "AnalysisSettings",
    "OracleSettings",
    "CampaignConfig",
    "config_hash",
    "run_hash",
    "ground_hash",
    "load_campaign_config",
]
