"""
Exception hierarchy shared by the solver, analysis, oracle and harness layers.

Every numerical failure derives from PhiFourError so the harness can record a
failed run and carry on with the rest of a campaign.
"""

from typing import Any, Dict, Optional


class PhiFourError(Exception):
    """Base class for all domain errors"""

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        return {"error_type": type(self).__name__, "message": str(self), **self.details}


class ConfigurationError(PhiFourError):
    """Invalid or inconsistent campaign configuration"""


class CanonicalizationError(PhiFourError):
    """Gauge fixing of a uniform MPS did not converge"""


class DegenerateSpectrumError(CanonicalizationError):
    """Dominant transfer-matrix eigenvalue is (numerically) degenerate"""


class EnvironmentSolveError(PhiFourError):
    """Linear solve for the Hamiltonian environments stagnated"""

    def __init__(self, message: str, residual: float, **details: Any):
        super().__init__(message, residual=residual, **details)
        self.residual = residual


class SingularCenterError(PhiFourError):
    """All singular values of the center matrix fell below the cutoff"""


class NormDriftError(PhiFourError):
    """State norm drifted beyond the allowed bound during one step"""


class EvolutionError(PhiFourError):
    """A time step failed; carries the time and step index of the failure"""

    def __init__(self, message: str, time: float, step: int, **details: Any):
        super().__init__(message, time=time, step=step, **details)
        self.time = time
        self.step = step


class DimensionCapError(PhiFourError):
    """Hilbert space of an exact-diagonalization request exceeds the cap"""


class QuadratureError(PhiFourError):
    """Adaptive quadrature did not reach the requested accuracy"""


class IntegrationError(PhiFourError):
    """ODE integration did not meet its tolerance"""


class UnstableModeError(PhiFourError):
    """Negative squared frequency encountered where a real one is required"""


class NoCrossingError(PhiFourError):
    """A ratio series never crosses the requested threshold"""


class NegativeDefectSignalError(PhiFourError):
    """Time-averaged correlator lies below the vacuum reference"""

    def __init__(self, message: str, g2_bar: float, g2_vacuum: float,
                 vev: Optional[float] = None):
        super().__init__(message, g2_bar=g2_bar, g2_vacuum=g2_vacuum, vev=vev)
        self.g2_bar = g2_bar
        self.g2_vacuum = g2_vacuum


class FitError(PhiFourError):
    """Non-linear fit could not be set up or failed outright"""


class MixedConfigError(PhiFourError):
    """Analysis inputs were produced by different configurations"""


__all__ = [
    "PhiFourError",
    "ConfigurationError",
    "CanonicalizationError",
    "DegenerateSpectrumError",
    "EnvironmentSolveError",
    "SingularCenterError",
    "NormDriftError",
    "EvolutionError",
    "DimensionCapError",
    "QuadratureError",
    "IntegrationError",
    "UnstableModeError",
    "NoCrossingError",
    "NegativeDefectSignalError",
    "FitError",
    "MixedConfigError",
]
